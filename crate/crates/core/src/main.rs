use clap::Parser;

fn main() {
    let cli = mgapprox::cli::Cli::parse();
    std::process::exit(mgapprox::cli::run(cli));
}
