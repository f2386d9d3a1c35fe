//! Config-driven command line front end.
//!
//! ```text
//! mgapprox <check|decompose|simulate|verify|oracle|report> --config run.toml
//!          [--seed U64] [--workers N] [--out DIR]
//! ```
//!
//! Exit codes: 0 when everything passes, 1 when a verification fails, 2 on
//! input or numerical errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::chain::{center_observable, validate_chain, ChainTolerances, FiniteChain, Observable};
use crate::decomposition::{
    diffusion_matrix, limit_kernel, lq_exponent, poisson_kernel, remainder_second_moment, DiffusionMatrix,
    MartingaleKernel,
};
use crate::error::{Error, Result};
use crate::io;
use crate::oracle::{enumerate_paths, exact_moments, exact_sn_covariance, DEFAULT_MAX_PATHS};
use crate::resolvent::{estimate_growth, partial_sums, resolvent_norm_scan, PartialSumTable};
use crate::simulate::{parallel_paths, path_functionals, stream_path, PathKey, TransitionSampler};
use crate::verify::{
    self, block_decomposition_diagnostic, centered_drift_check, make_schedule, marginal_gof,
    maximal_inequality_check, sup_decay_check, DecayQuantity, DecaySamples, GofSettings, VerificationReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mgapprox", version, about = "Martingale approximation laboratory for finite Markov chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `simulation.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for path sampling. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Validate the chain and observable, print pi and the period.
    Check,
    /// Compute h, H, D, Lambda, growth and exponent reports.
    Decompose,
    /// Sample paths and write per-path summaries and traces.
    Simulate,
    /// Run the verification suite.
    Verify,
    /// Exact path enumeration and matrix-power moments.
    Oracle,
    /// Summarize results already written to the output directory.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Decompose => "decompose",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Oracle => "oracle",
            Command::Report => "report",
        }
    }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSource {
    pub matrix: Option<Vec<Vec<f64>>>,
    pub file: Option<PathBuf>,
}

impl MatrixSource {
    fn load(&self, base: &Path, what: &str) -> Result<DMatrix<f64>> {
        match (&self.matrix, &self.file) {
            (Some(rows), None) => io::matrix_from_rows(rows).map_err(|e| Error::Config(format!("{what}: {e}"))),
            (None, Some(file)) => io::read_matrix(&base.join(file)),
            _ => Err(Error::Config(format!("{what}: give exactly one of `matrix` or `file`"))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    #[serde(flatten)]
    pub source: MatrixSource,
    /// Subtract the pi-mean; otherwise the input must already be centered.
    #[serde(default = "yes")]
    pub center: bool,
    #[serde(default = "default_p")]
    pub p: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    pub stochastic: f64,
    pub stationary: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        let t = ChainTolerances::default();
        Self {
            stochastic: t.stochastic,
            stationary: t.stationary,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolventConfig {
    pub k_max: usize,
    pub tol: f64,
    pub growth_range: [usize; 2],
    pub scan_k_max: usize,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        Self {
            k_max: 60,
            tol: 1e-12,
            growth_range: [1, 1024],
            scan_k_max: 20,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub starts: Vec<usize>,
    pub n_list: Vec<usize>,
    pub n_paths: usize,
    pub seed: Option<u64>,
    /// Full traces dumped by `simulate`.
    pub trace_paths: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            starts: vec![0],
            n_list: vec![100, 1000, 10000],
            n_paths: 1000,
            seed: None,
            trace_paths: 2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub t_grid: Vec<f64>,
    pub significance: f64,
    pub gof_n: usize,
    pub gof_paths: usize,
    pub decay_threshold: f64,
    pub drift_threshold: f64,
    pub drift_burn_in: usize,
    pub drift_n_list: Vec<usize>,
    pub maximal_n_list: Vec<usize>,
    pub lambda_points: usize,
    pub k_sweep_max: u32,
    pub r: u32,
    pub gamma: f64,
    pub beta: f64,
    pub block_j: Vec<u64>,
    pub block_paths: usize,
    pub oracle_n: usize,
    pub max_paths: u64,
    pub covariance_n: usize,
    pub covariance_rel_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            t_grid: verify::DEFAULT_T_GRID.to_vec(),
            significance: verify::DEFAULT_SIGNIFICANCE,
            gof_n: 4096,
            gof_paths: 2000,
            decay_threshold: verify::DEFAULT_DECAY_THRESHOLD,
            drift_threshold: verify::DEFAULT_DECAY_THRESHOLD,
            drift_burn_in: 16,
            drift_n_list: (4..=14).map(|j| 1usize << j).collect(),
            maximal_n_list: (0..=10).map(|j| 1usize << j).collect(),
            lambda_points: 20,
            k_sweep_max: 6,
            r: 2,
            gamma: 0.5,
            beta: 1.05,
            block_j: vec![3, 10, 30, 100],
            block_paths: 50,
            oracle_n: 6,
            max_paths: DEFAULT_MAX_PATHS,
            covariance_n: 10_000,
            covariance_rel_tol: 0.01,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentConfig {
    /// Overrides `observable.p`.
    pub p: Option<f64>,
    /// Overrides the fitted growth exponent.
    pub alpha: Option<f64>,
    pub q_selector: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self {
            p: None,
            alpha: None,
            q_selector: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub chain: MatrixSource,
    pub observable: ObservableConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub resolvent: ResolventConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub moments: MomentConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// SHA-256 of the config text.
    #[serde(skip)]
    pub hash: String,
}

fn yes() -> bool {
    true
}

fn default_p() -> f64 {
    crate::chain::DEFAULT_P_EXPONENT
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.hash = hex(&Sha256::digest(text.as_bytes()));
        for (what, src) in [("chain", &cfg.chain), ("observable", &cfg.observable.source)] {
            if let Some(f) = &src.file {
                let p = base_dir.join(f);
                if !p.is_file() {
                    return Err(Error::Config(format!("{what} file {} does not exist", p.display())));
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn tolerances(&self) -> ChainTolerances {
        ChainTolerances {
            stochastic: self.tolerances.stochastic,
            stationary: self.tolerances.stationary,
        }
    }

    pub fn build_chain(&self) -> Result<FiniteChain> {
        validate_chain(self.chain.load(&self.base_dir, "chain")?, &self.tolerances())
    }

    pub fn build_observable(&self, chain: &FiniteChain) -> Result<Observable> {
        let raw = self.observable.source.load(&self.base_dir, "observable")?;
        let g = if self.observable.center {
            center_observable(&raw, chain)?
        } else {
            Observable::new(raw, chain)?
        };
        g.with_p_exponent(self.observable.p)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// entry point

/// Resolved invocation: config plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub workers: usize,
    pub out: PathBuf,
}

impl Invocation {
    pub fn new(config: RunConfig, seed: Option<u64>, workers: Option<usize>, out: Option<PathBuf>) -> Self {
        let out = out.unwrap_or_else(|| config.base_dir.join(&config.output.dir));
        let seed = seed.or(config.simulation.seed);
        let workers = workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        Self {
            config,
            seed,
            workers,
            out,
        }
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (--seed or simulation.seed)".into()))
    }

    fn subdir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out.join(name);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn write_manifest(&self, command: Command) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        let pairs = vec![
            ("command".to_string(), command.name().to_string()),
            ("config_sha256".to_string(), self.config.hash.clone()),
            (
                "seed".to_string(),
                self.seed.map_or("none".to_string(), |s| s.to_string()),
            ),
            ("workers".to_string(), self.workers.to_string()),
            ("mgapprox_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("rng".to_string(), "chacha8 stream=path_id word=2*step".to_string()),
        ];
        fs::write(
            self.out.join(format!("manifest_{}.txt", command.name())),
            io::format_kv(&pairs),
        )?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = (|| -> Result<i32> {
        if cli.command == Command::Report {
            let out = match (&cli.out, &cli.config) {
                (Some(o), _) => o.clone(),
                (None, Some(c)) => Invocation::new(RunConfig::load(c)?, None, Some(1), None).out,
                (None, None) => return Err(Error::Config("report needs --out or --config".into())),
            };
            return cmd_report(&out);
        }
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required".into()))?;
        let inv = Invocation::new(RunConfig::load(path)?, cli.seed, cli.workers, cli.out.clone());
        match cli.command {
            Command::Check => cmd_check(&inv),
            Command::Decompose => cmd_decompose(&inv).map(|_| EXIT_OK),
            Command::Simulate => cmd_simulate(&inv),
            Command::Verify => cmd_verify(&inv).map(|o| {
                for rep in &o.reports {
                    println!("{} {}", rep.status(), rep.test);
                }
                o.exit_code()
            }),
            Command::Oracle => cmd_oracle(&inv),
            Command::Report => unreachable!(),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

// ---------------------------------------------------------------------------
// check

pub fn cmd_check(inv: &Invocation) -> Result<i32> {
    let chain = inv.config.build_chain()?;
    let g = inv.config.build_observable(&chain)?;
    let pi: Vec<String> = chain.pi().iter().map(|v| format!("{v:e}")).collect();
    let pairs = vec![
        ("n_states".to_string(), chain.n_states().to_string()),
        ("pi".to_string(), pi.join(" ")),
        ("period".to_string(), chain.period().to_string()),
        ("period_flag".to_string(), chain.period_flag().to_string()),
        ("stationarity_residual".to_string(), format!("{:e}", chain.stationarity_residual())),
        (
            "pi_crosscheck_gap".to_string(),
            chain.pi_crosscheck().map_or("not converged".into(), |v| format!("{v:e}")),
        ),
        ("observable_dim".to_string(), g.dim().to_string()),
        ("observable_max_abs".to_string(), format!("{:e}", g.max_abs())),
        ("p_exponent".to_string(), g.p_exponent().to_string()),
    ];
    print!("{}", io::format_kv(&pairs));
    if chain.period_flag() {
        println!("note = periodic chain: mixing-based diagnostics degrade");
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// decompose

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub chain: FiniteChain,
    pub g: Observable,
    pub kernel: MartingaleKernel,
    pub exact_kernel: MartingaleKernel,
    pub diffusion: DiffusionMatrix,
    pub table: PartialSumTable,
    pub c_hat: f64,
    pub alpha_hat: f64,
}

impl Decomposition {
    /// `max_x |h(x)|` for the Poisson solution.
    pub fn max_abs_h(&self) -> f64 {
        self.exact_kernel
            .potential()
            .row_iter()
            .map(|r| r.norm())
            .fold(0.0, f64::max)
    }
}

fn partial_sum_horizon(cfg: &RunConfig) -> usize {
    let v = &cfg.verify;
    [
        cfg.resolvent.growth_range[1],
        v.drift_n_list.iter().copied().max().unwrap_or(1),
        v.maximal_n_list.iter().copied().max().unwrap_or(1) * 2,
        cfg.simulation.n_list.iter().copied().max().unwrap_or(1),
    ]
    .into_iter()
    .max()
    .unwrap_or(1)
}

/// Builds every decomposition artifact in memory.
pub fn decompose(cfg: &RunConfig) -> Result<(Decomposition, Vec<VerificationReport>)> {
    let chain = cfg.build_chain()?;
    let g = cfg.build_observable(&chain)?;
    let rc = &cfg.resolvent;
    let kernel = limit_kernel(&chain, &g, rc.k_max, rc.tol)?;
    let exact_kernel = poisson_kernel(&chain, &g)?;
    let diffusion = diffusion_matrix(&chain, &kernel)?;
    let table = partial_sums(&chain, &g, partial_sum_horizon(cfg))?;
    let growth = estimate_growth(&table, (rc.growth_range[0], rc.growth_range[1]))?;

    let mut reports = Vec::new();

    let mut rep = VerificationReport {
        test: "decomposition".into(),
        passed: true,
        columns: vec!["n".into(), "norm".into()],
        ..Default::default()
    };
    rep.kv("kernel_source", kernel.source().as_str());
    rep.kv("final_epsilon", kernel.final_epsilon.unwrap_or(f64::NAN));
    rep.kv("cauchy_gap", kernel.cauchy_gap);
    rep.kv("route_gap", kernel.route_gap.unwrap_or(f64::NAN));
    rep.kv("martingale_defect", kernel.martingale_defect(&chain));
    rep.kv("rank", diffusion.rank);
    rep.kv("factor_error", diffusion.factor_error());
    rep.kv("alpha_hat", growth.alpha_hat);
    rep.kv("c_hat", growth.c_hat);
    rep.kv("growth_r2", growth.residual_r2);
    rep.kv("growth_degenerate", growth.degenerate);
    rep.kv(
        "growth_excluded_zero",
        format!("{:?}", growth.excluded_zero),
    );
    if diffusion.is_degenerate() {
        rep.notes
            .push("degenerate diffusion (rank 0): verification uses sup-norm decay instead of normality".into());
    }
    if chain.period_flag() {
        rep.notes.push(format!("periodic chain (period {})", chain.period()));
    }
    rep.notes
        .push("c_hat is an empirical constant over the fitted range, not a theoretical constant".into());
    rep.rows = (0..=table.n_max())
        .filter(|n| n.is_power_of_two())
        .map(|n| vec![n as f64, table.norm(n)])
        .collect();
    reports.push(rep);

    let p = cfg.moments.p.unwrap_or(g.p_exponent());
    let alpha = cfg.moments.alpha.unwrap_or_else(|| growth.alpha_hat.max(ALPHA_FLOOR));
    let mut rep = VerificationReport {
        test: "exponents".into(),
        ..Default::default()
    };
    rep.kv("p", p);
    rep.kv("alpha", alpha);
    rep.kv("alpha_source", if cfg.moments.alpha.is_some() { "config" } else { "fit (floored)" });
    match lq_exponent(p, alpha, cfg.moments.q_selector) {
        Ok(e) => {
            rep.passed = true;
            rep.kv("q_bound", e.q_bound);
            rep.kv("q", e.q);
            rep.kv("a", e.a);
            rep.kv("b", e.b);
            rep.kv("a_minus_b_half_plus_alpha_b", e.drift);
        }
        Err(e) => {
            rep.passed = false;
            rep.notes.push(e.to_string());
        }
    }
    reports.push(rep);

    let c_hat = growth.c_hat;
    let alpha_hat = growth.alpha_hat;
    Ok((
        Decomposition {
            chain,
            g,
            kernel,
            exact_kernel,
            diffusion,
            table,
            c_hat,
            alpha_hat,
        },
        reports,
    ))
}

/// Bounded partial sums give a fitted slope near 0; the exponent arithmetic
/// needs `alpha > 0`, and the growth condition at 0 implies it at any small
/// positive value.
const ALPHA_FLOOR: f64 = 1e-3;

fn kernel_rows(chain: &FiniteChain, kernel: &MartingaleKernel) -> Vec<Vec<f64>> {
    let n = chain.n_states();
    let mut rows = Vec::new();
    for x in 0..n {
        for y in 0..n {
            if let Some(h) = kernel.get(x, y) {
                let mut row = vec![x as f64, y as f64, chain.q()[(x, y)]];
                row.extend_from_slice(h);
                rows.push(row);
            }
        }
    }
    rows
}

fn component_columns(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|c| format!("{prefix}{c}")).collect()
}

pub fn cmd_decompose(inv: &Invocation) -> Result<Decomposition> {
    let (dec, reports) = decompose(&inv.config)?;
    let dir = inv.subdir("decompose")?;
    inv.write_manifest(Command::Decompose)?;
    io::write_matrix(&dir.join("h.txt"), dec.exact_kernel.potential())?;
    io::write_matrix(&dir.join("h_eps.txt"), dec.kernel.potential())?;
    io::write_matrix(&dir.join("D.txt"), &dec.diffusion.d)?;
    io::write_matrix(&dir.join("Lambda.txt"), &dec.diffusion.lambda)?;
    let d = dec.g.dim();
    let mut cols: Vec<String> = vec!["x".into(), "y".into(), "q".into()];
    cols.extend(component_columns("H", d));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    io::write_table(&dir.join("kernel.tsv"), &cols, &kernel_rows(&dec.chain, &dec.kernel))?;
    let norms: Vec<Vec<f64>> = (1..=dec.table.n_max())
        .map(|n| vec![n as f64, dec.table.norm(n)])
        .collect();
    io::write_table(&dir.join("growth_norms.tsv"), &["n", "norm"], &norms)?;
    let scan = resolvent_norm_scan(&dec.chain, &dec.g, inv.config.resolvent.scan_k_max)?;
    let scan_rows: Vec<Vec<f64>> = scan.points.iter().map(|&(dl, v)| vec![dl, v]).collect();
    io::write_table(&dir.join("resolvent_scan.tsv"), &["delta", "norm"], &scan_rows)?;

    let mut summary = Vec::new();
    for rep in &reports {
        fs::write(dir.join(format!("{}.txt", rep.test)), rep.to_kv_text())?;
        summary.push((rep.test.clone(), rep.status().to_string()));
    }
    summary.push((
        "scan_exponent".into(),
        scan.exponent.map_or("none".into(), |e| e.to_string()),
    ));
    fs::write(dir.join("summary.txt"), io::format_kv(&summary))?;
    for rep in &reports {
        print!("{}", rep.to_kv_text());
    }
    Ok(dec)
}

// ---------------------------------------------------------------------------
// simulate

pub fn cmd_simulate(inv: &Invocation) -> Result<i32> {
    let seed = inv.require_seed()?;
    let (dec, _) = decompose(&inv.config)?;
    let sim = &inv.config.simulation;
    let dir = inv.subdir("simulate")?;
    inv.write_manifest(Command::Simulate)?;
    let mut n_list = sim.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    let n_max = *n_list.last().ok_or_else(|| Error::Config("simulation.n_list is empty".into()))?;
    let sampler = TransitionSampler::new(&dec.chain);
    let d = dec.g.dim();

    let mut cols: Vec<String> = vec!["start".into(), "path_id".into(), "n".into()];
    cols.extend(component_columns("S", d));
    cols.extend(component_columns("M", d));
    cols.push("max_R_scaled".into());
    cols.push("max_S_scaled".into());
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();

    let mut kv = vec![("seed".to_string(), seed.to_string())];
    for &start in &sim.starts {
        let summaries = parallel_paths(sim.n_paths, inv.workers, |id| {
            stream_path(&sampler, &dec.g, &dec.exact_kernel, start, &n_list, PathKey::new(seed, id))
        })?;
        let mut rows = Vec::new();
        for (id, s) in summaries.iter().enumerate() {
            for (i, &n) in n_list.iter().enumerate() {
                let sc = 1.0 / (n.max(1) as f64).sqrt();
                let mut row = vec![start as f64, id as f64, n as f64];
                row.extend(&s.s_at[i]);
                row.extend(&s.m_at[i]);
                row.push(s.max_r[i] * sc);
                row.push(s.max_s[i] * sc);
                rows.push(row);
            }
        }
        io::write_table(&dir.join(format!("paths_start{start}.tsv")), &cols, &rows)?;

        for id in 0..sim.trace_paths.min(sim.n_paths) as u64 {
            let path = sampler.path(start, n_max, PathKey::new(seed, id));
            let tr = path_functionals(&path, &dec.g, &dec.exact_kernel, &dec.table)?;
            let mut tcols: Vec<String> = vec!["k".into(), "state".into()];
            tcols.extend(component_columns("S", d));
            tcols.extend(component_columns("M", d));
            tcols.extend(component_columns("R", d));
            let tcols: Vec<&str> = tcols.iter().map(String::as_str).collect();
            let trows: Vec<Vec<f64>> = (0..=tr.n)
                .map(|k| {
                    let mut row = vec![k as f64, tr.states[k] as f64];
                    row.extend(tr.s.row(k));
                    row.extend(tr.m.row(k));
                    row.extend(tr.r.row(k));
                    row
                })
                .collect();
            io::write_table(&dir.join(format!("trace_start{start}_path{id}.tsv")), &tcols, &trows)?;
        }
        kv.push((format!("start{start}.paths"), sim.n_paths.to_string()));
        kv.push((format!("start{start}.n_max"), n_max.to_string()));
    }
    fs::write(dir.join("summary.txt"), io::format_kv(&kv))?;
    print!("{}", io::format_kv(&kv));
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// verify

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub reports: Vec<VerificationReport>,
    pub dir: PathBuf,
}

impl VerifyOutcome {
    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            EXIT_OK
        } else {
            EXIT_FAIL
        }
    }
}

fn maximal_report(dec: &Decomposition, v: &VerifyConfig) -> Result<VerificationReport> {
    let n_max = v.maximal_n_list.iter().copied().max().unwrap_or(1);
    let lambdas = verify::default_lambda_grid(&dec.table, n_max, v.lambda_points);
    let ks: Vec<u32> = (0..=v.k_sweep_max).collect();
    let (res, note) = match maximal_inequality_check(&dec.chain, &dec.table, dec.c_hat, &v.maximal_n_list, &lambdas, &ks)
    {
        Err(Error::HypothesisUnmet { provided, required }) => (
            maximal_inequality_check(&dec.chain, &dec.table, required, &v.maximal_n_list, &lambdas, &ks)?,
            Some(format!(
                "fitted C = {provided:e} did not dominate |T_n|^2/n over the table; recomputed C = {required:e}"
            )),
        ),
        other => (other?, None),
    };
    let mut rep = res.report();
    rep.notes.extend(note);
    Ok(rep)
}

fn oracle_reports(dec: &Decomposition, starts: &[usize], v: &VerifyConfig) -> Result<Vec<VerificationReport>> {
    let mut out = Vec::new();
    let chain = &dec.chain;
    let states = chain.n_states();
    let n = v.oracle_n;
    if n >= 1 && (states as f64).powi(n as i32) <= v.max_paths as f64 {
        let mut rep = VerificationReport {
            test: "oracle_enumeration".into(),
            columns: vec!["start".into(), "n".into(), "mean_r2".into(), "mean_m_norm".into(), "total_prob".into()],
            ..Default::default()
        };
        let mut r2_avg = vec![0.0; n + 1];
        let mut mm1 = DMatrix::zeros(dec.g.dim(), dec.g.dim());
        let mut worst_mean_m = 0.0f64;
        let mut worst_total = 0.0f64;
        for x in 0..states {
            for k in 1..=n {
                let dist = enumerate_paths(chain, &dec.g, &dec.exact_kernel, x, k, v.max_paths)?;
                let mo = exact_moments(&dist);
                let mean_m = mo.mean_m.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst_mean_m = worst_mean_m.max(mean_m);
                worst_total = worst_total.max((dist.total_probability() - 1.0).abs());
                r2_avg[k] += chain.pi()[x] * mo.mean_r2;
                if k == 1 {
                    mm1 += &mo.mm_t * chain.pi()[x];
                }
                if starts.contains(&x) {
                    rep.rows.push(vec![x as f64, k as f64, mo.mean_r2, mean_m, dist.total_probability()]);
                }
            }
        }
        let mut worst_r2 = 0.0f64;
        for (k, avg) in r2_avg.iter().enumerate().skip(1) {
            let exact = remainder_second_moment(chain, &dec.g, k)?;
            worst_r2 = worst_r2.max((avg - exact).abs());
        }
        let d_gap = (&mm1 - &dec.diffusion.d).amax();
        rep.kv("n_max", n);
        rep.kv("remainder_moment_gap", worst_r2);
        rep.kv("m1_vs_D_gap", d_gap);
        rep.kv("max_mean_m", worst_mean_m);
        rep.kv("max_probability_defect", worst_total);
        rep.passed = worst_r2 <= 1e-10 && d_gap <= 1e-10 && worst_mean_m <= 1e-10 && worst_total <= 1e-12;
        out.push(rep);
    }

    let cov = exact_sn_covariance(chain, &dec.g, v.covariance_n)? / v.covariance_n as f64;
    let gap = (&cov - &dec.diffusion.d).amax();
    let scale = dec.diffusion.d.amax();
    let mut rep = VerificationReport {
        test: "sn_covariance".into(),
        ..Default::default()
    };
    rep.kv("n", v.covariance_n);
    rep.kv("gap", gap);
    rep.kv("d_sup", scale);
    // a degenerate D leaves only an O(1/n) absolute floor
    let allowed = if scale > 0.0 {
        v.covariance_rel_tol * scale
    } else {
        v.covariance_rel_tol
    };
    rep.kv("allowed", allowed);
    rep.passed = gap <= allowed;
    if chain.period_flag() {
        rep.notes.push("periodic chain: Cov(S_n)/n oscillates around D".into());
    }
    out.push(rep);
    Ok(out)
}

/// Runs the full suite, writes reports under `<out>/verify`, and returns them.
pub fn cmd_verify(inv: &Invocation) -> Result<VerifyOutcome> {
    let seed = inv.require_seed()?;
    let cfg = &inv.config;
    let v = &cfg.verify;
    let sim = &cfg.simulation;
    let (dec, mut reports) = decompose(cfg)?;
    let dir = inv.subdir("verify")?;
    inv.write_manifest(Command::Verify)?;
    for &s in &sim.starts {
        if s >= dec.chain.n_states() {
            return Err(Error::Config(format!("start state {s} out of range")));
        }
    }

    reports.push(maximal_report(&dec, v)?);
    let drift = centered_drift_check(&dec.table, &v.drift_n_list, v.drift_burn_in, v.drift_threshold)?;
    reports.push(drift.report());
    reports.extend(oracle_reports(&dec, &sim.starts, v)?);

    let sampler = TransitionSampler::new(&dec.chain);
    let mut n_list = sim.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    let n_max = *n_list.last().ok_or_else(|| Error::Config("simulation.n_list is empty".into()))?;
    let max_h = dec.max_abs_h();

    for (si, &start) in sim.starts.iter().enumerate() {
        // disjoint seeds per start and per test
        let base = seed.wrapping_add((si as u64) << 32);
        let tag = |r: &mut VerificationReport| {
            r.test = format!("{}_start{start}", r.test);
            r.kv("start", start);
        };

        if dec.diffusion.is_degenerate() {
            let summaries = parallel_paths(sim.n_paths, inv.workers, |id| {
                stream_path(&sampler, &dec.g, &dec.exact_kernel, start, &n_list, PathKey::new(base ^ 0x51, id))
            })?;
            let samples = DecaySamples::from_summaries(&summaries, DecayQuantity::ScaledPath, &n_list)?;
            let mut rep = sup_decay_check(&samples, v.decay_threshold, None)?.report();
            rep.notes
                .push("rank-0 diffusion matrix: normality test replaced by sup-norm decay of the scaled path".into());
            rep.kv("seed", base ^ 0x51);
            rep.kv("n_paths", sim.n_paths);
            tag(&mut rep);
            reports.push(rep);
        } else {
            let settings = GofSettings {
                n: v.gof_n,
                n_paths: v.gof_paths,
                t_grid: v.t_grid.clone(),
                seed: base ^ 0x61,
                significance: v.significance,
                workers: inv.workers,
            };
            let mut rep = marginal_gof(&dec.chain, &dec.g, &dec.exact_kernel, &dec.diffusion, start, &settings)?.report();
            tag(&mut rep);
            reports.push(rep);
        }

        let summaries = parallel_paths(sim.n_paths, inv.workers, |id| {
            stream_path(&sampler, &dec.g, &dec.exact_kernel, start, &n_list, PathKey::new(base ^ 0x71, id))
        })?;
        let samples = DecaySamples::from_summaries(&summaries, DecayQuantity::Remainder, &n_list)?;
        let bound: Vec<f64> = n_list.iter().map(|&n| 2.0 * max_h / (n as f64).sqrt()).collect();
        let mut rep = sup_decay_check(&samples, v.decay_threshold, Some(bound))?.report();
        rep.kv("seed", base ^ 0x71);
        rep.kv("n_paths", sim.n_paths);
        tag(&mut rep);
        reports.push(rep);

        let traces = parallel_paths(v.block_paths, inv.workers, |id| {
            let path = sampler.path(start, n_max, PathKey::new(base ^ 0x81, id));
            path_functionals(&path, &dec.g, &dec.exact_kernel, &dec.table)
        })?;
        let samples = DecaySamples::from_traces(&traces, DecayQuantity::CenteredGap, &n_list)?;
        let mut rep = sup_decay_check(&samples, v.decay_threshold, None)?.report();
        rep.kv("seed", base ^ 0x81);
        rep.kv("n_paths", v.block_paths);
        tag(&mut rep);
        reports.push(rep);

        let mut rep = VerificationReport {
            test: "block_decomposition".into(),
            columns: ["path", "j", "n_j", "lhs", "endpoint", "martingale", "sum", "holds"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ..Default::default()
        };
        let alpha = cfg.moments.alpha.unwrap_or(dec.alpha_hat.max(ALPHA_FLOOR));
        let p = cfg.moments.p.unwrap_or(dec.g.p_exponent());
        let mut all_hold = true;
        for &j in &v.block_j {
            let sched = make_schedule(v.r, v.gamma, v.beta, j, alpha, p)?;
            if sched.n_j as usize > n_max {
                continue;
            }
            rep.kv(
                &format!("j{j}"),
                format!(
                    "n_j={} m_j={} ell_j={} exp_endpoint={} exp_oscillation={}",
                    sched.n_j, sched.m_j, sched.ell_j, sched.endpoint_exponent, sched.oscillation_exponent
                ),
            );
            for (id, tr) in traces.iter().enumerate() {
                let b = block_decomposition_diagnostic(tr, &sched)?;
                all_hold &= b.holds;
                rep.rows.push(vec![
                    id as f64,
                    j as f64,
                    sched.n_j as f64,
                    b.lhs,
                    b.endpoint_term,
                    b.martingale_term,
                    b.sum_term,
                    if b.holds { 1.0 } else { 0.0 },
                ]);
            }
        }
        rep.passed = all_hold;
        rep.kv("seed", base ^ 0x81);
        tag(&mut rep);
        reports.push(rep);
    }

    let mut summary = Vec::new();
    for rep in &reports {
        fs::write(dir.join(format!("{}.txt", rep.test)), rep.to_kv_text())?;
        if !rep.rows.is_empty() {
            fs::write(dir.join(format!("{}.tsv", rep.test)), rep.to_table_text())?;
        }
        summary.push((rep.test.clone(), rep.status().to_string()));
    }
    fs::write(dir.join("summary.txt"), io::format_kv(&summary))?;
    Ok(VerifyOutcome { reports, dir })
}

// ---------------------------------------------------------------------------
// oracle

pub fn cmd_oracle(inv: &Invocation) -> Result<i32> {
    let cfg = &inv.config;
    let chain = cfg.build_chain()?;
    let g = cfg.build_observable(&chain)?;
    let kernel = poisson_kernel(&chain, &g)?;
    let dir = inv.subdir("oracle")?;
    inv.write_manifest(Command::Oracle)?;
    let d = g.dim();
    let mut cols: Vec<String> = vec!["probability".into()];
    cols.extend(component_columns("S", d));
    cols.extend(component_columns("M", d));
    cols.extend(component_columns("R", d));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut kv = Vec::new();
    let n = cfg.verify.oracle_n;
    for &start in &cfg.simulation.starts {
        let dist = enumerate_paths(&chain, &g, &kernel, start, n, cfg.verify.max_paths)?;
        io::write_table(&dir.join(format!("distribution_start{start}_n{n}.tsv")), &cols, &dist.rows())?;
        let mo = exact_moments(&dist);
        kv.push((format!("start{start}.atoms"), dist.atoms.len().to_string()));
        kv.push((format!("start{start}.mean_r2"), format!("{:e}", mo.mean_r2)));
        io::write_matrix(&dir.join(format!("cov_s_start{start}_n{n}.txt")), &mo.cov_s)?;
    }
    let cov = exact_sn_covariance(&chain, &g, cfg.verify.covariance_n)?;
    io::write_matrix(&dir.join("cov_sn_stationary.txt"), &cov)?;
    fs::write(dir.join("summary.txt"), io::format_kv(&kv))?;
    print!("{}", io::format_kv(&kv));
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// report

pub fn cmd_report(out: &Path) -> Result<i32> {
    let mut found = false;
    let mut failed = false;
    for sub in ["decompose", "verify"] {
        let path = out.join(sub).join("summary.txt");
        let Ok(text) = fs::read_to_string(&path) else {
            continue;
        };
        found = true;
        println!("[{sub}]");
        for (k, v) in io::parse_kv(&text) {
            failed |= v == "FAIL";
            println!("{v:>5}  {k}");
        }
    }
    if !found {
        return Err(Error::Config(format!("no summaries under {}", out.display())));
    }
    Ok(if failed { EXIT_FAIL } else { EXIT_OK })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_requires_one_source() {
        let text = "[chain]\nmatrix = [[0.5, 0.5], [0.5, 0.5]]\nfile = \"q.txt\"\n[observable]\nmatrix = [[1.0], [-1.0]]\n";
        // file missing on disk is caught first
        assert!(RunConfig::parse(text, Path::new("/nonexistent")).is_err());
        let text = "[chain]\n[observable]\nmatrix = [[1.0], [-1.0]]\n";
        let cfg = RunConfig::parse(text, Path::new(".")).unwrap();
        assert!(matches!(cfg.build_chain(), Err(Error::Config(_))));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let text = "[chain]\nmatrix = [[1.0]]\nbogus = 1\n[observable]\nmatrix = [[0.0]]\n";
        assert!(RunConfig::parse(text, Path::new(".")).is_err());
    }

    #[test]
    fn defaults_fill_in() {
        let text = "[chain]\nmatrix = [[0.5, 0.5], [0.5, 0.5]]\n[observable]\nmatrix = [[1.0], [-1.0]]\n";
        let cfg = RunConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(cfg.verify.t_grid, vec![0.25, 0.5, 1.0]);
        assert_eq!(cfg.verify.k_sweep_max, 6);
        assert_eq!(cfg.hash.len(), 64);
        let inv = Invocation::new(cfg, None, Some(3), None);
        assert!(inv.require_seed().is_err());
        assert_eq!(inv.workers, 3);
    }
}
