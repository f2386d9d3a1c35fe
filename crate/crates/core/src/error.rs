use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("entry ({row},{col}) is not a finite non-negative probability: {value}")]
    InvalidEntry { row: usize, col: usize, value: f64 },

    #[error("NotStochastic: row {row} sums to {sum} (tolerance {tol})")]
    NotStochastic { row: usize, sum: f64, tol: f64 },

    #[error("Reducible: state {unreachable} is not mutually reachable with state 0")]
    Reducible { unreachable: usize },

    #[error("stationary distribution failed the stationarity check (|piQ - pi| = {residual})")]
    Stationarity { residual: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("observable is not pi-centered (column {column} has mean {mean})")]
    NotCentered { column: usize, mean: f64 },

    #[error("SolveFailure: {0}")]
    SolveFailure(String),

    #[error("NoConvergence: kernel gap did not fall below {tol} within {k_max} steps (last gaps {gaps:?})")]
    NoConvergence { tol: f64, k_max: usize, gaps: Vec<f64> },

    #[error("kernel routes disagree: L2(pi1) gap {gap} exceeds {bound}")]
    RouteMismatch { gap: f64, bound: f64 },

    #[error("InvalidRegime: {0}")]
    InvalidRegime(String),

    #[error("MissingEdge: kernel undefined on observed transition {from} -> {to}")]
    MissingEdge { from: usize, to: usize },

    #[error("DegenerateD: diffusion matrix has rank 0")]
    DegenerateD,

    #[error("HypothesisUnmet: int |T_n|^2 dpi / n reaches {required}, above C = {provided}")]
    HypothesisUnmet { provided: f64, required: f64 },

    #[error("TooLarge: enumeration needs {needed} paths, limit is {limit}")]
    TooLarge { needed: f64, limit: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config: {0}")]
    Config(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
