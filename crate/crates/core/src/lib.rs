//! Martingale approximation of additive functionals of finite-state Markov
//! chains.
//!
//! For a chain with kernel `Q`, stationary law `pi` and a centered observable
//! `g`, the crate computes the resolvent solution `h_eps`, the martingale
//! kernel `H(x,y) = h(y) - (Qh)(x)`, the diffusion matrix
//! `D = sum pi(x) Q(x,y) H(x,y) H(x,y)^T` and its factor, and checks the
//! invariance-principle consequences (remainder decay, centered drift,
//! maximal inequality) exactly or by reproducible Monte Carlo.

pub mod chain;
pub mod cli;
pub mod decomposition;
pub mod error;
pub mod io;
pub mod oracle;
pub mod reference;
pub mod resolvent;
pub mod simulate;
pub mod stats;
pub mod verify;

pub use chain::{center_observable, edge_measure, validate_chain, ChainTolerances, FiniteChain, Observable};
pub use decomposition::{
    diffusion_matrix, limit_kernel, lq_exponent, poisson_kernel, poisson_solve, remainder_second_moment,
    DiffusionMatrix, KernelSource, MartingaleKernel, MomentExponents,
};
pub use error::{Error, Result};
pub use oracle::{enumerate_paths, exact_moments, exact_sn_covariance, ExactDistribution, ExactMoments};
pub use resolvent::{
    estimate_growth, partial_sums, resolvent_norm_scan, resolvent_series, solve_resolvent, GrowthReport,
    PartialSumTable, ResolventSolution,
};
pub use simulate::{path_functionals, sample_brownian, sample_path, scaled_path, PathKey, PathTrace, ScaledPath};
pub use verify::{
    block_decomposition_diagnostic, centered_drift_check, make_schedule, marginal_gof, maximal_inequality_check,
    sup_decay_check, BlockSchedule, VerificationReport,
};
