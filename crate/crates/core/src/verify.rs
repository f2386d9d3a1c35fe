//! Finite-`n` diagnostics for the invariance principles, the remainder and
//! centered-drift decay, the maximal inequality for `T_n`, and the block
//! decomposition of `max |R_i|`.
//!
//! Exact checks use the partial-sum table directly. Monte Carlo checks take
//! per-path summaries produced by [`crate::simulate`].

use std::fmt::Write as _;

use crate::chain::{FiniteChain, Observable};
use crate::decomposition::{DiffusionMatrix, MartingaleKernel};
use crate::error::{Error, Result};
use crate::resolvent::PartialSumTable;
use crate::simulate::{
    floor_index, norm, parallel_paths, stream_path, PathKey, PathSummary, PathTrace,
    TransitionSampler,
};
use crate::stats::{ks_standard_normal, percentile, sample_covariance};

pub const DEFAULT_T_GRID: [f64; 3] = [0.25, 0.5, 1.0];
pub const DEFAULT_SIGNIFICANCE: f64 = 0.01;
pub const DEFAULT_DECAY_THRESHOLD: f64 = 0.05;
pub const DEFAULT_K_SWEEP: [u32; 7] = [0, 1, 2, 3, 4, 5, 6];

/// Flat report: key-value summary plus one numeric table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationReport {
    pub test: String,
    pub passed: bool,
    pub summary: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    fn new(test: &str, columns: &[&str]) -> Self {
        Self {
            test: test.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn kv(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.summary
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }

    /// `key = value` lines.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "test = {}", self.test);
        let _ = writeln!(out, "status = {}", self.status());
        for (k, v) in &self.summary {
            let _ = writeln!(out, "{k} = {v}");
        }
        for note in &self.notes {
            let _ = writeln!(out, "note = {note}");
        }
        out
    }

    /// Tab-separated table with a header row.
    pub fn to_table_text(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join("\t"));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// block schedule

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSchedule {
    pub r: u32,
    pub gamma: f64,
    pub beta: f64,
    pub j: u64,
    pub n_j: u64,
    pub m_j: u64,
    pub ell_j: u64,
    /// `r (1 - 2 gamma alpha - (1 - gamma) beta)`, summable iff `> 1`.
    pub endpoint_exponent: f64,
    /// `r (p/2 - 1 - gamma p)`, summable iff `> 1`.
    pub oscillation_exponent: f64,
    pub endpoint_summable: bool,
    pub oscillation_summable: bool,
}

/// `ceil(x)` that snaps values within rounding of an integer onto it, so that
/// exact powers such as `27^{1/3}` are not pushed to the next integer.
fn ceil_snapped(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs().max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

pub fn make_schedule(r: u32, gamma: f64, beta: f64, j: u64, alpha: f64, p: f64) -> Result<BlockSchedule> {
    if r == 0 || j == 0 {
        return Err(Error::InvalidArgument("r and j must be positive".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} not in (0,1)")));
    }
    if !(beta > 1.0) {
        return Err(Error::InvalidArgument(format!("beta = {beta} must exceed 1")));
    }
    let n_j = j
        .checked_pow(r)
        .ok_or_else(|| Error::InvalidArgument(format!("j^r overflows for j={j}, r={r}")))?;
    let nf = n_j as f64;
    let mut m_j = ceil_snapped(nf.powf(1.0 - gamma)).max(1);
    let mut ell_j = ceil_snapped(nf.powf(gamma)).max(1);
    if m_j.saturating_mul(ell_j) < n_j {
        m_j = nf.powf(1.0 - gamma).ceil() as u64;
        ell_j = nf.powf(gamma).ceil() as u64;
    }
    let rf = r as f64;
    let endpoint_exponent = rf * (1.0 - 2.0 * gamma * alpha - (1.0 - gamma) * beta);
    let oscillation_exponent = rf * (p / 2.0 - 1.0 - gamma * p);
    Ok(BlockSchedule {
        r,
        gamma,
        beta,
        j,
        n_j,
        m_j,
        ell_j,
        endpoint_exponent,
        oscillation_exponent,
        endpoint_summable: endpoint_exponent > 1.0,
        oscillation_summable: oscillation_exponent > 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDiagnostic {
    /// `n_j^{-1/2} max_{i <= n_j} |R_i|`.
    pub lhs: f64,
    /// `n_j^{-1/2} max_{0 <= k <= m_j} |R_{k l_j}|`.
    pub endpoint_term: f64,
    /// `n_j^{-1/2} max_k max_{block k} |M_i - M_{k l_j}|`.
    pub martingale_term: f64,
    /// `n_j^{-1/2} max_k max_{block k} |S_i - S_{k l_j}|`.
    pub sum_term: f64,
    pub holds: bool,
}

/// Evaluates both sides of the block bound along a trace. Block indices are
/// clipped at `n_j`; every `i <= n_j` still lies in some block, so the bound
/// remains a pathwise triangle inequality.
pub fn block_decomposition_diagnostic(trace: &PathTrace, schedule: &BlockSchedule) -> Result<BlockDiagnostic> {
    let n = usize::try_from(schedule.n_j)
        .map_err(|_| Error::InvalidArgument("n_j exceeds address space".into()))?;
    if trace.n < n {
        return Err(Error::InvalidArgument(format!(
            "trace has n = {}, schedule needs n_j = {n}",
            trace.n
        )));
    }
    let ell = schedule.ell_j as usize;
    let m = schedule.m_j as usize;
    let scale = 1.0 / (n as f64).sqrt();
    let diff = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    };

    let lhs = (0..=n).map(|i| trace.r.norm(i)).fold(0.0, f64::max) * scale;
    let endpoint_term = (0..=m)
        .map(|k| k * ell)
        .take_while(|&i| i <= n)
        .map(|i| trace.r.norm(i))
        .fold(0.0, f64::max)
        * scale;
    let mut martingale_term = 0.0f64;
    let mut sum_term = 0.0f64;
    for k in 0..m {
        let base = k * ell;
        if base > n {
            break;
        }
        let end = ((k + 1) * ell).min(n);
        for i in base..=end {
            martingale_term = martingale_term.max(diff(trace.m.row(i), trace.m.row(base)));
            sum_term = sum_term.max(diff(trace.s.row(i), trace.s.row(base)));
        }
    }
    martingale_term *= scale;
    sum_term *= scale;
    let rhs = endpoint_term + martingale_term + sum_term;
    Ok(BlockDiagnostic {
        lhs,
        endpoint_term,
        martingale_term,
        sum_term,
        holds: lhs <= rhs + 1e-12 * (1.0 + rhs),
    })
}

// ---------------------------------------------------------------------------
// marginal goodness of fit

#[derive(Debug, Clone)]
pub struct GofSettings {
    pub n: usize,
    pub n_paths: usize,
    pub t_grid: Vec<f64>,
    pub seed: u64,
    pub significance: f64,
    pub workers: usize,
}

impl GofSettings {
    pub fn new(n: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            n,
            n_paths,
            t_grid: DEFAULT_T_GRID.to_vec(),
            seed,
            significance: DEFAULT_SIGNIFICANCE,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsRow {
    pub t: f64,
    pub component: usize,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovRow {
    pub i: usize,
    pub j: usize,
    pub sample: f64,
    pub target: f64,
    pub std_err: f64,
    pub within: bool,
}

#[derive(Debug, Clone)]
pub struct GofReport {
    pub start: usize,
    pub settings: GofSettings,
    /// Bonferroni level `significance / (rank * |t_grid|)`.
    pub per_test_level: f64,
    pub ks: Vec<KsRow>,
    pub cov: Vec<CovRow>,
    pub ks_passed: bool,
    pub cov_passed: bool,
}

impl GofReport {
    pub fn passed(&self) -> bool {
        self.ks_passed && self.cov_passed
    }

    pub fn report(&self) -> VerificationReport {
        let mut rep = VerificationReport::new(
            "marginal_gof",
            &["kind", "t_or_i", "component_or_j", "statistic", "p_value_or_target", "threshold_or_std_err"],
        );
        rep.passed = self.passed();
        rep.kv("start", self.start);
        rep.kv("n", self.settings.n);
        rep.kv("n_paths", self.settings.n_paths);
        rep.kv("seed", self.settings.seed);
        rep.kv("per_test_level", self.per_test_level);
        rep.kv("ks_passed", self.ks_passed);
        rep.kv("cov_passed", self.cov_passed);
        let min_p = self.ks.iter().map(|r| r.p_value).fold(1.0, f64::min);
        rep.kv("min_p_value", min_p);
        rep.notes.push(
            "finite-dimensional marginal surrogate for the path-space distance; not the metric itself"
                .into(),
        );
        for r in &self.ks {
            rep.rows.push(vec![0.0, r.t, r.component as f64, r.statistic, r.p_value, self.per_test_level]);
        }
        for c in &self.cov {
            rep.rows.push(vec![1.0, c.i as f64, c.j as f64, c.sample, c.target, c.std_err]);
        }
        rep
    }
}

/// Whitened KS tests of `B_n(t) / sqrt(t)` against `N(0, I)` at each `t`,
/// plus an entrywise 3-standard-error comparison of `Cov(B_n(1))` with `D`.
pub fn marginal_gof(
    chain: &FiniteChain,
    g: &Observable,
    kernel: &MartingaleKernel,
    diffusion: &DiffusionMatrix,
    start: usize,
    settings: &GofSettings,
) -> Result<GofReport> {
    if diffusion.is_degenerate() {
        return Err(Error::DegenerateD);
    }
    let n = settings.n;
    if n == 0 || settings.n_paths < 2 {
        return Err(Error::InvalidArgument("marginal_gof needs n >= 1 and at least 2 paths".into()));
    }
    if settings.t_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "t_grid must lie in (0, 1], got {:?}",
            settings.t_grid
        )));
    }
    let mut checkpoints: Vec<usize> = settings
        .t_grid
        .iter()
        .map(|&t| floor_index(n, t))
        .chain(std::iter::once(n))
        .collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    let sampler = TransitionSampler::new(chain);
    let summaries = parallel_paths(settings.n_paths, settings.workers, |id| {
        stream_path(&sampler, g, kernel, start, &checkpoints, PathKey::new(settings.seed, id))
    })?;

    let whitener = diffusion.whitener();
    let rank = diffusion.rank;
    let per_test_level = settings.significance / (rank * settings.t_grid.len()) as f64;
    let sqrt_n = (n as f64).sqrt();
    let mut ks = Vec::new();
    for &t in &settings.t_grid {
        let idx = checkpoints.binary_search(&floor_index(n, t)).expect("checkpoint present");
        let scale = 1.0 / (sqrt_n * t.sqrt());
        for comp in 0..rank {
            let sample: Vec<f64> = summaries
                .iter()
                .map(|s| {
                    let v = &s.s_at[idx];
                    (0..v.len()).map(|c| whitener[(comp, c)] * v[c]).sum::<f64>() * scale
                })
                .collect();
            let r = ks_standard_normal(&sample);
            ks.push(KsRow {
                t,
                component: comp,
                statistic: r.statistic,
                p_value: r.p_value,
            });
        }
    }
    let ks_passed = ks.iter().all(|r| r.p_value > per_test_level);

    let end_idx = checkpoints.len() - 1;
    let endpoints: Vec<Vec<f64>> = summaries
        .iter()
        .map(|s| s.s_at[end_idx].iter().map(|v| v / sqrt_n).collect())
        .collect();
    let est = sample_covariance(&endpoints);
    let d = g.dim();
    let mut cov = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let sample = est.cov[(i, j)];
            let target = diffusion.d[(i, j)];
            let std_err = est.std_err[(i, j)];
            cov.push(CovRow {
                i,
                j,
                sample,
                target,
                std_err,
                within: (sample - target).abs() <= 3.0 * std_err,
            });
        }
    }
    let cov_passed = cov.iter().all(|c| c.within);

    Ok(GofReport {
        start,
        settings: settings.clone(),
        per_test_level,
        ks,
        cov,
        ks_passed,
        cov_passed,
    })
}

// ---------------------------------------------------------------------------
// sup-norm decay

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayQuantity {
    /// `n^{-1/2} max_{k<=n} |R_k|`.
    Remainder,
    /// `n^{-1/2} max_{k<=n} |S_k - S~_k|`.
    CenteredGap,
    /// `n^{-1/2} max_{k<=n} |S_k|`, the sup-norm of the scaled path; used when
    /// the diffusion matrix is degenerate.
    ScaledPath,
}

impl DecayQuantity {
    pub fn as_str(self) -> &'static str {
        match self {
            DecayQuantity::Remainder => "remainder",
            DecayQuantity::CenteredGap => "centered_gap",
            DecayQuantity::ScaledPath => "scaled_path",
        }
    }
}

/// Per-`n` samples of a decay statistic across paths.
#[derive(Debug, Clone)]
pub struct DecaySamples {
    pub quantity: DecayQuantity,
    pub n_list: Vec<usize>,
    /// `values[i][path]` at `n_list[i]`.
    pub values: Vec<Vec<f64>>,
}

impl DecaySamples {
    pub fn from_traces(traces: &[PathTrace], quantity: DecayQuantity, n_list: &[usize]) -> Result<Self> {
        if let Some(tr) = traces.iter().find(|t| t.n < n_list.iter().copied().max().unwrap_or(0)) {
            return Err(Error::InvalidArgument(format!("trace of length {} too short", tr.n)));
        }
        if traces.windows(2).any(|w| w[0].start != w[1].start) {
            return Err(Error::InvalidArgument("traces must share a start state".into()));
        }
        let values = n_list
            .iter()
            .map(|&n| {
                traces
                    .iter()
                    .map(|tr| {
                        let m = (0..=n)
                            .map(|k| match quantity {
                                DecayQuantity::Remainder => tr.r.norm(k),
                                DecayQuantity::ScaledPath => tr.s.norm(k),
                                DecayQuantity::CenteredGap => {
                                    let (s, st) = (tr.s.row(k), tr.s_tilde.row(k));
                                    s.iter().zip(st).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
                                }
                            })
                            .fold(0.0, f64::max);
                        m / (n as f64).sqrt()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            quantity,
            n_list: n_list.to_vec(),
            values,
        })
    }

    /// From streamed summaries whose checkpoints include every `n` in `n_list`.
    pub fn from_summaries(summaries: &[PathSummary], quantity: DecayQuantity, n_list: &[usize]) -> Result<Self> {
        let pick = |s: &PathSummary, n: usize| -> Result<f64> {
            let idx = s
                .checkpoints
                .binary_search(&n)
                .map_err(|_| Error::InvalidArgument(format!("checkpoint {n} missing")))?;
            let v = match quantity {
                DecayQuantity::Remainder => s.max_r[idx],
                DecayQuantity::ScaledPath => s.max_s[idx],
                DecayQuantity::CenteredGap => {
                    return Err(Error::InvalidArgument(
                        "centered gap needs full traces or the exact table".into(),
                    ))
                }
            };
            Ok(v / (n as f64).sqrt())
        };
        let values = n_list
            .iter()
            .map(|&n| summaries.iter().map(|s| pick(s, n)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            quantity,
            n_list: n_list.to_vec(),
            values,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub quantity: DecayQuantity,
    pub n_list: Vec<usize>,
    pub p95: Vec<f64>,
    pub max: Vec<f64>,
    pub threshold: f64,
    pub bound: Option<Vec<f64>>,
    pub decreasing: bool,
    pub below_threshold: bool,
    pub within_bound: bool,
}

impl DecayReport {
    pub fn passed(&self) -> bool {
        self.decreasing && self.below_threshold && self.within_bound
    }

    pub fn report(&self) -> VerificationReport {
        let mut rep = VerificationReport::new(
            &format!("sup_decay_{}", self.quantity.as_str()),
            &["n", "p95", "max", "bound"],
        );
        rep.passed = self.passed();
        rep.kv("threshold", self.threshold);
        rep.kv("decreasing", self.decreasing);
        rep.kv("below_threshold", self.below_threshold);
        rep.kv("within_bound", self.within_bound);
        rep.notes
            .push("convergence threshold is a policy choice, not a rate from the theory".into());
        for (i, &n) in self.n_list.iter().enumerate() {
            let b = self.bound.as_ref().map_or(f64::NAN, |b| b[i]);
            rep.rows.push(vec![n as f64, self.p95[i], self.max[i], b]);
        }
        rep
    }
}

/// Passes iff the 95th percentile strictly decreases along `n`, ends at or
/// below `threshold`, and (when given) no path exceeds `bound[i]`.
pub fn sup_decay_check(samples: &DecaySamples, threshold: f64, bound: Option<Vec<f64>>) -> Result<DecayReport> {
    if samples.n_list.is_empty() || samples.values.iter().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("decay check needs samples at every n".into()));
    }
    if let Some(b) = &bound {
        if b.len() != samples.n_list.len() {
            return Err(Error::Dimension("bound length differs from n_list".into()));
        }
    }
    let p95: Vec<f64> = samples.values.iter().map(|v| percentile(v, 0.95)).collect();
    let max: Vec<f64> = samples
        .values
        .iter()
        .map(|v| v.iter().copied().fold(0.0, f64::max))
        .collect();
    let decreasing = p95.windows(2).all(|w| w[1] < w[0]) || p95.iter().all(|&v| v == 0.0);
    let below_threshold = *p95.last().unwrap() <= threshold;
    let within_bound = bound.as_ref().is_none_or(|b| {
        max.iter()
            .zip(b)
            .all(|(&m, &bd)| m <= bd * (1.0 + 1e-12) + 1e-15)
    });
    Ok(DecayReport {
        quantity: samples.quantity,
        n_list: samples.n_list.clone(),
        p95,
        max,
        threshold,
        bound,
        decreasing,
        below_threshold,
        within_bound,
    })
}

// ---------------------------------------------------------------------------
// maximal inequality

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximalRow {
    pub n: usize,
    pub lambda: f64,
    pub k: u32,
    pub lhs: f64,
    pub rhs: f64,
}

impl MaximalRow {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorollaryRow {
    pub n: usize,
    pub lambda: f64,
    pub best_k: u32,
    /// `1 + 2^{-k}` at the best `k`.
    pub beta: f64,
    /// `2^{6k}` at the best `k`.
    pub gamma_const: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct MaximalReport {
    pub c: f64,
    pub rows: Vec<MaximalRow>,
    pub corollary: Vec<CorollaryRow>,
    pub violations: usize,
}

impl MaximalReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn report(&self) -> VerificationReport {
        let mut rep = VerificationReport::new("maximal_inequality", &["n", "lambda", "k", "lhs", "rhs", "holds"]);
        rep.passed = self.passed();
        rep.kv("C", self.c);
        rep.kv("cases", self.rows.len());
        rep.kv("violations", self.violations);
        for r in &self.rows {
            rep.rows.push(vec![
                r.n as f64,
                r.lambda,
                r.k as f64,
                r.lhs,
                r.rhs,
                if r.holds() { 1.0 } else { 0.0 },
            ]);
        }
        rep
    }
}

/// Smallest `C` with `||T_n||_2^2 <= C n` for every `1 <= n <= table.n_max()`.
pub fn required_c(table: &PartialSumTable) -> f64 {
    (1..=table.n_max())
        .map(|n| table.norm(n).powi(2) / n as f64)
        .fold(0.0, f64::max)
}

/// Geometric grid of `points` levels spanning the range of
/// `max_{j<=n_max} |T_j(x)|`, extended past the top so that some levels give
/// an empty event.
pub fn default_lambda_grid(table: &PartialSumTable, n_max: usize, points: usize) -> Vec<f64> {
    let top = table.running_max()[n_max.min(table.n_max())]
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let top = if top > 0.0 { top } else { 1.0 };
    let (lo, hi) = (top * 1e-2, top * 2.0);
    if points <= 1 {
        return vec![hi];
    }
    (0..points)
        .map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64))
        .collect()
}

/// Checks `pi(max_{j<=n} |T_j| > lambda) <= 2^{6k} C n^{1 + 2^{-k}} / lambda^2`
/// exactly for every `(n, lambda, k)`. `c` must dominate `||T_n||_2^2 / n`
/// over the whole table.
pub fn maximal_inequality_check(
    chain: &FiniteChain,
    table: &PartialSumTable,
    c: f64,
    n_list: &[usize],
    lambda_grid: &[f64],
    k_list: &[u32],
) -> Result<MaximalReport> {
    let required = required_c(table);
    if required > c * (1.0 + 1e-12) {
        return Err(Error::HypothesisUnmet { provided: c, required });
    }
    if let Some(&n) = n_list.iter().find(|&&n| n == 0 || n > table.n_max()) {
        return Err(Error::InvalidArgument(format!(
            "n = {n} outside table range 1..={}",
            table.n_max()
        )));
    }
    if lambda_grid.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument("lambda grid must be positive".into()));
    }
    let running = table.running_max();
    let pi = chain.pi();
    let mut rows = Vec::new();
    let mut corollary = Vec::new();
    for &n in n_list {
        for &lambda in lambda_grid {
            let lhs: f64 = running[n]
                .iter()
                .zip(pi.iter())
                .filter(|(m, _)| **m > lambda)
                .map(|(_, w)| w)
                .sum();
            let mut best: Option<CorollaryRow> = None;
            for &k in k_list {
                let gamma_const = 2f64.powi(6 * k as i32);
                let beta = 1.0 + 0.5f64.powi(k as i32);
                let rhs = gamma_const * c * (n as f64).powf(beta) / (lambda * lambda);
                rows.push(MaximalRow { n, lambda, k, lhs, rhs });
                if best.is_none_or(|b| rhs < b.bound) {
                    best = Some(CorollaryRow {
                        n,
                        lambda,
                        best_k: k,
                        beta,
                        gamma_const,
                        bound: rhs,
                    });
                }
            }
            corollary.extend(best);
        }
    }
    let violations = rows.iter().filter(|r| !r.holds()).count();
    Ok(MaximalReport {
        c,
        rows,
        corollary,
        violations,
    })
}

// ---------------------------------------------------------------------------
// centered drift

#[derive(Debug, Clone)]
pub struct DriftReport {
    pub n_list: Vec<usize>,
    /// `values[i][x] = n_i^{-1/2} max_{k <= n_i} |T_k(x)|`.
    pub values: Vec<Vec<f64>>,
    pub burn_in: usize,
    pub threshold: f64,
    pub monotone: bool,
    pub below_threshold: bool,
}

impl DriftReport {
    pub fn passed(&self) -> bool {
        self.monotone && self.below_threshold
    }

    pub fn report(&self) -> VerificationReport {
        let mut rep = VerificationReport::new("centered_drift", &["n", "state", "value"]);
        rep.passed = self.passed();
        rep.kv("burn_in", self.burn_in);
        rep.kv("threshold", self.threshold);
        rep.kv("monotone", self.monotone);
        rep.kv("below_threshold", self.below_threshold);
        rep.notes
            .push("convergence threshold is a policy choice, not a rate from the theory".into());
        for (i, &n) in self.n_list.iter().enumerate() {
            for (x, &v) in self.values[i].iter().enumerate() {
                rep.rows.push(vec![n as f64, x as f64, v]);
            }
        }
        rep
    }
}

/// Exact `n^{-1/2} max_{k<=n} |E_x S_k| = n^{-1/2} max_{k<=n} |T_k(x)|` for
/// every state.
pub fn centered_drift_check(
    table: &PartialSumTable,
    n_list: &[usize],
    burn_in: usize,
    threshold: f64,
) -> Result<DriftReport> {
    if n_list.is_empty() {
        return Err(Error::InvalidArgument("n_list is empty".into()));
    }
    if let Some(&n) = n_list.iter().find(|&&n| n == 0 || n > table.n_max()) {
        return Err(Error::InvalidArgument(format!(
            "n = {n} outside table range 1..={}",
            table.n_max()
        )));
    }
    let running = table.running_max();
    let values: Vec<Vec<f64>> = n_list
        .iter()
        .map(|&n| {
            let s = 1.0 / (n as f64).sqrt();
            running[n].iter().map(|m| m * s).collect()
        })
        .collect();
    let states = values[0].len();
    let tail: Vec<usize> = (0..n_list.len()).filter(|&i| n_list[i] >= burn_in).collect();
    let monotone = (0..states).all(|x| tail.windows(2).all(|w| values[w[1]][x] <= values[w[0]][x]));
    let below_threshold = values.last().unwrap().iter().all(|&v| v <= threshold);
    Ok(DriftReport {
        n_list: n_list.to_vec(),
        values,
        burn_in,
        threshold,
        monotone,
        below_threshold,
    })
}

/// `n^{-1/2} max_{k<=n} |T_k(start)|`: the deterministic centered gap seen
/// by every path from `start`.
pub fn centered_gap_exact(table: &PartialSumTable, start: usize, n: usize) -> f64 {
    (0..=n)
        .map(|k| norm(&table.at(k, start)))
        .fold(0.0, f64::max)
        / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{center_observable, validate_chain, ChainTolerances};
    use crate::decomposition::poisson_kernel;
    use crate::resolvent::partial_sums;
    use crate::simulate::{path_functionals, sample_path};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn chain(rows: &[&[f64]]) -> FiniteChain {
        let n = rows.len();
        validate_chain(
            DMatrix::from_fn(n, n, |i, j| rows[i][j]),
            &ChainTolerances::default(),
        )
        .unwrap()
    }

    #[test]
    fn schedule_arithmetic() {
        let s = make_schedule(2, 0.5, 1.05, 3, 0.25, 4.0).unwrap();
        assert_eq!((s.n_j, s.m_j, s.ell_j), (9, 3, 3));
        let s = make_schedule(5, 0.3, 1.05, 1, 0.25, 4.0).unwrap();
        assert_eq!((s.n_j, s.m_j, s.ell_j), (1, 1, 1));
        let s = make_schedule(8, 0.1, 1.05, 2, 0.25, 4.0).unwrap();
        assert_abs_diff_eq!(s.endpoint_exponent, 0.04, epsilon = 1e-12);
        assert!(!s.endpoint_summable);
        assert_abs_diff_eq!(s.oscillation_exponent, 4.8, epsilon = 1e-12);
        assert!(s.oscillation_summable);
    }

    #[test]
    fn schedule_snaps_exact_roots() {
        let s = make_schedule(3, 1.0 / 3.0, 1.1, 3, 0.1, 4.0).unwrap();
        assert_eq!((s.n_j, s.m_j, s.ell_j), (27, 9, 3));
        for j in 1..40 {
            for r in 1..5 {
                let s = make_schedule(r, 0.37, 1.1, j, 0.1, 4.0).unwrap();
                assert!(s.m_j * s.ell_j >= s.n_j);
            }
        }
        assert!(make_schedule(2, 1.0, 1.1, 3, 0.1, 4.0).is_err());
        assert!(make_schedule(2, 0.5, 1.0, 3, 0.1, 4.0).is_err());
    }

    #[test]
    fn block_diagnostic_alternating_by_hand() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let g = center_observable(&DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), &c).unwrap();
        let k = poisson_kernel(&c, &g).unwrap();
        let t = partial_sums(&c, &g, 9).unwrap();
        let tr = path_functionals(&sample_path(&c, 0, 9, 0, 0).unwrap(), &g, &k, &t).unwrap();
        let s = make_schedule(2, 0.5, 1.05, 3, 0.25, 4.0).unwrap();
        let b = block_decomposition_diagnostic(&tr, &s).unwrap();
        assert_abs_diff_eq!(b.lhs, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.endpoint_term, 1.0 / 3.0, epsilon = 1e-15);
        assert!(b.martingale_term < 1e-15);
        assert_abs_diff_eq!(b.sum_term, 1.0 / 3.0, epsilon = 1e-15);
        assert!(b.holds);
    }

    #[test]
    fn maximal_inequality_iid_closed_form() {
        let p = [0.2, 0.3, 0.5];
        let c = chain(&[&p, &p, &p]);
        let g = center_observable(&DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 4.0]), &c).unwrap();
        let t = partial_sums(&c, &g, 64).unwrap();
        let cc = required_c(&t);
        let lambdas = [0.5, 1.0, 2.0, 10.0];
        let rep = maximal_inequality_check(&c, &t, cc, &[1, 2, 64], &lambdas, &[0]).unwrap();
        assert!(rep.passed());
        for row in &rep.rows {
            let expect: f64 = (0..3)
                .filter(|&x| g.values()[(x, 0)].abs() > row.lambda)
                .map(|x| p[x])
                .sum();
            assert_abs_diff_eq!(row.lhs, expect, epsilon = 1e-15);
            assert_abs_diff_eq!(row.rhs, cc * (row.n * row.n) as f64 / row.lambda.powi(2), epsilon = 1e-9);
            assert!(row.lhs < row.rhs);
        }
        let big = g.max_abs() * 1.01;
        let rep = maximal_inequality_check(&c, &t, cc, &[8], &[big], &DEFAULT_K_SWEEP).unwrap();
        assert!(rep.rows.iter().all(|r| r.lhs == 0.0));
        assert_eq!(rep.corollary.len(), 1);
    }

    #[test]
    fn maximal_inequality_rejects_small_c() {
        let p = [0.5, 0.5];
        let c = chain(&[&p, &p]);
        let g = center_observable(&DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), &c).unwrap();
        let t = partial_sums(&c, &g, 8).unwrap();
        assert!(matches!(
            maximal_inequality_check(&c, &t, 0.5, &[4], &[1.0], &[0]),
            Err(Error::HypothesisUnmet { .. })
        ));
    }

    #[test]
    fn centered_drift_closed_forms() {
        let p = [0.2, 0.3, 0.5];
        let c = chain(&[&p, &p, &p]);
        let g = center_observable(&DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 4.0]), &c).unwrap();
        let t = partial_sums(&c, &g, 4096).unwrap();
        let ns = [16, 256, 4096];
        let rep = centered_drift_check(&t, &ns, 1, 1.0).unwrap();
        for (i, &n) in ns.iter().enumerate() {
            for x in 0..3 {
                let expect = g.values()[(x, 0)].abs() / (n as f64).sqrt();
                assert_abs_diff_eq!(rep.values[i][x], expect, epsilon = 1e-12);
            }
        }
        assert!(rep.passed());

        let alt = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let g = center_observable(&DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), &alt).unwrap();
        let t = partial_sums(&alt, &g, 100).unwrap();
        let rep = centered_drift_check(&t, &[4, 25, 100], 1, 0.2).unwrap();
        assert_abs_diff_eq!(rep.values[2][0], 0.1, epsilon = 1e-15);
        assert!(rep.passed());
    }

    #[test]
    fn decay_check_alternating_bound() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let g = center_observable(&DMatrix::from_column_slice(2, 1, &[1.0, -1.0]), &c).unwrap();
        let k = poisson_kernel(&c, &g).unwrap();
        let t = partial_sums(&c, &g, 1600).unwrap();
        let traces: Vec<_> = (0..4)
            .map(|id| path_functionals(&sample_path(&c, 0, 1600, 1, id).unwrap(), &g, &k, &t).unwrap())
            .collect();
        let ns = [16, 100, 400, 1600];
        let samples = DecaySamples::from_traces(&traces, DecayQuantity::Remainder, &ns).unwrap();
        let bound: Vec<f64> = ns.iter().map(|&n| 1.0 / (n as f64).sqrt()).collect();
        let rep = sup_decay_check(&samples, 0.05, Some(bound.clone())).unwrap();
        for i in 0..ns.len() {
            assert_abs_diff_eq!(rep.max[i], bound[i], epsilon = 1e-15);
        }
        assert!(rep.passed());
        // S - S~ = T_k(0) alternates between 1 and 0
        let gap = DecaySamples::from_traces(&traces, DecayQuantity::CenteredGap, &ns).unwrap();
        for (i, row) in gap.values.iter().enumerate() {
            assert!(row.iter().all(|&v| (v - bound[i]).abs() < 1e-15));
        }
    }

    #[test]
    fn decay_check_flags_growth() {
        let samples = DecaySamples {
            quantity: DecayQuantity::Remainder,
            n_list: vec![10, 100],
            values: vec![vec![0.1, 0.2], vec![0.3, 0.1]],
        };
        let rep = sup_decay_check(&samples, 0.5, None).unwrap();
        assert!(!rep.decreasing);
        assert!(!rep.passed());
    }

    #[test]
    fn report_text_shapes() {
        let samples = DecaySamples {
            quantity: DecayQuantity::ScaledPath,
            n_list: vec![10, 100],
            values: vec![vec![0.2], vec![0.01]],
        };
        let rep = sup_decay_check(&samples, 0.05, None).unwrap().report();
        let kv = rep.to_kv_text();
        assert!(kv.starts_with("test = sup_decay_scaled_path\nstatus = PASS\n"));
        let table = rep.to_table_text();
        assert_eq!(table.lines().count(), 3);
        assert_eq!(table.lines().next().unwrap(), "n\tp95\tmax\tbound");
    }
}
