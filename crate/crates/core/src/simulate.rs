//! Path sampling under `P_x` and the additive functionals along a path.
//!
//! Randomness is counter-addressed: the uniform driving step `k` of path
//! `path_id` is the `k`-th 64-bit word pair of the ChaCha8 keystream keyed by
//! `seed` on stream `path_id`. A path therefore does not depend on which
//! worker sampled it or in what order.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::chain::{FiniteChain, Observable};
use crate::decomposition::MartingaleKernel;
use crate::error::{Error, Result};
use crate::resolvent::PartialSumTable;

/// Brownian reference paths draw from a keystream disjoint from chain paths.
const BROWNIAN_DOMAIN: u64 = 0xB5AD_4ECE_DA1C_E2A9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathKey {
    pub seed: u64,
    pub path_id: u64,
}

impl PathKey {
    pub fn new(seed: u64, path_id: u64) -> Self {
        Self { seed, path_id }
    }

    fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.path_id);
        rng
    }

    /// Sequential uniforms: the `k`-th call returns [`PathKey::uniform_at`]`(k)`.
    pub fn stream(self) -> UniformStream {
        UniformStream { rng: self.rng() }
    }

    /// Random-access uniform for step `step`.
    pub fn uniform_at(self, step: u64) -> f64 {
        let mut rng = self.rng();
        rng.set_word_pos(2 * step as u128);
        to_unit(rng.next_u64())
    }
}

pub struct UniformStream {
    rng: ChaCha8Rng,
}

impl UniformStream {
    pub fn next_uniform(&mut self) -> f64 {
        to_unit(self.rng.next_u64())
    }
}

/// Top 53 bits as a uniform in `[0, 1)`.
fn to_unit(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF transition lookup with precomputed cumulative rows.
#[derive(Debug, Clone)]
pub struct TransitionSampler {
    n: usize,
    cumulative: Vec<f64>,
}

impl TransitionSampler {
    pub fn new(chain: &FiniteChain) -> Self {
        let n = chain.n_states();
        let mut cumulative = vec![0.0; n * n];
        for x in 0..n {
            let row = &mut cumulative[x * n..(x + 1) * n];
            let mut acc = 0.0;
            let mut last_positive = 0;
            for (y, c) in row.iter_mut().enumerate() {
                let p = chain.q()[(x, y)];
                acc += p;
                *c = acc;
                if p > 0.0 {
                    last_positive = y;
                }
            }
            // u < 1 always lands at or before the last positive entry
            row[last_positive..].iter_mut().for_each(|c| *c = f64::INFINITY);
        }
        Self { n, cumulative }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn step(&self, x: usize, u: f64) -> usize {
        let row = &self.cumulative[x * self.n..(x + 1) * self.n];
        row.partition_point(|&c| c <= u)
    }

    pub fn path(&self, start: usize, n: usize, key: PathKey) -> Vec<usize> {
        let mut states = Vec::with_capacity(n + 1);
        states.push(start);
        let mut stream = key.stream();
        let mut x = start;
        for _ in 0..n {
            x = self.step(x, stream.next_uniform());
            states.push(x);
        }
        states
    }
}

/// States `X_0 = start, X_1, ..., X_n` for path `path_id` under `seed`.
pub fn sample_path(
    chain: &FiniteChain,
    start: usize,
    n: usize,
    seed: u64,
    path_id: u64,
) -> Result<Vec<usize>> {
    check_start(chain.n_states(), start)?;
    Ok(TransitionSampler::new(chain).path(start, n, PathKey::new(seed, path_id)))
}

fn check_start(n_states: usize, start: usize) -> Result<()> {
    if start >= n_states {
        return Err(Error::InvalidArgument(format!(
            "start state {start} out of range 0..{n_states}"
        )));
    }
    Ok(())
}

/// Row-major `(n+1) x d` cumulative series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    dim: usize,
    data: Vec<f64>,
}

impl Series {
    fn zeros(len: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn norm(&self, k: usize) -> f64 {
        norm(self.row(k))
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cumulative functionals along one path. `S_{k+1} - S_k = g(X_k)`,
/// `M_{k+1} - M_k = H(X_k, X_{k+1})`, `R = S - M`, `S~_k = S_k - T_k(start)`.
#[derive(Debug, Clone)]
pub struct PathTrace {
    pub start: usize,
    pub n: usize,
    pub states: Vec<usize>,
    pub s: Series,
    pub m: Series,
    pub r: Series,
    pub s_tilde: Series,
}

pub fn path_functionals(
    path: &[usize],
    g: &Observable,
    kernel: &MartingaleKernel,
    table: &PartialSumTable,
) -> Result<PathTrace> {
    let Some(&start) = path.first() else {
        return Err(Error::InvalidArgument("empty path".into()));
    };
    let n = path.len() - 1;
    if table.n_max() < n {
        return Err(Error::InvalidArgument(format!(
            "partial-sum table covers n <= {}, path has n = {n}",
            table.n_max()
        )));
    }
    let d = g.dim();
    if kernel.dim() != d {
        return Err(Error::Dimension(format!(
            "kernel dimension {} vs observable dimension {d}",
            kernel.dim()
        )));
    }
    let gv = g.values();
    let mut s = Series::zeros(n + 1, d);
    let mut m = Series::zeros(n + 1, d);
    for k in 0..n {
        let (x, y) = (path[k], path[k + 1]);
        let hv = kernel.get(x, y).ok_or(Error::MissingEdge { from: x, to: y })?;
        for c in 0..d {
            let sk = s.row(k)[c] + gv[(x, c)];
            let mk = m.row(k)[c] + hv[c];
            s.row_mut(k + 1)[c] = sk;
            m.row_mut(k + 1)[c] = mk;
        }
    }
    let mut r = Series::zeros(n + 1, d);
    let mut s_tilde = Series::zeros(n + 1, d);
    for k in 0..=n {
        let tk = table.get(k);
        for c in 0..d {
            r.row_mut(k)[c] = s.row(k)[c] - m.row(k)[c];
            s_tilde.row_mut(k)[c] = s.row(k)[c] - tk[(start, c)];
        }
    }
    Ok(PathTrace {
        start,
        n,
        states: path.to_vec(),
        s,
        m,
        r,
        s_tilde,
    })
}

/// Running summaries of one path recorded at sorted checkpoints, without
/// storing the full trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub checkpoints: Vec<usize>,
    /// `S_k` at each checkpoint.
    pub s_at: Vec<Vec<f64>>,
    /// `M_k` at each checkpoint.
    pub m_at: Vec<Vec<f64>>,
    /// `max_{j <= k} |R_j|`.
    pub max_r: Vec<f64>,
    /// `max_{j <= k} |S_j|`.
    pub max_s: Vec<f64>,
    pub end_state: usize,
}

pub fn stream_path(
    sampler: &TransitionSampler,
    g: &Observable,
    kernel: &MartingaleKernel,
    start: usize,
    checkpoints: &[usize],
    key: PathKey,
) -> Result<PathSummary> {
    check_start(sampler.n_states(), start)?;
    if checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("checkpoints must be sorted".into()));
    }
    let d = g.dim();
    let gv = g.values();
    let n = checkpoints.last().copied().unwrap_or(0);
    let mut s = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut max_r = 0.0f64;
    let mut max_s = 0.0f64;
    let mut out = PathSummary {
        checkpoints: checkpoints.to_vec(),
        s_at: Vec::with_capacity(checkpoints.len()),
        m_at: Vec::with_capacity(checkpoints.len()),
        max_r: Vec::with_capacity(checkpoints.len()),
        max_s: Vec::with_capacity(checkpoints.len()),
        end_state: start,
    };
    let mut next_cp = 0;
    let mut record = |k: usize, s: &[f64], m: &[f64], mr: f64, ms: f64, out: &mut PathSummary| {
        while next_cp < checkpoints.len() && checkpoints[next_cp] == k {
            out.s_at.push(s.to_vec());
            out.m_at.push(m.to_vec());
            out.max_r.push(mr);
            out.max_s.push(ms);
            next_cp += 1;
        }
    };
    record(0, &s, &m, 0.0, 0.0, &mut out);
    let mut stream = key.stream();
    let mut x = start;
    for k in 0..n {
        let y = sampler.step(x, stream.next_uniform());
        let hv = kernel.get(x, y).ok_or(Error::MissingEdge { from: x, to: y })?;
        let mut r2 = 0.0;
        let mut s2 = 0.0;
        for c in 0..d {
            s[c] += gv[(x, c)];
            m[c] += hv[c];
            r2 += (s[c] - m[c]).powi(2);
            s2 += s[c] * s[c];
        }
        max_r = max_r.max(r2.sqrt());
        max_s = max_s.max(s2.sqrt());
        x = y;
        record(k + 1, &s, &m, max_r, max_s, &mut out);
    }
    out.end_state = x;
    Ok(out)
}

/// Maps `f` over `0..n_paths` on a dedicated pool of `workers` threads,
/// returning results in path order.
pub fn parallel_paths<T, F>(n_paths: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..n_paths as u64)
            .into_par_iter()
            .map(&f)
            .collect::<Result<Vec<T>>>()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Centered,
}

/// `t -> n^{-1/2} S_{[nt]}` (or the centered variant) as a step function.
#[derive(Debug, Clone)]
pub struct ScaledPath {
    pub n: usize,
    values: Series,
}

impl ScaledPath {
    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    /// Value at grid point `k / n`.
    pub fn at_index(&self, k: usize) -> &[f64] {
        self.values.row(k)
    }

    /// Value at `t in [0, 1]`, using `[nt] = max{k : k <= nt}`.
    pub fn at(&self, t: f64) -> &[f64] {
        self.values.row(floor_index(self.n, t))
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..=self.n).map(|k| k as f64 / self.n as f64).collect()
    }

    /// `sup_t |value(t)|`.
    pub fn sup_norm(&self) -> f64 {
        (0..=self.n).map(|k| self.values.norm(k)).fold(0.0, f64::max)
    }
}

/// `[n t]`, treating products within a few ulps of an integer as that integer
/// so that `t = k / n` maps back to `k`.
pub fn floor_index(n: usize, t: f64) -> usize {
    let x = n as f64 * t.clamp(0.0, 1.0);
    let r = x.round();
    let k = if (x - r).abs() <= 4.0 * f64::EPSILON * x.max(1.0) {
        r
    } else {
        x.floor()
    };
    (k as usize).min(n)
}

pub fn scaled_path(trace: &PathTrace, variant: Variant) -> ScaledPath {
    let src = match variant {
        Variant::Plain => &trace.s,
        Variant::Centered => &trace.s_tilde,
    };
    let n = trace.n;
    let scale = if n == 0 { 0.0 } else { 1.0 / (n as f64).sqrt() };
    let mut values = src.clone();
    values.data.iter_mut().for_each(|v| *v *= scale);
    ScaledPath { n, values }
}

/// Brownian motion `W = Lambda B` sampled on a grid, with `W(0) = 0`.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    /// `0` followed by the requested grid.
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

pub fn sample_brownian(lambda: &DMatrix<f64>, grid: &[f64], seed: u64, path_id: u64) -> Result<BrownianPath> {
    let mut prev = 0.0;
    for &t in grid {
        if !(t > prev && t <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Brownian grid must increase within (0, 1], got {grid:?}"
            )));
        }
        prev = t;
    }
    let (d, m) = lambda.shape();
    let mut rng = PathKey::new(seed ^ BROWNIAN_DOMAIN, path_id).rng();
    let mut times = vec![0.0];
    let mut values = vec![vec![0.0; d]];
    let mut w = vec![0.0; d];
    let mut last = 0.0;
    for &t in grid {
        let sd = (t - last).sqrt();
        let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (r, wr) in w.iter_mut().enumerate() {
            *wr += sd * (0..m).map(|c| lambda[(r, c)] * z[c]).sum::<f64>();
        }
        times.push(t);
        values.push(w.clone());
        last = t;
    }
    Ok(BrownianPath { times, values })
}
