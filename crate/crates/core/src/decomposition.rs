//! Martingale kernel `H(x,y) = h(y) - (Qh)(x)`, its two construction routes,
//! the diffusion matrix `D = sum pi(x) Q(x,y) H H^T` with a factor `Lambda`,
//! the `L^q` exponent arithmetic, and the exact remainder second moment.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::chain::{FiniteChain, Observable};
use crate::error::{Error, Result};
use crate::resolvent::solve_resolvent;

/// Eigenvalues of `D` at or below this are dropped from `Lambda`.
pub const EIGEN_CUTOFF: f64 = 1e-10;

/// Unique pi-centered solution of `(I - Q) h = g`, via the nonsingular system
/// `(I - Q + 1 pi^T) h = g`.
pub fn poisson_solve(chain: &FiniteChain, g: &Observable) -> Result<DMatrix<f64>> {
    let n = chain.n_states();
    let mut a = DMatrix::<f64>::identity(n, n) - chain.q();
    for x in 0..n {
        for y in 0..n {
            a[(x, y)] += chain.pi()[y];
        }
    }
    let h = a
        .lu()
        .solve(g.values())
        .ok_or_else(|| Error::SolveFailure("Poisson system is singular".into()))?;
    let residual = (&h - chain.apply(&h) - g.values()).amax();
    let bound = 1e-10 * (1.0 + g.values().amax()) * n as f64;
    if !(residual <= bound) {
        return Err(Error::SolveFailure(format!(
            "Poisson residual {residual:e} exceeds {bound:e}"
        )));
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSource {
    EpsilonLimit,
    Poisson,
}

impl KernelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelSource::EpsilonLimit => "epsilon_limit",
            KernelSource::Poisson => "poisson",
        }
    }
}

/// `H(x,y)` stored densely as `n x n` blocks of `d` components, with a
/// support mask mirroring `Q(x,y) > 0`.
#[derive(Debug, Clone)]
pub struct MartingaleKernel {
    n_states: usize,
    dim: usize,
    values: Vec<f64>,
    support: Vec<bool>,
    source: KernelSource,
    potential: DMatrix<f64>,
    /// Last `L^2(pi_1)` increment along the epsilon schedule.
    pub cauchy_gap: f64,
    /// Every increment along the schedule, `k = 1, 2, ...`.
    pub gaps: Vec<f64>,
    /// `epsilon` at which the schedule stopped, if any.
    pub final_epsilon: Option<f64>,
    /// `L^2(pi_1)` distance to the Poisson-route kernel.
    pub route_gap: Option<f64>,
}

impl MartingaleKernel {
    /// Builds `H(x,y) = h(y) - (Qh)(x)` on the support of `Q`.
    pub fn from_potential(chain: &FiniteChain, h: &DMatrix<f64>, source: KernelSource) -> Self {
        let n = chain.n_states();
        let d = h.ncols();
        let qh = chain.apply(h);
        let mut values = vec![0.0; n * n * d];
        let mut support = vec![false; n * n];
        for x in 0..n {
            for y in 0..n {
                if chain.q()[(x, y)] > 0.0 {
                    support[x * n + y] = true;
                    let base = (x * n + y) * d;
                    for c in 0..d {
                        values[base + c] = h[(y, c)] - qh[(x, c)];
                    }
                }
            }
        }
        Self {
            n_states: n,
            dim: d,
            values,
            support,
            source,
            potential: h.clone(),
            cauchy_gap: 0.0,
            gaps: Vec::new(),
            final_epsilon: None,
            route_gap: None,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> KernelSource {
        self.source
    }

    /// The `h` the kernel was built from (`h_eps` or the Poisson solution).
    pub fn potential(&self) -> &DMatrix<f64> {
        &self.potential
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&[f64]> {
        let idx = x * self.n_states + y;
        if x < self.n_states && y < self.n_states && self.support[idx] {
            Some(&self.values[idx * self.dim..(idx + 1) * self.dim])
        } else {
            None
        }
    }

    /// `max_x |sum_y Q(x,y) H(x,y)|`.
    pub fn martingale_defect(&self, chain: &FiniteChain) -> f64 {
        let mut worst = 0.0f64;
        for x in 0..self.n_states {
            let mut acc = vec![0.0; self.dim];
            for y in 0..self.n_states {
                if let Some(hv) = self.get(x, y) {
                    let w = chain.q()[(x, y)];
                    acc.iter_mut().zip(hv).for_each(|(a, v)| *a += w * v);
                }
            }
            worst = worst.max(acc.iter().map(|a| a * a).sum::<f64>().sqrt());
        }
        worst
    }

    /// `L^2(pi_1)` distance between two kernels on the same chain.
    pub fn l2_distance(&self, other: &MartingaleKernel, chain: &FiniteChain) -> f64 {
        self.weighted_sum(chain, |x, y| {
            let a = self.get(x, y).unwrap_or(&[]);
            let b = other.get(x, y).unwrap_or(&[]);
            a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum()
        })
        .sqrt()
    }

    pub fn l2_norm(&self, chain: &FiniteChain) -> f64 {
        self.weighted_sum(chain, |x, y| {
            self.get(x, y)
                .map_or(0.0, |v| v.iter().map(|u| u * u).sum())
        })
        .sqrt()
    }

    fn weighted_sum(&self, chain: &FiniteChain, f: impl Fn(usize, usize) -> f64) -> f64 {
        let n = self.n_states;
        let mut total = 0.0;
        for x in 0..n {
            for y in 0..n {
                if self.support[x * n + y] {
                    total += chain.pi()[x] * chain.q()[(x, y)] * f(x, y);
                }
            }
        }
        total
    }
}

/// Kernel from the exact Poisson solution.
pub fn poisson_kernel(chain: &FiniteChain, g: &Observable) -> Result<MartingaleKernel> {
    let h = poisson_solve(chain, g)?;
    let mut k = MartingaleKernel::from_potential(chain, &h, KernelSource::Poisson);
    k.route_gap = Some(0.0);
    Ok(k)
}

/// Follows `H_{delta_k}` along `delta_k = 2^{-k}` until consecutive kernels
/// differ by less than `tol` in `L^2(pi_1)`, then checks the result against
/// the Poisson-route kernel within `10 tol`.
pub fn limit_kernel(
    chain: &FiniteChain,
    g: &Observable,
    k_max: usize,
    tol: f64,
) -> Result<MartingaleKernel> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let kernel_at = |k: usize| -> Result<(f64, MartingaleKernel)> {
        let delta = 0.5f64.powi(k as i32);
        let sol = solve_resolvent(chain, g, delta)?;
        Ok((
            delta,
            MartingaleKernel::from_potential(chain, &sol.h, KernelSource::EpsilonLimit),
        ))
    };

    let (_, mut prev) = kernel_at(0)?;
    let mut gaps = Vec::new();
    let mut converged = None;
    for k in 1..=k_max {
        let (delta, cur) = kernel_at(k)?;
        let gap = cur.l2_distance(&prev, chain);
        gaps.push(gap);
        prev = cur;
        if gap < tol {
            converged = Some(delta);
            break;
        }
    }
    let Some(delta) = converged else {
        let tail = gaps.len().saturating_sub(5);
        return Err(Error::NoConvergence {
            tol,
            k_max,
            gaps: gaps[tail..].to_vec(),
        });
    };

    let exact = poisson_kernel(chain, g)?;
    let route_gap = prev.l2_distance(&exact, chain);
    if route_gap > 10.0 * tol {
        return Err(Error::RouteMismatch {
            gap: route_gap,
            bound: 10.0 * tol,
        });
    }
    let mut kernel = prev;
    kernel.cauchy_gap = *gaps.last().unwrap_or(&0.0);
    kernel.gaps = gaps;
    kernel.final_epsilon = Some(delta);
    kernel.route_gap = Some(route_gap);
    Ok(kernel)
}

#[derive(Debug, Clone)]
pub struct DiffusionMatrix {
    pub d: DMatrix<f64>,
    /// `d x m` factor with `Lambda Lambda^T = D`; columns are eigenvectors
    /// scaled by square-rooted eigenvalues, largest first.
    pub lambda: DMatrix<f64>,
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
}

impl DiffusionMatrix {
    pub fn is_degenerate(&self) -> bool {
        self.rank == 0
    }

    pub fn factor_error(&self) -> f64 {
        (&self.lambda * self.lambda.transpose() - &self.d).amax()
    }

    /// Moore-Penrose pseudo-inverse of `Lambda` (`m x d`). Columns of
    /// `Lambda` are orthogonal, so row `i` is `v_i^T / sqrt(lambda_i)`.
    pub fn whitener(&self) -> DMatrix<f64> {
        let dim = self.d.nrows();
        let mut w = DMatrix::zeros(self.rank, dim);
        for i in 0..self.rank {
            let col = self.lambda.column(i);
            let sq = col.norm_squared();
            for c in 0..dim {
                w[(i, c)] = col[c] / sq;
            }
        }
        w
    }
}

pub fn diffusion_matrix(chain: &FiniteChain, kernel: &MartingaleKernel) -> Result<DiffusionMatrix> {
    let n = chain.n_states();
    let dim = kernel.dim();
    let mut d = DMatrix::<f64>::zeros(dim, dim);
    for x in 0..n {
        for y in 0..n {
            if let Some(hv) = kernel.get(x, y) {
                let w = chain.pi()[x] * chain.q()[(x, y)];
                for i in 0..dim {
                    for j in 0..dim {
                        d[(i, j)] += w * hv[i] * hv[j];
                    }
                }
            }
        }
    }
    d = (&d + d.transpose()) * 0.5;
    factorize(d)
}

/// Symmetric eigendecomposition of a PSD matrix, keeping eigenvalues above
/// [`EIGEN_CUTOFF`].
pub fn factorize(d: DMatrix<f64>) -> Result<DiffusionMatrix> {
    let dim = d.nrows();
    let eig = SymmetricEigen::new(d.clone());
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if let Some(&min) = eigenvalues.last() {
        if min < -EIGEN_CUTOFF {
            return Err(Error::SolveFailure(format!(
                "diffusion matrix has negative eigenvalue {min:e}"
            )));
        }
    }
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > EIGEN_CUTOFF)
        .collect();
    let rank = kept.len();
    let mut lambda = DMatrix::zeros(dim, rank);
    for (col, &i) in kept.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for r in 0..dim {
            lambda[(r, col)] = eig.eigenvectors[(r, i)] * s;
        }
    }
    Ok(DiffusionMatrix {
        d,
        lambda,
        rank,
        eigenvalues,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentExponents {
    pub p: f64,
    pub alpha: f64,
    /// `(3 - 2 alpha) p / (1 - 2 alpha + p)`.
    pub q_bound: f64,
    pub q: f64,
    pub a: f64,
    pub b: f64,
    /// `a - b/2 + alpha b`; negative in the admissible regime.
    pub drift: f64,
}

/// Picks `q = 2 + selector (q_bound - 2)` inside the admissible interval
/// `(2, q_bound)` and derives the Hoelder split `a = p(q-2)/(p-2)`, `b = q - a`.
pub fn lq_exponent(p: f64, alpha: f64, selector: f64) -> Result<MomentExponents> {
    if !(p > 2.0) || !p.is_finite() {
        return Err(Error::InvalidRegime(format!("p = {p} must exceed 2")));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidRegime(format!(
            "alpha = {alpha} must lie in (0, 1/2)"
        )));
    }
    if !(selector > 0.0 && selector < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "selector = {selector} must lie in (0, 1)"
        )));
    }
    let q_bound = (3.0 - 2.0 * alpha) * p / (1.0 - 2.0 * alpha + p);
    let q = 2.0 + selector * (q_bound - 2.0);
    let a = p * (q - 2.0) / (p - 2.0);
    let b = q - a;
    let drift = a - b / 2.0 + alpha * b;
    let exps = MomentExponents {
        p,
        alpha,
        q_bound,
        q,
        a,
        b,
        drift,
    };
    if !(q > 2.0 && q < p && q < q_bound && drift < 0.0) {
        return Err(Error::InvalidRegime(format!(
            "admissible interval numerically empty: {exps:?}"
        )));
    }
    Ok(exps)
}

/// Exact `E|R_n|^2` under stationarity. With `h` the Poisson solution,
/// `R_n = h(X_0) - h(X_n)` pathwise, so this is
/// `sum_{x,y} pi(x) Q^n(x,y) |h(x) - h(y)|^2`.
pub fn remainder_second_moment(chain: &FiniteChain, g: &Observable, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let h = poisson_solve(chain, g)?;
    let qn = chain.power(n);
    let states = chain.n_states();
    let mut total = 0.0;
    for x in 0..states {
        for y in 0..states {
            let w = chain.pi()[x] * qn[(x, y)];
            if w != 0.0 {
                total += w * (h.row(x) - h.row(y)).norm_squared();
            }
        }
    }
    Ok(total)
}
