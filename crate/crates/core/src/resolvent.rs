//! Resolvent equation `(1 + eps) h - Q h = g`, the partial sums
//! `T_n = sum_{k<n} Q^k g`, and growth-exponent estimation.

use nalgebra::DMatrix;

use crate::chain::{FiniteChain, Observable};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub epsilon: f64,
    pub h: DMatrix<f64>,
    /// Sup-norm of `(1 + eps) h - Q h - g`.
    pub residual: f64,
}

/// Solves `((1 + eps) I - Q) h = g` by dense LU. The matrix is strictly
/// diagonally dominant for `eps > 0`.
pub fn solve_resolvent(
    chain: &FiniteChain,
    g: &Observable,
    epsilon: f64,
) -> Result<ResolventSolution> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let n = chain.n_states();
    let a = DMatrix::<f64>::identity(n, n) * (1.0 + epsilon) - chain.q();
    let h = a
        .lu()
        .solve(g.values())
        .ok_or_else(|| Error::SolveFailure(format!("resolvent matrix singular at eps={epsilon}")))?;
    let residual = resolvent_residual(chain, g, epsilon, &h);
    let bound = 1e-9 * (1.0 + g.values().amax());
    if !(residual <= bound) {
        return Err(Error::SolveFailure(format!(
            "resolvent residual {residual:e} exceeds {bound:e} at eps={epsilon}"
        )));
    }
    Ok(ResolventSolution {
        epsilon,
        h,
        residual,
    })
}

pub fn resolvent_residual(
    chain: &FiniteChain,
    g: &Observable,
    epsilon: f64,
    h: &DMatrix<f64>,
) -> f64 {
    (h * (1.0 + epsilon) - chain.apply(h) - g.values()).amax()
}

#[derive(Debug, Clone)]
pub struct SeriesTruncation {
    pub h: DMatrix<f64>,
    /// `(1 + eps)^{-K} max|g| / eps`.
    pub error_bound: f64,
}

/// `sum_{k=1}^{K} (1 + eps)^{-k} Q^{k-1} g`.
pub fn resolvent_series(
    chain: &FiniteChain,
    g: &Observable,
    epsilon: f64,
    terms: usize,
) -> Result<SeriesTruncation> {
    if terms == 0 {
        return Err(Error::InvalidArgument("series needs at least one term".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let decay = 1.0 / (1.0 + epsilon);
    let mut power_g = g.values().clone();
    let mut weight = decay;
    let mut h = &power_g * weight;
    for _ in 1..terms {
        power_g = chain.apply(&power_g);
        weight *= decay;
        h += &power_g * weight;
    }
    let error_bound = decay.powi(terms.min(i32::MAX as usize) as i32) * g.values().amax() / epsilon;
    Ok(SeriesTruncation { h, error_bound })
}

/// Smallest `K` with `(1 + eps)^{-K} max|g| / eps < target`.
pub fn series_terms_for(g: &Observable, epsilon: f64, target: f64) -> usize {
    let scale = g.values().amax() / epsilon;
    if scale < target {
        return 1;
    }
    ((scale / target).ln() / (1.0 + epsilon).ln()).floor() as usize + 1
}

/// Table of `T_n = sum_{k<n} Q^k g` for `0 <= n <= n_max` with their
/// `L^2(pi)` norms. `T_0 = 0`.
#[derive(Debug, Clone)]
pub struct PartialSumTable {
    t: Vec<DMatrix<f64>>,
    norms: Vec<f64>,
}

impl PartialSumTable {
    pub fn n_max(&self) -> usize {
        self.t.len() - 1
    }

    pub fn get(&self, n: usize) -> &DMatrix<f64> {
        &self.t[n]
    }

    /// `T_n(x)` as a slice-backed row.
    pub fn at(&self, n: usize, x: usize) -> Vec<f64> {
        self.t[n].row(x).iter().copied().collect()
    }

    pub fn norm(&self, n: usize) -> f64 {
        self.norms[n]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// `max_{j <= n} |T_j(x)|` for every state, for every `n` in the table.
    /// Row `n` of the result holds the running maxima.
    pub fn running_max(&self) -> Vec<Vec<f64>> {
        let states = self.t[0].nrows();
        let mut current = vec![0.0f64; states];
        self.t
            .iter()
            .map(|tn| {
                for (x, c) in current.iter_mut().enumerate() {
                    *c = c.max(tn.row(x).norm());
                }
                current.clone()
            })
            .collect()
    }
}

pub fn partial_sums(chain: &FiniteChain, g: &Observable, n_max: usize) -> Result<PartialSumTable> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let zero = DMatrix::zeros(g.n_states(), g.dim());
    let mut t = Vec::with_capacity(n_max + 1);
    let mut norms = Vec::with_capacity(n_max + 1);
    t.push(zero);
    norms.push(0.0);
    for n in 0..n_max {
        let next = g.values() + chain.apply(&t[n]);
        norms.push(chain.l2_norm(&next));
        t.push(next);
    }
    Ok(PartialSumTable { t, norms })
}

#[derive(Debug, Clone)]
pub struct GrowthReport {
    pub alpha_hat: f64,
    /// `max ||T_n||_2^2 / n` over every `n` in the fit range.
    pub c_hat: f64,
    pub fit_range: (usize, usize),
    pub residual_r2: f64,
    /// Dyadic `n` used in the fit.
    pub fitted: Vec<usize>,
    /// Dyadic `n` whose norm vanished and were left out of the log fit.
    pub excluded_zero: Vec<usize>,
    /// Fewer than two non-zero dyadic norms: slope reported as 0.
    pub degenerate: bool,
}

/// Least-squares slope of `log ||T_n||_2` against `log n` over dyadic `n`
/// in `fit_range`.
pub fn estimate_growth(table: &PartialSumTable, fit_range: (usize, usize)) -> Result<GrowthReport> {
    let (lo, hi) = fit_range;
    if lo == 0 || lo > hi || hi > table.n_max() {
        return Err(Error::InvalidArgument(format!(
            "fit range {fit_range:?} not within table 1..={}",
            table.n_max()
        )));
    }
    let dyadic: Vec<usize> = (0..usize::BITS)
        .map(|j| 1usize << j)
        .skip_while(|&n| n < lo)
        .take_while(|&n| n <= hi)
        .collect();
    if dyadic.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "fit range {fit_range:?} holds {} dyadic points, need at least 4",
            dyadic.len()
        )));
    }
    let scale = table.norm(1).max(f64::MIN_POSITIVE);
    let (fitted, excluded_zero): (Vec<usize>, Vec<usize>) = dyadic
        .iter()
        .partition(|&&n| table.norm(n) > 1e-12 * scale);

    let c_hat = (lo..=hi)
        .map(|n| table.norm(n).powi(2) / n as f64)
        .fold(0.0, f64::max);

    let (alpha_hat, residual_r2, degenerate) = if fitted.len() < 2 {
        (0.0, 0.0, true)
    } else {
        let xs: Vec<f64> = fitted.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = fitted.iter().map(|&n| table.norm(n).ln()).collect();
        let (slope, r2) = least_squares(&xs, &ys);
        (slope, r2, false)
    };

    Ok(GrowthReport {
        alpha_hat,
        c_hat,
        fit_range,
        residual_r2,
        fitted,
        excluded_zero,
        degenerate,
    })
}

/// Slope and coefficient of determination of an ordinary least-squares line.
/// A perfectly flat response gets `R^2 = 1`.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy <= 1e-30 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    (slope, r2)
}

#[derive(Debug, Clone)]
pub struct ResolventScan {
    /// `(delta_k, ||h_{delta_k}||_2)` for `delta_k = 2^{-k}`, `k = 1..=k_max`.
    pub points: Vec<(f64, f64)>,
    /// Least-squares slope of `log ||h_delta||` against `log(1/delta)`;
    /// `None` when fewer than two norms are non-zero.
    pub exponent: Option<f64>,
}

pub fn resolvent_norm_scan(chain: &FiniteChain, g: &Observable, k_max: usize) -> Result<ResolventScan> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let points = (1..=k_max)
        .map(|k| {
            let delta = 0.5f64.powi(k as i32);
            solve_resolvent(chain, g, delta).map(|s| (delta, chain.l2_norm(&s.h)))
        })
        .collect::<Result<Vec<_>>>()?;
    let nz: Vec<_> = points.iter().filter(|(_, norm)| *norm > 0.0).collect();
    let exponent = (nz.len() >= 2).then(|| {
        let xs: Vec<f64> = nz.iter().map(|(d, _)| -d.ln()).collect();
        let ys: Vec<f64> = nz.iter().map(|(_, v)| v.ln()).collect();
        least_squares(&xs, &ys).0
    });
    Ok(ResolventScan { points, exponent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{center_observable, validate_chain, ChainTolerances};
    use approx::assert_abs_diff_eq;

    fn chain(rows: &[&[f64]]) -> FiniteChain {
        let n = rows.len();
        validate_chain(
            DMatrix::from_fn(n, n, |i, j| rows[i][j]),
            &ChainTolerances::default(),
        )
        .unwrap()
    }

    fn obs(c: &FiniteChain, vals: &[f64]) -> Observable {
        center_observable(&DMatrix::from_column_slice(vals.len(), 1, vals), c).unwrap()
    }

    #[test]
    fn zero_observable_gives_zero_solution() {
        let c = chain(&[&[0.3, 0.7], &[0.6, 0.4]]);
        let g = obs(&c, &[0.0, 0.0]);
        let s = solve_resolvent(&c, &g, 0.1).unwrap();
        assert_eq!(s.h.amax(), 0.0);
    }

    #[test]
    fn alternating_closed_form() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let g = obs(&c, &[1.0, -1.0]);
        for eps in [1.0, 0.1, 1e-3] {
            let s = solve_resolvent(&c, &g, eps).unwrap();
            assert_abs_diff_eq!(s.h[0], 1.0 / (2.0 + eps), epsilon = 1e-13);
            assert_abs_diff_eq!(s.h[1], -1.0 / (2.0 + eps), epsilon = 1e-13);
        }
    }

    #[test]
    fn iid_chain_closed_form() {
        let p = [0.2, 0.3, 0.5];
        let c = chain(&[&p, &p, &p]);
        let g = obs(&c, &[1.0, -2.0, 4.0]);
        let eps = 0.25;
        let s = solve_resolvent(&c, &g, eps).unwrap();
        assert!((&s.h - g.values() / (1.0 + eps)).amax() < 1e-13);
        let one = resolvent_series(&c, &g, eps, 1).unwrap();
        let many = resolvent_series(&c, &g, eps, 7).unwrap();
        assert!((&one.h - g.values() / (1.0 + eps)).amax() < 1e-15);
        assert!((&many.h - &one.h).amax() < 1e-13);
    }

    #[test]
    fn rejects_nonpositive_epsilon() {
        let c = chain(&[&[0.3, 0.7], &[0.6, 0.4]]);
        let g = obs(&c, &[1.0, 0.0]);
        assert!(solve_resolvent(&c, &g, 0.0).is_err());
        assert!(resolvent_series(&c, &g, 0.5, 0).is_err());
    }

    #[test]
    fn series_term_count_meets_target() {
        let c = chain(&[&[0.3, 0.7], &[0.6, 0.4]]);
        let g = obs(&c, &[1.0, 0.0]);
        let k = series_terms_for(&g, 0.1, 1e-10);
        let s = resolvent_series(&c, &g, 0.1, k).unwrap();
        assert!(s.error_bound < 1e-10);
        let s = resolvent_series(&c, &g, 0.1, k - 1).unwrap();
        assert!(s.error_bound >= 1e-10);
    }

    #[test]
    fn partial_sums_alternate_on_periodic_chain() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let g = obs(&c, &[1.0, -1.0]);
        let t = partial_sums(&c, &g, 9).unwrap();
        for n in 1..=9 {
            let expect = if n % 2 == 1 { g.values().clone() } else { DMatrix::zeros(2, 1) };
            assert_eq!(t.get(n), &expect);
        }
    }

    #[test]
    fn iid_growth_is_flat() {
        let p = [0.2, 0.3, 0.5];
        let c = chain(&[&p, &p, &p]);
        let g = obs(&c, &[1.0, -2.0, 4.0]);
        let t = partial_sums(&c, &g, 256).unwrap();
        let r = estimate_growth(&t, (1, 256)).unwrap();
        assert!(r.alpha_hat.abs() < 1e-12);
        assert!(!r.degenerate);
        assert_abs_diff_eq!(r.c_hat, c.l2_norm(g.values()).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn alternating_growth_excludes_even_dyadics() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let g = obs(&c, &[1.0, -1.0]);
        let t = partial_sums(&c, &g, 64).unwrap();
        let r = estimate_growth(&t, (1, 64)).unwrap();
        assert_eq!(r.fitted, vec![1]);
        assert_eq!(r.excluded_zero, vec![2, 4, 8, 16, 32, 64]);
        assert!(r.degenerate);
        assert_eq!(r.alpha_hat, 0.0);
        assert_abs_diff_eq!(r.c_hat, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn growth_needs_four_dyadics() {
        let c = chain(&[&[0.3, 0.7], &[0.6, 0.4]]);
        let g = obs(&c, &[1.0, 0.0]);
        let t = partial_sums(&c, &g, 64).unwrap();
        assert!(estimate_growth(&t, (4, 20)).is_err());
        assert!(estimate_growth(&t, (1, 128)).is_err());
    }

    #[test]
    fn norm_scan_iid_closed_form() {
        let p = [0.5, 0.5];
        let c = chain(&[&p, &p]);
        let g = obs(&c, &[1.0, -1.0]);
        let scan = resolvent_norm_scan(&c, &g, 12).unwrap();
        for (delta, norm) in scan.points {
            assert_abs_diff_eq!(norm, 1.0 / (1.0 + delta), epsilon = 1e-13);
        }
    }

    #[test]
    fn running_max_is_monotone() {
        let c = chain(&[&[0.1, 0.9, 0.0], &[0.0, 0.2, 0.8], &[0.7, 0.0, 0.3]]);
        let g = obs(&c, &[1.0, -1.0, 0.5]);
        let t = partial_sums(&c, &g, 50).unwrap();
        let rm = t.running_max();
        for n in 1..=50 {
            for x in 0..3 {
                assert!(rm[n][x] >= rm[n - 1][x]);
                let direct = (0..=n).map(|j| t.get(j).row(x).norm()).fold(0.0, f64::max);
                assert_eq!(rm[n][x], direct);
            }
        }
    }
}
