//! Finite-state Markov chains and centered observables.
//!
//! A [`FiniteChain`] is a validated row-stochastic, irreducible transition
//! matrix together with its stationary distribution. An [`Observable`] is a
//! table of `d`-vectors, one per state, with zero stationary mean.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default moment exponent attached to observables. Functions on a finite
/// state space are bounded, so any `p > 2` is admissible.
pub const DEFAULT_P_EXPONENT: f64 = 4.0;

const POWER_ITER_MAX: usize = 200_000;
const POWER_ITER_TOL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainTolerances {
    /// Allowed deviation of each row sum from 1.
    pub stochastic: f64,
    /// Allowed sup-norm of `pi Q - pi`.
    pub stationary: f64,
}

impl Default for ChainTolerances {
    fn default() -> Self {
        Self {
            stochastic: 1e-12,
            stationary: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteChain {
    q: DMatrix<f64>,
    pi: DVector<f64>,
    period: usize,
    pi_crosscheck: Option<f64>,
}

impl FiniteChain {
    pub fn n_states(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    /// Period of the chain (gcd of cycle lengths in the support graph).
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn period_flag(&self) -> bool {
        self.period > 1
    }

    /// Sup-norm distance between the direct-solve and damped power-iteration
    /// stationary vectors, when power iteration converged.
    pub fn pi_crosscheck(&self) -> Option<f64> {
        self.pi_crosscheck
    }

    /// `(Qh)(x) = sum_y Q(x,y) h(y)`, applied column-wise.
    pub fn apply(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        &self.q * h
    }

    /// `Q^k` by repeated squaring.
    pub fn power(&self, k: usize) -> DMatrix<f64> {
        let n = self.n_states();
        let mut result = DMatrix::identity(n, n);
        let mut base = self.q.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        result
    }

    pub fn stationarity_residual(&self) -> f64 {
        stationarity_residual(&self.q, &self.pi)
    }

    /// `(sum_x pi(x) |h(x)|^2)^{1/2}` for an `n_states x d` table.
    pub fn l2_norm(&self, h: &DMatrix<f64>) -> f64 {
        h.row_iter()
            .zip(self.pi.iter())
            .map(|(row, &w)| w * row.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Pi-weighted column means of an `n_states x d` table.
    pub fn pi_mean(&self, h: &DMatrix<f64>) -> DVector<f64> {
        h.transpose() * &self.pi
    }
}

/// Validates a transition matrix and computes its stationary distribution.
///
/// Irreducibility is checked by forward and backward reachability from state 0
/// on the support graph. The stationary vector comes from a direct solve of
/// `(Q^T - I) pi = 0` with the normalization row, and is cross-checked against
/// power iteration on the lazy chain `(I + Q) / 2`.
pub fn validate_chain(q: DMatrix<f64>, tol: &ChainTolerances) -> Result<FiniteChain> {
    let (rows, cols) = q.shape();
    if rows != cols || rows == 0 {
        return Err(Error::NotSquare { rows, cols });
    }
    for i in 0..rows {
        for j in 0..cols {
            let v = q[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        let sum: f64 = q.row(i).sum();
        if (sum - 1.0).abs() > tol.stochastic {
            return Err(Error::NotStochastic {
                row: i,
                sum,
                tol: tol.stochastic,
            });
        }
    }

    if let Some(unreachable) = first_unreachable(&q) {
        return Err(Error::Reducible { unreachable });
    }

    let direct = solve_stationary(&q);
    let iterated = power_iteration(&q);

    let pi = match (direct, &iterated) {
        (Some(d), Some(p)) => {
            if stationarity_residual(&q, p) < stationarity_residual(&q, &d) {
                p.clone()
            } else {
                d
            }
        }
        (Some(d), None) => d,
        (None, Some(p)) => p.clone(),
        (None, None) => {
            return Err(Error::SolveFailure(
                "stationary distribution: singular system and power iteration did not converge"
                    .into(),
            ))
        }
    };
    let residual = stationarity_residual(&q, &pi);
    if residual > tol.stationary {
        return Err(Error::Stationarity { residual });
    }
    let pi_crosscheck = iterated.map(|p| (&p - &pi).amax());
    let period = period(&q);

    Ok(FiniteChain {
        q,
        pi,
        period,
        pi_crosscheck,
    })
}

/// `pi(x) Q(x,y)`: the joint law of `(X_0, X_1)` under stationarity.
pub fn edge_measure(chain: &FiniteChain) -> DMatrix<f64> {
    let n = chain.n_states();
    DMatrix::from_fn(n, n, |x, y| chain.pi[x] * chain.q[(x, y)])
}

#[derive(Debug, Clone)]
pub struct Observable {
    values: DMatrix<f64>,
    p_exponent: f64,
}

impl Observable {
    /// Wraps an already-centered table, checking the pi-mean within `1e-10`.
    pub fn new(values: DMatrix<f64>, chain: &FiniteChain) -> Result<Self> {
        check_rows(&values, chain)?;
        let mean = chain.pi_mean(&values);
        if let Some((column, &m)) = mean.iter().enumerate().find(|(_, m)| m.abs() > 1e-10) {
            return Err(Error::NotCentered { column, mean: m });
        }
        Ok(Self {
            values,
            p_exponent: DEFAULT_P_EXPONENT,
        })
    }

    pub fn with_p_exponent(mut self, p: f64) -> Result<Self> {
        if !(p > 2.0) {
            return Err(Error::InvalidArgument(format!(
                "moment exponent p must exceed 2, got {p}"
            )));
        }
        self.p_exponent = p;
        Ok(self)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_states(&self) -> usize {
        self.values.nrows()
    }

    pub fn p_exponent(&self) -> f64 {
        self.p_exponent
    }

    /// `max_x |g(x)|` in the Euclidean norm.
    pub fn max_abs(&self) -> f64 {
        self.values
            .row_iter()
            .map(|r| r.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Subtracts the pi-mean from every column of `raw`.
pub fn center_observable(raw: &DMatrix<f64>, chain: &FiniteChain) -> Result<Observable> {
    check_rows(raw, chain)?;
    if raw.ncols() == 0 {
        return Err(Error::Dimension("observable needs at least one column".into()));
    }
    let mean = chain.pi_mean(raw);
    let mut values = raw.clone();
    for (j, mut col) in values.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    Ok(Observable {
        values,
        p_exponent: DEFAULT_P_EXPONENT,
    })
}

fn check_rows(values: &DMatrix<f64>, chain: &FiniteChain) -> Result<()> {
    if values.nrows() != chain.n_states() {
        return Err(Error::Dimension(format!(
            "observable has {} rows, chain has {} states",
            values.nrows(),
            chain.n_states()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("observable has non-finite entries".into()));
    }
    Ok(())
}

fn stationarity_residual(q: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    (q.tr_mul(pi) - pi).amax()
}

fn solve_stationary(q: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = q.nrows();
    let mut a = q.transpose() - DMatrix::<f64>::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b)?;
    normalize(pi)
}

fn power_iteration(q: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = q.nrows();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_ITER_MAX {
        let next = (q.tr_mul(&x) + &x) * 0.5;
        let delta = (&next - &x).amax();
        x = next;
        if delta < POWER_ITER_TOL {
            return normalize(x);
        }
    }
    None
}

fn normalize(mut pi: DVector<f64>) -> Option<DVector<f64>> {
    if pi.iter().any(|v| !v.is_finite()) {
        return None;
    }
    pi.iter_mut().for_each(|v| *v = v.max(0.0));
    let s = pi.sum();
    if s <= 0.0 {
        return None;
    }
    Some(pi / s)
}

fn reachable(q: &DMatrix<f64>, reverse: bool) -> Vec<bool> {
    let n = q.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let p = if reverse { q[(v, u)] } else { q[(u, v)] };
            if p > 0.0 && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

fn first_unreachable(q: &DMatrix<f64>) -> Option<usize> {
    let fwd = reachable(q, false);
    let bwd = reachable(q, true);
    (0..q.nrows()).find(|&i| !(fwd[i] && bwd[i]))
}

/// Period of an irreducible chain via BFS levels: the gcd of
/// `level(u) + 1 - level(v)` over all support edges `u -> v`.
fn period(q: &DMatrix<f64>) -> usize {
    let n = q.nrows();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if q[(u, v)] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..n {
        for v in 0..n {
            if q[(u, v)] > 0.0 {
                let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                g = gcd(g, diff);
            }
        }
    }
    g.max(1)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn chain(rows: &[&[f64]]) -> FiniteChain {
        let n = rows.len();
        let q = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        validate_chain(q, &ChainTolerances::default()).unwrap()
    }

    #[test]
    fn alternating_chain_is_periodic_with_uniform_pi() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_abs_diff_eq!(c.pi()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.pi()[1], 0.5, epsilon = 1e-15);
        assert!(c.period_flag());
        assert_eq!(c.period(), 2);
    }

    #[test]
    fn iid_chain_has_row_as_pi() {
        let p = [0.2, 0.5, 0.3];
        let c = chain(&[&p, &p, &p]);
        for i in 0..3 {
            assert_abs_diff_eq!(c.pi()[i], p[i], epsilon = 1e-14);
        }
        assert!(!c.period_flag());
    }

    #[test]
    fn three_cycle_has_period_three() {
        let c = chain(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(c.period(), 3);
    }

    #[test]
    fn rejects_substochastic_rows() {
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.49, 0.5, 0.5]);
        let err = validate_chain(q, &ChainTolerances::default()).unwrap_err();
        assert!(matches!(err, Error::NotStochastic { row: 0, .. }));
    }

    #[test]
    fn rejects_reducible_block_matrix() {
        let q = DMatrix::from_row_slice(
            3,
            3,
            &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0],
        );
        let err = validate_chain(q, &ChainTolerances::default()).unwrap_err();
        assert!(matches!(err, Error::Reducible { unreachable: 2 }));
    }

    #[test]
    fn rejects_transient_state() {
        // state 1 leads to 0 but is never re-entered
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            validate_chain(q, &ChainTolerances::default()),
            Err(Error::Reducible { .. })
        ));
    }

    #[test]
    fn rejects_negative_and_non_square() {
        let q = DMatrix::from_row_slice(2, 2, &[1.5, -0.5, 0.5, 0.5]);
        assert!(matches!(
            validate_chain(q, &ChainTolerances::default()),
            Err(Error::InvalidEntry { .. })
        ));
        let q = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        assert!(matches!(
            validate_chain(q, &ChainTolerances::default()),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn edge_measure_of_alternating_chain() {
        let c = chain(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let e = edge_measure(&c);
        assert_eq!(e, DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]));
    }

    #[test]
    fn edge_measure_of_iid_chain_is_product() {
        let p = [0.1, 0.6, 0.3];
        let c = chain(&[&p, &p, &p]);
        let e = edge_measure(&c);
        for x in 0..3 {
            for y in 0..3 {
                assert_abs_diff_eq!(e[(x, y)], p[x] * p[y], epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(e.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn centering_indicator_columns() {
        let p = [0.5, 0.25, 0.25];
        let c = chain(&[&p, &p, &p]);
        let raw = DMatrix::<f64>::identity(3, 3);
        let g = center_observable(&raw, &c).unwrap();
        for x in 0..3 {
            for j in 0..3 {
                let expect = if x == j { 1.0 } else { 0.0 } - p[j];
                assert_abs_diff_eq!(g.values()[(x, j)], expect, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn centering_constant_gives_zero() {
        let c = chain(&[&[0.3, 0.7], &[0.6, 0.4]]);
        let raw = DMatrix::from_element(2, 2, 3.5);
        let g = center_observable(&raw, &c).unwrap();
        assert!(g.values().amax() < 1e-15);
    }

    #[test]
    fn observable_new_rejects_uncentered() {
        let c = chain(&[&[0.3, 0.7], &[0.6, 0.4]]);
        let raw = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            Observable::new(raw, &c),
            Err(Error::NotCentered { column: 0, .. })
        ));
    }

    #[test]
    fn p_exponent_must_exceed_two() {
        let c = chain(&[&[0.3, 0.7], &[0.6, 0.4]]);
        let g = center_observable(&DMatrix::from_row_slice(2, 1, &[1.0, 0.0]), &c).unwrap();
        assert!(g.clone().with_p_exponent(2.0).is_err());
        assert_eq!(g.with_p_exponent(6.0).unwrap().p_exponent(), 6.0);
    }

    #[test]
    fn power_matches_repeated_product() {
        let c = chain(&[&[0.1, 0.9, 0.0], &[0.0, 0.2, 0.8], &[0.7, 0.0, 0.3]]);
        let mut acc = DMatrix::<f64>::identity(3, 3);
        for k in 0..9 {
            assert!((c.power(k) - &acc).amax() < 1e-14);
            acc = &acc * c.q();
        }
    }
}
