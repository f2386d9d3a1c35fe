//! Small statistical helpers: standard normal CDF, one-sample
//! Kolmogorov-Smirnov against `N(0,1)`, percentiles, sample covariance.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use statrs::function::erf::erfc;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test of `sample` against the standard normal.
///
/// The empirical CDF is compared with `Phi` at the midpoints between
/// consecutive distinct sample values (plus one half-gap beyond each end).
/// For lattice-valued sums this is the usual continuity correction; for
/// continuous samples it changes the statistic by `O(1/n)`.
pub fn ks_standard_normal(sample: &[f64]) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let nf = n as f64;
    let mut atoms: Vec<(f64, usize)> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        match atoms.last_mut() {
            Some((v, c)) if *v == x => *c = i + 1,
            _ => atoms.push((x, i + 1)),
        }
    }
    let statistic = match atoms.len() {
        0 => 0.0,
        1 => {
            let f = normal_cdf(atoms[0].0);
            f.max(1.0 - f)
        }
        m => {
            let first_gap = atoms[1].0 - atoms[0].0;
            let last_gap = atoms[m - 1].0 - atoms[m - 2].0;
            let below = (normal_cdf(atoms[0].0 - 0.5 * first_gap)).abs();
            let above = (1.0 - normal_cdf(atoms[m - 1].0 + 0.5 * last_gap)).abs();
            atoms
                .windows(2)
                .map(|w| {
                    let mid = 0.5 * (w[0].0 + w[1].0);
                    (w[0].1 as f64 / nf - normal_cdf(mid)).abs()
                })
                .fold(below.max(above), f64::max)
        }
    };
    KsResult {
        statistic,
        p_value: ks_p_value(statistic, n),
        n,
    }
}

/// Asymptotic p-value with Stephens' small-sample correction
/// `lambda = (sqrt(n) + 0.12 + 0.11 / sqrt(n)) D`.
pub fn ks_p_value(statistic: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let sn = (n as f64).sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * statistic)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form converges fast for small lambda
        let c = -PI * PI / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=20)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (c * odd * odd).exp()
            })
            .sum::<f64>()
            * (2.0 * PI).sqrt()
            / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Nearest-rank percentile, `q` in `(0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub mean: Vec<f64>,
    /// Unbiased sample covariance.
    pub cov: DMatrix<f64>,
    /// Standard error of each covariance entry, from the sample variance of
    /// the centered products.
    pub std_err: DMatrix<f64>,
}

pub fn sample_covariance(samples: &[Vec<f64>]) -> CovarianceEstimate {
    let n = samples.len();
    let d = samples.first().map_or(0, Vec::len);
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(m, v)| *m += v / nf);
    }
    let mut cov = DMatrix::zeros(d, d);
    let mut std_err = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let prods: Vec<f64> = samples
                .iter()
                .map(|s| (s[i] - mean[i]) * (s[j] - mean[j]))
                .collect();
            let mp = prods.iter().sum::<f64>() / nf;
            let var = prods.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / (nf - 1.0);
            cov[(i, j)] = prods.iter().sum::<f64>() / (nf - 1.0);
            std_err[(i, j)] = (var / nf).sqrt();
        }
    }
    CovarianceEstimate { mean, cov, std_err }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_cdf_reference_points() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        // statrs erfc is good to roughly 1e-11
        assert_abs_diff_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-10);
        assert_abs_diff_eq!(normal_cdf(-1.0), 0.15865525393145707, epsilon = 1e-10);
    }

    #[test]
    fn kolmogorov_branches_agree_and_match_tables() {
        // critical values of the limiting distribution
        assert_abs_diff_eq!(kolmogorov_survival(1.3580986393225505), 0.05, epsilon = 1e-9);
        assert_abs_diff_eq!(kolmogorov_survival(1.6276236115189546), 0.01, epsilon = 1e-9);
        assert_abs_diff_eq!(kolmogorov_survival(0.8275735551899077), 0.5, epsilon = 1e-9);
        let lo = {
            let l: f64 = 1.18;
            let c = -PI * PI / (8.0 * l * l);
            1.0 - (1..=20)
                .map(|k| (c * ((2 * k - 1) as f64).powi(2)).exp())
                .sum::<f64>()
                * (2.0 * PI).sqrt()
                / l
        };
        assert_abs_diff_eq!(lo, kolmogorov_survival(1.18), epsilon = 1e-12);
    }

    #[test]
    fn ks_statistic_on_quantile_grid_is_small() {
        let n = 200;
        let xs: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                bisect(p)
            })
            .collect();
        let r = ks_standard_normal(&xs);
        assert!(r.statistic < 0.5 / n as f64);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn ks_lattice_uses_midpoints() {
        // symmetric two-point sample: the only interior midpoint is 0
        let xs = [-1.0, 1.0, -1.0, 1.0];
        let r = ks_standard_normal(&xs);
        let tail = normal_cdf(-2.0);
        assert_abs_diff_eq!(r.statistic, tail, epsilon = 1e-15);
        // a shifted sample is rejected
        let shifted: Vec<f64> = (0..400).map(|i| 1.0 + (i % 7) as f64 * 0.01).collect();
        assert!(ks_standard_normal(&shifted).p_value < 1e-6);
    }

    fn bisect(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), 95.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }

    #[test]
    fn covariance_of_two_points() {
        let est = sample_covariance(&[vec![1.0, 2.0], vec![-1.0, -2.0]]);
        assert_eq!(est.mean, vec![0.0, 0.0]);
        assert_eq!(est.cov, DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 8.0]));
    }
}
