//! Exact ground truth on tiny instances: exhaustive path enumeration for the
//! joint law of `(S_n, M_n, R_n)`, and matrix-power moments of `S_n`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::chain::{FiniteChain, Observable};
use crate::decomposition::MartingaleKernel;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_PATHS: u64 = 10_000_000;

/// Values closer than this share an atom.
const QUANTUM: f64 = 1e-9;

/// One atom of the joint law. `s`, `m`, `r` are probability-weighted means of
/// the exact values that fell into the atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub prob: f64,
    pub s: Vec<f64>,
    pub m: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExactDistribution {
    pub start: usize,
    pub n: usize,
    pub dim: usize,
    pub atoms: Vec<Atom>,
}

impl ExactDistribution {
    pub fn total_probability(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }

    /// Probability of the atom whose quantized `(S, M, R)` key matches.
    pub fn probability_of(&self, s: &[f64], m: &[f64], r: &[f64]) -> f64 {
        let key = atom_key(s, m, r);
        self.atoms
            .iter()
            .find(|a| atom_key(&a.s, &a.m, &a.r) == key)
            .map_or(0.0, |a| a.prob)
    }

    /// `(probability, S..., M..., R...)` rows.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.atoms
            .iter()
            .map(|a| {
                std::iter::once(a.prob)
                    .chain(a.s.iter().copied())
                    .chain(a.m.iter().copied())
                    .chain(a.r.iter().copied())
                    .collect()
            })
            .collect()
    }
}

type Key = Vec<i64>;

#[derive(Default, Clone)]
struct Accum {
    prob: f64,
    s: Vec<f64>,
    m: Vec<f64>,
    r: Vec<f64>,
}

fn atom_key(s: &[f64], m: &[f64], r: &[f64]) -> Key {
    s.iter()
        .chain(m)
        .chain(r)
        .map(|v| (v / QUANTUM).round() as i64)
        .collect()
}

fn add_atom(map: &mut BTreeMap<Key, Accum>, prob: f64, s: &[f64], m: &[f64]) {
    let r: Vec<f64> = s.iter().zip(m).map(|(a, b)| a - b).collect();
    let entry = map.entry(atom_key(s, m, &r)).or_insert_with(|| Accum {
        prob: 0.0,
        s: vec![0.0; s.len()],
        m: vec![0.0; s.len()],
        r: vec![0.0; s.len()],
    });
    entry.prob += prob;
    entry.s.iter_mut().zip(s).for_each(|(a, v)| *a += prob * v);
    entry.m.iter_mut().zip(m).for_each(|(a, v)| *a += prob * v);
    entry.r.iter_mut().zip(&r).for_each(|(a, v)| *a += prob * v);
}

struct Walker<'a> {
    chain: &'a FiniteChain,
    g: &'a Observable,
    kernel: &'a MartingaleKernel,
    n: usize,
}

impl Walker<'_> {
    fn walk(
        &self,
        depth: usize,
        x: usize,
        prob: f64,
        s: &mut Vec<f64>,
        m: &mut Vec<f64>,
        out: &mut BTreeMap<Key, Accum>,
    ) -> Result<()> {
        if depth == self.n {
            add_atom(out, prob, s, m);
            return Ok(());
        }
        let d = s.len();
        for y in 0..self.chain.n_states() {
            let q = self.chain.q()[(x, y)];
            if q == 0.0 {
                continue;
            }
            let hv = self.kernel.get(x, y).ok_or(Error::MissingEdge { from: x, to: y })?;
            for c in 0..d {
                s[c] += self.g.values()[(x, c)];
                m[c] += hv[c];
            }
            self.walk(depth + 1, y, prob * q, s, m, out)?;
            for c in 0..d {
                s[c] -= self.g.values()[(x, c)];
                m[c] -= hv[c];
            }
        }
        Ok(())
    }
}

/// Exhaustive enumeration of all `n`-step paths from `start`, each weighted by
/// its transition-probability product. Parallel over the first step, merged
/// in state order.
pub fn enumerate_paths(
    chain: &FiniteChain,
    g: &Observable,
    kernel: &MartingaleKernel,
    start: usize,
    n: usize,
    max_paths: u64,
) -> Result<ExactDistribution> {
    let states = chain.n_states();
    if start >= states {
        return Err(Error::InvalidArgument(format!("start state {start} out of range")));
    }
    let needed = (states as f64).powi(n as i32);
    if needed > max_paths as f64 {
        return Err(Error::TooLarge {
            needed,
            limit: max_paths,
        });
    }
    let d = g.dim();
    let walker = Walker { chain, g, kernel, n };

    let merged = if n == 0 {
        let mut map = BTreeMap::new();
        add_atom(&mut map, 1.0, &vec![0.0; d], &vec![0.0; d]);
        map
    } else {
        let branches: Vec<BTreeMap<Key, Accum>> = (0..states)
            .into_par_iter()
            .map(|y| {
                let mut map = BTreeMap::new();
                let q = chain.q()[(start, y)];
                if q == 0.0 {
                    return Ok(map);
                }
                let hv = kernel.get(start, y).ok_or(Error::MissingEdge { from: start, to: y })?;
                let mut s: Vec<f64> = (0..d).map(|c| g.values()[(start, c)]).collect();
                let mut m = hv.to_vec();
                walker.walk(1, y, q, &mut s, &mut m, &mut map)?;
                Ok(map)
            })
            .collect::<Result<_>>()?;
        let mut map: BTreeMap<Key, Accum> = BTreeMap::new();
        for branch in branches {
            for (key, acc) in branch {
                let e = map.entry(key).or_insert_with(|| Accum {
                    prob: 0.0,
                    s: vec![0.0; d],
                    m: vec![0.0; d],
                    r: vec![0.0; d],
                });
                e.prob += acc.prob;
                e.s.iter_mut().zip(&acc.s).for_each(|(a, v)| *a += v);
                e.m.iter_mut().zip(&acc.m).for_each(|(a, v)| *a += v);
                e.r.iter_mut().zip(&acc.r).for_each(|(a, v)| *a += v);
            }
        }
        map
    };

    let atoms = merged
        .into_values()
        .map(|acc| {
            let inv = 1.0 / acc.prob;
            Atom {
                prob: acc.prob,
                s: acc.s.iter().map(|v| v * inv).collect(),
                m: acc.m.iter().map(|v| v * inv).collect(),
                r: acc.r.iter().map(|v| v * inv).collect(),
            }
        })
        .collect();
    Ok(ExactDistribution {
        start,
        n,
        dim: d,
        atoms,
    })
}

#[derive(Debug, Clone)]
pub struct ExactMoments {
    pub mean_s: Vec<f64>,
    pub cov_s: DMatrix<f64>,
    pub mean_m: Vec<f64>,
    /// `E|R_n|^2`.
    pub mean_r2: f64,
    /// `E[M_n M_n^T]`.
    pub mm_t: DMatrix<f64>,
}

pub fn exact_moments(dist: &ExactDistribution) -> ExactMoments {
    let d = dist.dim;
    let mut mean_s = vec![0.0; d];
    let mut mean_m = vec![0.0; d];
    let mut ss_t = DMatrix::<f64>::zeros(d, d);
    let mut mm_t = DMatrix::<f64>::zeros(d, d);
    let mut mean_r2 = 0.0;
    for a in &dist.atoms {
        for i in 0..d {
            mean_s[i] += a.prob * a.s[i];
            mean_m[i] += a.prob * a.m[i];
            for j in 0..d {
                ss_t[(i, j)] += a.prob * a.s[i] * a.s[j];
                mm_t[(i, j)] += a.prob * a.m[i] * a.m[j];
            }
        }
        mean_r2 += a.prob * a.r.iter().map(|v| v * v).sum::<f64>();
    }
    let cov_s = DMatrix::from_fn(d, d, |i, j| ss_t[(i, j)] - mean_s[i] * mean_s[j]);
    ExactMoments {
        mean_s,
        cov_s,
        mean_m,
        mean_r2,
        mm_t,
    }
}

/// Stationary `Cov(S_n) = n C_0 + sum_{l=1}^{n-1} (n - l)(C_l + C_l^T)` with
/// lag covariances `C_l = sum_x pi(x) g(x) (Q^l g)(x)^T`.
pub fn exact_sn_covariance(chain: &FiniteChain, g: &Observable, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let d = g.dim();
    let weighted_g = DMatrix::from_fn(g.n_states(), d, |x, c| chain.pi()[x] * g.values()[(x, c)]);
    let lag = |qlg: &DMatrix<f64>| weighted_g.transpose() * qlg;
    let mut qlg = g.values().clone();
    let mut cov = lag(&qlg) * n as f64;
    for l in 1..n {
        qlg = chain.apply(&qlg);
        let c = lag(&qlg);
        cov += (&c + c.transpose()) * (n - l) as f64;
    }
    Ok(cov)
}
