//! Named chains used throughout the tests, the CLI defaults and the bindings.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chain::{center_observable, validate_chain, ChainTolerances, FiniteChain, Observable};
use crate::error::Result;

pub fn chain_from_rows(rows: &[&[f64]]) -> Result<FiniteChain> {
    let n = rows.len();
    let q = DMatrix::from_fn(n, n, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN));
    validate_chain(q, &ChainTolerances::default())
}

fn scalar(chain: &FiniteChain, vals: &[f64]) -> Result<Observable> {
    center_observable(&DMatrix::from_column_slice(vals.len(), 1, vals), chain)
}

/// Deterministic two-cycle with `g = (1, -1)`.
pub fn alternating() -> (FiniteChain, Observable) {
    let c = chain_from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).expect("valid");
    let g = scalar(&c, &[1.0, -1.0]).expect("valid");
    (c, g)
}

/// Every row equal to `p`: i.i.d. sampling from `p`.
pub fn iid(p: &[f64]) -> Result<FiniteChain> {
    let rows: Vec<&[f64]> = vec![p; p.len()];
    chain_from_rows(&rows)
}

/// Fair coin with `g = +-1`; `D = 1`.
pub fn iid_pm_one() -> (FiniteChain, Observable) {
    let c = iid(&[0.5, 0.5]).expect("valid");
    let g = scalar(&c, &[1.0, -1.0]).expect("valid");
    (c, g)
}

/// Non-reversible doubly stochastic 3-state chain with a spectral gap, and
/// `g = (1, 0, -1)`.
pub fn three_state() -> (FiniteChain, Observable) {
    let c = chain_from_rows(&[&[0.5, 0.3, 0.2], &[0.2, 0.5, 0.3], &[0.3, 0.2, 0.5]]).expect("valid");
    let g = scalar(&c, &[1.0, 0.0, -1.0]).expect("valid");
    (c, g)
}

/// Two lazy 2-state blocks joined by `crossing` probability; `g` is the
/// block indicator, so mixing between blocks is what drives `T_n`.
pub fn two_block(crossing: f64) -> (FiniteChain, Observable) {
    let stay = 0.5 - crossing;
    let c = chain_from_rows(&[
        &[0.5, stay, crossing, 0.0],
        &[stay, 0.5, 0.0, crossing],
        &[crossing, 0.0, 0.5, stay],
        &[0.0, crossing, stay, 0.5],
    ])
    .expect("valid");
    let g = scalar(&c, &[1.0, 1.0, -1.0, -1.0]).expect("valid");
    (c, g)
}

/// Random irreducible chain: sparse random rows plus a guaranteed
/// `x -> x+1` cycle edge and a self-loop on state 0 (so it is aperiodic).
pub fn random_chain(seed: u64, n_states: usize) -> FiniteChain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::zeros(n_states, n_states);
    for x in 0..n_states {
        for y in 0..n_states {
            if rng.random::<f64>() > 0.35 {
                q[(x, y)] = rng.random_range(0.05..1.0);
            }
        }
        q[(x, (x + 1) % n_states)] += 0.2;
    }
    q[(0, 0)] += 0.1;
    for x in 0..n_states {
        let s: f64 = q.row(x).sum();
        for y in 0..n_states {
            q[(x, y)] /= s;
        }
        // absorb the last-ulp rounding into the largest entry
        let resid = 1.0 - q.row(x).sum();
        let imax = (0..n_states).max_by(|&a, &b| q[(x, a)].total_cmp(&q[(x, b)])).unwrap();
        q[(x, imax)] += resid;
    }
    validate_chain(q, &ChainTolerances::default()).expect("random chain is irreducible")
}

/// Random centered `d`-dimensional observable with entries in `[-2, 2]`.
pub fn random_observable(seed: u64, chain: &FiniteChain, d: usize) -> Observable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6F62_7365_7276_6162);
    let raw = DMatrix::from_fn(chain.n_states(), d, |_, _| rng.random_range(-2.0..2.0));
    center_observable(&raw, chain).expect("dimensions match")
}
