use mgapprox::chain::{center_observable, edge_measure};
use mgapprox::decomposition::{diffusion_matrix, limit_kernel, lq_exponent, poisson_kernel};
use mgapprox::oracle::{enumerate_paths, exact_sn_covariance};
use mgapprox::reference::{random_chain, random_observable};
use mgapprox::resolvent::{partial_sums, resolvent_residual, resolvent_series, series_terms_for, solve_resolvent};
use mgapprox::simulate::{parallel_paths, path_functionals, sample_path, scaled_path, Variant};
use mgapprox::verify::{
    block_decomposition_diagnostic, default_lambda_grid, make_schedule, maximal_inequality_check, required_c,
    sup_decay_check, DecayQuantity, DecaySamples,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn chain_case() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 2usize..=8, 1usize..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stationary_law_and_edge_marginals((seed, n, _) in chain_case()) {
        let c = random_chain(seed, n);
        prop_assert!(c.stationarity_residual() <= 1e-10);
        prop_assert!((c.pi().sum() - 1.0).abs() <= 1e-12);
        prop_assert!(c.pi().iter().all(|&p| p >= 0.0));
        let e = edge_measure(&c);
        for x in 0..n {
            prop_assert!((e.row(x).sum() - c.pi()[x]).abs() <= 1e-12);
            prop_assert!((e.column(x).sum() - c.pi()[x]).abs() <= 1e-10);
        }
    }

    #[test]
    fn centering_is_idempotent((seed, n, d) in chain_case(), shift in -5.0f64..5.0) {
        let c = random_chain(seed, n);
        let raw = DMatrix::from_fn(n, d, |x, j| ((x * 7 + j * 3) % 5) as f64 + shift);
        let once = center_observable(&raw, &c).unwrap();
        let twice = center_observable(once.values(), &c).unwrap();
        prop_assert!((once.values() - twice.values()).amax() <= 1e-14);
        prop_assert!(c.pi_mean(once.values()).amax() <= 1e-10);
    }

    #[test]
    fn resolvent_solution_bounds((seed, n, d) in chain_case(), eps in 0.01f64..4.0) {
        let c = random_chain(seed, n);
        let g = random_observable(seed, &c, d);
        let sol = solve_resolvent(&c, &g, eps).unwrap();
        prop_assert!(resolvent_residual(&c, &g, eps, &sol.h) <= 1e-9 * (1.0 + g.max_abs()));
        prop_assert!(c.l2_norm(&sol.h) <= c.l2_norm(g.values()) / eps * (1.0 + 1e-12));
        let ser = resolvent_series(&c, &g, eps, series_terms_for(&g, eps, 1e-11)).unwrap();
        prop_assert!(ser.error_bound < 1e-10);
        prop_assert!((&ser.h - &sol.h).amax() <= 1e-9);
    }

    #[test]
    fn partial_sum_recursion((seed, n, d) in chain_case()) {
        let c = random_chain(seed, n);
        let g = random_observable(seed, &c, d);
        let t = partial_sums(&c, &g, 200).unwrap();
        prop_assert_eq!(t.get(1), g.values());
        for k in 0..200 {
            let gap = (t.get(k + 1) - c.apply(t.get(k)) - g.values()).amax();
            prop_assert!(gap <= 1e-10);
        }
    }

    #[test]
    fn kernel_and_diffusion_invariants((seed, n, d) in chain_case()) {
        let c = random_chain(seed, n);
        let g = random_observable(seed, &c, d);
        let lim = limit_kernel(&c, &g, 60, 1e-12).unwrap();
        let exact = poisson_kernel(&c, &g).unwrap();
        prop_assert!(lim.martingale_defect(&c) <= 1e-10);
        prop_assert!(exact.martingale_defect(&c) <= 1e-10);
        prop_assert!(lim.l2_distance(&exact, &c) <= 1e-6);
        let dm = diffusion_matrix(&c, &lim).unwrap();
        prop_assert!((&dm.d - dm.d.transpose()).amax() <= 1e-12);
        prop_assert!(dm.eigenvalues.iter().all(|&l| l >= -1e-10));
        prop_assert!(dm.factor_error() <= 1e-10);
    }

    #[test]
    fn exponent_arithmetic(p in 2.01f64..12.0, alpha in 0.001f64..0.499, sel in 0.01f64..0.99) {
        let e = lq_exponent(p, alpha, sel).unwrap();
        prop_assert!(e.q > 2.0 && e.q < p && e.q < e.q_bound);
        prop_assert!((e.a - p * (e.q - 2.0) / (p - 2.0)).abs() <= 1e-12 * p);
        prop_assert!((e.a + e.b - e.q).abs() <= 1e-12 * p);
        prop_assert!(e.a - e.b / 2.0 + alpha * e.b < 0.0);
    }

    #[test]
    fn pathwise_identities((seed, n, d) in chain_case(), start_pick in 0usize..8, len in 0usize..300) {
        let c = random_chain(seed, n);
        let g = random_observable(seed, &c, d);
        let start = start_pick % n;
        let k = limit_kernel(&c, &g, 60, 1e-12).unwrap();
        let t = partial_sums(&c, &g, len).unwrap();
        let path = sample_path(&c, start, len, seed, 3).unwrap();
        prop_assert_eq!(path[0], start);
        let tr = path_functionals(&path, &g, &k, &t).unwrap();
        prop_assert!(tr.s.row(0).iter().chain(tr.m.row(0)).chain(tr.r.row(0)).all(|&v| v == 0.0));
        for i in 0..=len {
            for j in 0..d {
                prop_assert_eq!(tr.s.row(i)[j] - tr.m.row(i)[j] - tr.r.row(i)[j], 0.0);
                let want = tr.s.row(i)[j] - t.get(i)[(start, j)];
                prop_assert!((tr.s_tilde.row(i)[j] - want).abs() <= 1e-9 * (i as f64).max(1.0));
                if i < len {
                    let step = tr.s.row(i + 1)[j] - tr.s.row(i)[j];
                    prop_assert!((step - g.values()[(path[i], j)]).abs() <= 1e-12 * (1.0 + tr.s.row(i)[j].abs()));
                }
            }
        }
        let b = scaled_path(&tr, Variant::Plain);
        prop_assert!(b.at(0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn enumerated_law_is_a_probability((seed, n, d) in (any::<u64>(), 2usize..=4, 1usize..=2), len in 1usize..=6) {
        let c = random_chain(seed, n);
        let g = random_observable(seed, &c, d);
        let k = poisson_kernel(&c, &g).unwrap();
        for x in 0..n {
            let dist = enumerate_paths(&c, &g, &k, x, len, 1_000_000).unwrap();
            prop_assert!((dist.total_probability() - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn block_flag_holds_on_every_path() {
    for seed in 0..100u64 {
        let c = random_chain(seed, 3);
        let g = random_observable(seed, &c, 1 + (seed % 2) as usize);
        let k = limit_kernel(&c, &g, 60, 1e-12).unwrap();
        let t = partial_sums(&c, &g, 400).unwrap();
        let tr = path_functionals(&sample_path(&c, 0, 400, seed, 0).unwrap(), &g, &k, &t).unwrap();
        for j in 1..=20 {
            for (r, gamma) in [(2, 0.5), (2, 0.3), (3, 0.7)] {
                let sched = make_schedule(r, gamma, 1.05, j, 0.25, 4.0).unwrap();
                if sched.n_j > 400 {
                    continue;
                }
                assert!(sched.m_j * sched.ell_j >= sched.n_j);
                let b = block_decomposition_diagnostic(&tr, &sched).unwrap();
                assert!(b.holds, "seed {seed} j {j}: {b:?}");
            }
        }
    }
}

#[test]
fn maximal_inequality_has_no_violations() {
    let n_list: Vec<usize> = (0..=10).map(|j| 1usize << j).collect();
    let ks: Vec<u32> = (0..=6).collect();
    for seed in 0..30u64 {
        let c = random_chain(500 + seed, 2 + (seed % 7) as usize);
        let g = random_observable(500 + seed, &c, 1 + (seed % 3) as usize);
        let t = partial_sums(&c, &g, 1024).unwrap();
        let grid = default_lambda_grid(&t, 1024, 25);
        let rep = maximal_inequality_check(&c, &t, required_c(&t), &n_list, &grid, &ks).unwrap();
        assert_eq!(rep.violations, 0, "seed {seed}");
    }
}

#[test]
fn remainder_is_bounded_by_twice_the_poisson_potential() {
    for seed in 0..10u64 {
        let c = random_chain(900 + seed, 4);
        let g = random_observable(900 + seed, &c, 2);
        let k = poisson_kernel(&c, &g).unwrap();
        let max_h = k.potential().row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        let ns = [10, 100, 1000];
        let t = partial_sums(&c, &g, 1000).unwrap();
        let traces = parallel_paths(50, 2, |id| {
            path_functionals(&sample_path(&c, 1, 1000, seed, id)?, &g, &k, &t)
        })
        .unwrap();
        let samples = DecaySamples::from_traces(&traces, DecayQuantity::Remainder, &ns).unwrap();
        let bound: Vec<f64> = ns.iter().map(|&n| 2.0 * max_h / (n as f64).sqrt()).collect();
        let rep = sup_decay_check(&samples, f64::INFINITY, Some(bound)).unwrap();
        assert!(rep.within_bound, "seed {seed}");
    }
}

#[test]
fn paths_do_not_depend_on_worker_count() {
    let c = random_chain(3, 6);
    let one = parallel_paths(64, 1, |id| sample_path(&c, 2, 500, 42, id)).unwrap();
    let many = parallel_paths(64, 5, |id| sample_path(&c, 2, 500, 42, id)).unwrap();
    assert_eq!(one, many);
}

#[test]
fn stationary_covariance_approaches_diffusion_matrix() {
    for seed in 0..8u64 {
        let c = random_chain(700 + seed, 3 + seed as usize % 4);
        if c.period_flag() {
            continue;
        }
        let g = random_observable(700 + seed, &c, 2);
        let d = diffusion_matrix(&c, &poisson_kernel(&c, &g).unwrap()).unwrap().d;
        let gaps: Vec<f64> = (4..=12)
            .map(|j| {
                let n = 1usize << j;
                (exact_sn_covariance(&c, &g, n).unwrap() / n as f64 - &d).amax()
            })
            .collect();
        // O(1/n) approach: each doubling roughly halves the gap
        assert!(gaps.windows(2).all(|w| w[1] <= w[0] * 0.75 + 1e-13), "seed {seed}: {gaps:?}");
        assert!(gaps.last().unwrap() * 4096.0 < 50.0 * d.amax().max(1.0));
    }
}
