"""Smoke test for the mgapprox_py extension module."""

import math
import sys

import mgapprox_py as mg


def close(a, b, tol=1e-10):
    return abs(a - b) <= tol


def main():
    q = [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]]
    g = [[1.0], [0.0], [-1.0]]
    c = mg.Chain(q)
    print(c)
    assert c.n_states == 3 and not c.periodic
    assert close(sum(c.pi), 1.0, 1e-12)
    assert c.stationarity_residual() < 1e-10

    gc = mg.center(c, g)
    assert close(sum(p * row[0] for p, row in zip(c.pi, gc)), 0.0)

    h = mg.poisson_solve(c, g)
    h_eps = mg.solve_resolvent(c, g, 1e-6)
    assert max(abs(a[0] - b[0]) for a, b in zip(h, h_eps)) < 1e-4

    lim = mg.limit_kernel(c, g, tol=1e-14)
    exact = mg.poisson_kernel(c, g)
    assert lim.source != exact.source
    assert lim.martingale_defect(c) < 1e-10
    for x in range(3):
        for y in range(3):
            assert close(lim.get(x, y)[0], exact.get(x, y)[0], 1e-9)

    dm = mg.diffusion_matrix(c, lim)
    n = 4096
    cov = mg.sn_covariance(c, g, n)
    print(f"D = {dm['d'][0][0]:.6f}, Cov(S_n)/n = {cov[0][0] / n:.6f}, rank = {dm['rank']}")
    assert dm["rank"] == 1
    assert abs(cov[0][0] / n - dm["d"][0][0]) < 1e-2

    norms = mg.partial_sum_norms(c, g, 50)
    assert len(norms) == 51 and norms[0] == 0.0
    assert mg.remainder_second_moment(c, g, 100) >= 0.0

    e = mg.lq_exponent(4.0, 0.25)
    print("exponents:", {k: round(v, 6) for k, v in e.items()})
    assert 2.0 < e["q"] < e["q_bound"] and e["drift"] < 0

    path = mg.sample_path(c, 1, 20, 5)
    assert len(path) == 21 and path[0] == 1
    assert path == mg.sample_path(c, 1, 20, 5)

    for bad in ([[0.5, 0.49], [0.5, 0.5]], [[1.0, 0.0], [0.5, 0.5]]):
        try:
            mg.Chain(bad)
        except mg.MgapproxError as err:
            print("rejected:", err)
        else:
            raise AssertionError("invalid chain accepted")

    assert not math.isnan(lim.cauchy_gap)
    print("smoke test ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
