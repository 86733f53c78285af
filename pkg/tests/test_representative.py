import numpy as np
import pytest

from indiffmarket.representative import (
    PrimalPoint,
    allocate,
    allocation_curvature,
    pareto_allocation,
    representative_gradient,
    representative_utility,
    weights_from_allocation,
)
from indiffmarket.utilities import exponential, panel, sum_of_exponentials

PAIR = panel(exponential(1.0), exponential(1.0))
MIXED = panel(sum_of_exponentials([1.0, 0.5], [1.0, 2.0]), exponential(2.0))


def test_single_maker_degenerate():
    p = panel(exponential(1.5))
    for v, x in ((2.0, 0.3), (0.7, -1.2)):
        r, split, y = representative_utility(p, [v], x)
        assert r == pytest.approx(v * p.makers[0].value(x))
        assert split[0] == pytest.approx(x)
        assert y == pytest.approx(v * p.makers[0].marginal(x))


def test_symmetric_pair():
    r, split, y = representative_utility(PAIR, [1.0, 1.0], 0.0)
    assert np.allclose(split, [0.0, 0.0], atol=1e-12)
    assert r == pytest.approx(-2.0)
    assert y == pytest.approx(1.0)


def test_tilted_pair_closed_form():
    # v = (1, e): split (-1/2, 1/2), value -2*sqrt(e)
    r, split, y = representative_utility(PAIR, [1.0, np.e], 0.0)
    assert np.allclose(split, [-0.5, 0.5], atol=1e-12)
    assert r == pytest.approx(-2.0 * np.sqrt(np.e), rel=1e-12)


def test_pareto_allocation_examples():
    p1 = panel(exponential(2.0))
    a = PrimalPoint(v=[1.0], x=0.0, q=[0.0])
    assert pareto_allocation(p1, a, 1.7)[0] == pytest.approx(1.7)

    a2 = PrimalPoint(v=[1.0, 1.0], x=0.0, q=[0.0])
    assert np.allclose(pareto_allocation(PAIR, a2, 2.0), [1.0, 1.0], atol=1e-12)

    p12 = panel(exponential(1.0), exponential(2.0))
    pi = pareto_allocation(p12, a2, 0.0)
    assert pi.sum() == pytest.approx(0.0, abs=1e-12)
    # common marginal: e^{-x1} = e^{-2 x2} with u_2 = -e^{-2x}/2
    foc = np.exp(-pi[0]) - np.exp(-2.0 * pi[1])
    assert abs(foc) < 1e-10


def test_weights_from_allocation_examples():
    assert np.allclose(weights_from_allocation(panel(exponential(1.0)), [3.0]), [1.0])
    assert np.allclose(weights_from_allocation(PAIR, [0.0, 0.0]), [0.5, 0.5])
    # u_2(x) = -e^{-2x}/2 has u_2'(0) = 1, so equal weights again
    p12 = panel(exponential(1.0), exponential(2.0))
    assert np.allclose(weights_from_allocation(p12, [0.0, 0.0]), [0.5, 0.5])


def test_weight_allocation_roundtrip():
    rng = np.random.default_rng(5)
    for p in (PAIR, MIXED):
        for _ in range(25):
            lam = rng.dirichlet(np.ones(p.size))
            sigma = rng.normal(scale=2.0)
            a = PrimalPoint(v=lam, x=0.0, q=[0.0])
            back = weights_from_allocation(p, pareto_allocation(p, a, sigma))
            assert np.max(np.abs(back - lam)) < 1e-10


def test_gradient_symmetric_point():
    dv, dx = representative_gradient(PAIR, [1.0, 1.0], 0.0)
    assert np.allclose(dv, [-1.0, -1.0], atol=1e-12)
    assert dx == pytest.approx(1.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    h = 1e-6
    for p in (PAIR, MIXED):
        for _ in range(20):
            v = np.exp(rng.normal(size=p.size))
            x = rng.normal(scale=2.0)
            dv, dx = representative_gradient(p, v, x)
            r0 = representative_utility(p, v, x)[0]
            fx = (representative_utility(p, v, x + h)[0]
                  - representative_utility(p, v, x - h)[0]) / (2 * h)
            assert abs(dx - fx) < 1e-6 * (1 + abs(dx))
            for m in range(p.size):
                vp, vm = v.copy(), v.copy()
                vp[m] += h
                vm[m] -= h
                fv = (representative_utility(p, vp, x)[0]
                      - representative_utility(p, vm, x)[0]) / (2 * h)
                assert abs(dv[m] - fv) < 1e-6 * (1 + abs(dv[m]))


def test_positive_homogeneity_in_v():
    rng = np.random.default_rng(7)
    for p in (PAIR, MIXED):
        for _ in range(50):
            v = np.exp(rng.normal(size=p.size))
            x = rng.normal(scale=3.0)
            c = rng.uniform(0.1, 10.0)
            r1 = representative_utility(p, v, x)[0]
            rc = representative_utility(p, c * v, x)[0]
            assert abs(rc - c * r1) < 1e-12 * abs(c * r1)


def test_envelope_identity():
    rng = np.random.default_rng(8)
    for _ in range(100):
        v = np.exp(rng.normal(size=MIXED.size))
        x = rng.normal(scale=2.0)
        _, split, _ = representative_utility(MIXED, v, x)
        dv, _ = representative_gradient(MIXED, v, x)
        direct = np.array([MIXED.makers[m].value(split[m]) for m in range(2)])
        assert np.max(np.abs(dv - direct)) < 1e-12


def test_allocate_feasibility_and_foc():
    rng = np.random.default_rng(9)
    n = 500
    for p in (PAIR, MIXED):
        v = np.exp(rng.normal(size=(n, p.size)))
        total = rng.normal(scale=4.0, size=n)
        y, pi = allocate(p, v, total)
        assert np.max(np.abs(pi.sum(axis=1) - total)) < 1e-12 * (
            1 + np.max(np.abs(total)))
        for m, spec in enumerate(p.makers):
            resid = v[:, m] * spec.marginal(pi[:, m]) - y
            assert np.max(np.abs(resid / y)) < 1e-12


def test_brute_force_grid_bound():
    # grid max over the split is a lower bound within the grid modulus
    v = np.array([0.8, 1.7])
    x = 0.4
    r, _, _ = representative_utility(MIXED, v, x)
    x1 = np.arange(-5.0, 5.0, 1e-3)
    vals = (v[0] * MIXED.makers[0].value(x1)
            + v[1] * MIXED.makers[1].value(x - x1))
    gmax = vals.max()
    assert gmax <= r + 1e-12
    assert r <= gmax + 1e-4


def test_allocation_curvature_matches_finite_differences():
    h = 1e-5
    v = np.array([1.3, 0.6])
    x = -0.7
    y, pi, t, tsum = allocation_curvature(MIXED, v, np.array([x]))
    rxx = -y[0] / tsum[0]
    fd = (representative_utility(MIXED, v, x + h)[2]
          - representative_utility(MIXED, v, x - h)[2]) / (2 * h)
    assert abs(rxx - fd) < 1e-7

    # d2r/dv^m dx = y t^m / (v^m tsum)
    for m in range(2):
        vp, vm = v.copy(), v.copy()
        vp[m] += h
        vm[m] -= h
        fd_vx = (representative_utility(MIXED, vp, x)[2]
                 - representative_utility(MIXED, vm, x)[2]) / (2 * h)
        rvx = y[0] * t[0, m] / (v[m] * tsum[0])
        assert abs(rvx - fd_vx) < 1e-7


def test_primal_point_validation():
    with pytest.raises(ValueError):
        PrimalPoint(v=[1.0, -0.5], x=0.0, q=[0.0])
