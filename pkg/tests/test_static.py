import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from equipart.domain import (
    GridField,
    PowerLaw,
    AbsNorm,
    Quadratic,
    SquareNorm,
    TotalResource,
    VariationalProblem,
    VolumeMean,
    VolumeMedian,
    derive_rng,
    integrate,
)
from equipart.static import (
    analytic_power_optimum,
    fit_scaling_exponent,
    hot_lattice_evolve,
    kmedians_em,
    quarter_gaussian,
    solve_static,
    stationarity_residual,
)

from conftest import density_1d


def hot(p, K, gamma=1.0):
    return VariationalProblem(p, PowerLaw(gamma), (TotalResource(K),))


def test_two_cells_four_to_one():
    p = density_1d([0.8, 0.2])
    S = analytic_power_optimum(hot(p, 1.0)).S.values
    assert S[0] / S[1] == pytest.approx(2.0, rel=1e-12)


def test_uniform_density_uniform_allocation():
    p = density_1d(np.ones(7))
    S = analytic_power_optimum(hot(p, 3.5)).S.values
    assert np.allclose(S, 0.5, rtol=1e-14)


def test_four_cell_example(four_cell):
    S = analytic_power_optimum(hot(four_cell, 1.8)).S.values
    assert np.allclose(S, [0.8, 0.2, 0.4, 0.4], atol=1e-12)


def test_four_cell_against_slsqp(four_cell):
    p = np.asarray(four_cell.values)
    res = optimize.minimize(lambda s: np.sum(p / s), np.full(4, 0.45), method="SLSQP",
                            bounds=[(1e-3, 1.8)] * 4,
                            constraints=[{"type": "eq", "fun": lambda s: s.sum() - 1.8}],
                            options={"ftol": 1e-14, "maxiter": 500})
    S = analytic_power_optimum(hot(four_cell, 1.8)).S.values
    assert np.allclose(S, res.x, atol=1e-5)


def test_four_cell_against_simplex_grid(four_cell):
    p = np.asarray(four_cell.values)
    step = 0.02
    best, arg = np.inf, None
    for a, b, c in itertools.product(np.arange(step, 1.8, step), repeat=3):
        d = 1.8 - a - b - c
        if d <= 1e-9:
            continue
        J = p[0] / a + p[1] / b + p[2] / c + p[3] / d
        if J < best:
            best, arg = J, (a, b, c, d)
    assert np.allclose(arg, [0.8, 0.2, 0.4, 0.4], atol=step)


def test_solve_static_two_cells():
    p = density_1d([0.75, 0.25])
    sol = solve_static(hot(p, 1.0), p.with_values([0.5, 0.5]), tol=1e-11)
    line = optimize.minimize_scalar(lambda s: 0.75 / s + 0.25 / (1 - s), bounds=(1e-6, 1 - 1e-6),
                                    method="bounded", options={"xatol": 1e-12})
    assert sol.S.values[0] == pytest.approx(line.x, abs=1e-6)
    assert np.allclose(sol.S.values, [0.6339746, 0.3660254], atol=1e-6)


def test_quadratic_unconstrained_optimum_feasible():
    p = density_1d(np.linspace(1, 2, 10))
    target = np.linspace(0.5, 1.5, 10)
    K = integrate(p.with_values(target))
    prob = VariationalProblem(p, Quadratic(target), (TotalResource(K),))
    sol = solve_static(prob, p.with_values(np.full(10, K / 10)), tol=1e-10)
    assert np.allclose(sol.S.values, target, atol=1e-9)
    assert abs(sol.multipliers[0]) < 1e-9


def test_converged_run_saturates_budget_and_is_stationary():
    p = density_1d(derive_rng(1, "t").uniform(0.1, 1, 32))
    prob = hot(p, 2.5, gamma=2.0)
    sol = solve_static(prob, p.with_values(np.ones(32)), tol=1e-9)
    assert abs(integrate(sol.S) - 2.5) <= 1e-8 * 2.5
    assert stationarity_residual(prob, np.asarray(sol.S.values), sol.multipliers) <= 1e-9


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_solver_matches_closed_form(gamma):
    p = density_1d(derive_rng(2, "cf", int(gamma * 10)).uniform(0.05, 1, 64), upper=1.0)
    prob = hot(p, 1.0, gamma)
    a = analytic_power_optimum(prob).S.values
    s = solve_static(prob, p.with_values(np.ones(64)), tol=1e-11).S.values
    assert np.max(np.abs(s - a)) / np.max(np.abs(a)) <= 1e-6


def test_exact_power_data_gives_exponent():
    p = density_1d(derive_rng(3, "ex").uniform(0.1, 2, 40))
    S = p.with_values(3.0 * np.asarray(p.values) ** (2 / 3))
    assert fit_scaling_exponent(S, p) == pytest.approx(2 / 3, abs=1e-10)


def test_constant_allocation_exponent_zero():
    p = density_1d(derive_rng(4, "ex").uniform(0.1, 2, 40))
    assert abs(fit_scaling_exponent(p.with_values(np.full(40, 0.7)), p)) <= 1e-12


@pytest.mark.parametrize("loss,expected", [
    (PowerLaw(1.0), 0.5), (PowerLaw(0.5), 2 / 3), (PowerLaw(2.0), 1 / 3),
    (VolumeMedian(2), 2 / 3), (VolumeMedian(3), 3 / 4), (VolumeMean(2), 1 / 2), (VolumeMean(3), 3 / 5),
])
def test_closed_form_exponents(loss, expected):
    p = density_1d(derive_rng(5, "exp").uniform(0.05, 1, 64))
    sol = analytic_power_optimum(VariationalProblem(p, loss, (TotalResource(1.0),)))
    assert fit_scaling_exponent(sol.S, p) == pytest.approx(expected, abs=1e-9)


def test_fit_needs_enough_cells():
    p = density_1d([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fit_scaling_exponent(p, p)


def test_kmedians_one_facility_per_point():
    pts = derive_rng(6, "km").random((12, 2))
    res = kmedians_em(pts, 12, seed=0)
    assert res.objective[-1] == pytest.approx(0.0, abs=1e-12)


def _brute_kmedians_cost(pts, k):
    # exhaustive over labelings; each cluster's cost minimized by Weiszfeld-free scipy search
    best = np.inf
    for labels in itertools.product(range(k), repeat=len(pts)):
        if len(set(labels)) < k or labels[0] != 0:
            continue
        cost = 0.0
        for j in range(k):
            m = pts[np.array(labels) == j]
            r = optimize.minimize(lambda c: np.sqrt(((m - c) ** 2).sum(axis=1)).sum(), m.mean(axis=0),
                                  method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-12})
            cost += r.fun
        if cost < best:
            best, arg = cost, labels
    return best, np.array(arg)


def test_kmedians_two_blobs_matches_brute_force():
    rng = derive_rng(7, "blobs")
    pts = np.vstack([rng.normal([0, 0], 0.1, (4, 2)), rng.normal([5, 5], 0.1, (4, 2))])
    res = kmedians_em(pts, 2, seed=1)
    _, labels = _brute_kmedians_cost(pts, 2)
    same = np.array_equal(res.labels, labels) or np.array_equal(res.labels, 1 - labels)
    assert same
    blob = (res.facilities[:, 0] > 2.5).astype(int)
    assert sorted(blob) == [0, 1]


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_kmedians_objective_non_increasing(seed, k):
    pts = derive_rng(seed, "kmprop").random((40, 2))
    obj = np.array(kmedians_em(pts, k, seed).objective)
    assert np.all(np.diff(obj) <= 1e-12 * obj[0])


def test_hot_budget_zero_is_total_area():
    p = quarter_gaussian(8)
    lat = hot_lattice_evolve(p, 0)
    assert lat.cost == pytest.approx(p.domain.volume, rel=1e-12)


def _flood_cost(breaks, pmass, cell):
    # independent oracle: BFS over 4-neighbours in pure python
    n, m = breaks.shape
    seen = np.zeros_like(breaks, dtype=bool)
    total = 0.0
    for i in range(n):
        for j in range(m):
            if breaks[i, j] or seen[i, j]:
                continue
            q = deque([(i, j)])
            seen[i, j] = True
            mass, size = 0.0, 0
            while q:
                a, b = q.popleft()
                mass += pmass[a, b]
                size += 1
                for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    x, y = a + da, b + db
                    if 0 <= x < n and 0 <= y < m and not breaks[x, y] and not seen[x, y]:
                        seen[x, y] = True
                        q.append((x, y))
            total += mass * size * cell
    return total


def test_hot_greedy_matches_exhaustive_per_step():
    p = quarter_gaussian(8)
    cell = float(np.prod(p.spacing(0)))
    pmass = p.box_values(0) * cell
    lat = hot_lattice_evolve(p, 8)
    breaks = np.zeros((8, 8), dtype=bool)
    for step, chosen in enumerate(lat.order):
        costs = np.full(64, np.inf)
        for idx in range(64):
            if breaks.flat[idx]:
                continue
            trial = breaks.copy()
            trial.flat[idx] = True
            costs[idx] = _flood_cost(trial, pmass, cell)
        best = costs.min()
        assert costs[chosen] <= best * (1 + 1e-12)
        assert chosen == int(np.flatnonzero(costs <= best * (1 + 1e-12))[0])
        breaks.flat[chosen] = True
        assert lat.costs[step + 1] == pytest.approx(best, rel=1e-12)


def test_hot_cost_non_increasing_in_budget():
    lat = hot_lattice_evolve(quarter_gaussian(10), 30)
    assert np.all(np.diff(lat.costs) <= 1e-15)


def test_hot_budget_out_of_range():
    with pytest.raises(ValueError):
        hot_lattice_evolve(quarter_gaussian(4), 16)


@given(st.lists(st.floats(0.01, 10), min_size=2, max_size=20), st.floats(0.1, 10), st.floats(0.25, 3))
def test_analytic_optimum_saturates_budget(values, K, gamma):
    p = density_1d(values)
    sol = analytic_power_optimum(hot(p, K, gamma))
    assert integrate(sol.S) == pytest.approx(K, rel=1e-12)
    assert np.all(np.asarray(sol.S.values) > 0)


def test_zero_probability_cells_go_to_floor():
    p = density_1d([0.5, 0.0, 0.3, 0.2, 0.0])
    sol = solve_static(hot(p, 1.0), p.with_values(np.full(5, 0.2)), tol=1e-10)
    a = analytic_power_optimum(hot(p, 1.0))
    assert np.allclose(sol.S.values, a.S.values, atol=1e-9)
    assert sol.S.values[1] <= 1e-11 and sol.S.values[4] <= 1e-11


def test_plain_and_preconditioned_agree():
    p = density_1d(derive_rng(8, "pc").uniform(0.2, 1, 16))
    prob = hot(p, 1.0)
    init = p.with_values(np.ones(16))
    a = solve_static(prob, init, tol=1e-10, precondition=False).S.values
    b = solve_static(prob, init, tol=1e-10).S.values
    assert np.allclose(a, b, atol=1e-9)


def test_square_norm_constraint_matches_stationarity_oracle():
    # min sum p (S - t)^2 s.t. sum S^2 = K  =>  S = p t / (p + lam); root-find lam independently
    p = density_1d(np.linspace(1, 2, 10))
    t = np.linspace(0.5, 1.5, 10)
    pv = np.asarray(p.values)
    prob = VariationalProblem(p, Quadratic(t), (SquareNorm(5.0),))
    sol = solve_static(prob, p.with_values(np.ones(10)), tol=1e-10)
    lam = optimize.brentq(lambda l: np.sum((pv * t / (pv + l)) ** 2) - 5.0, 0.0, 10.0, xtol=1e-15)
    assert sol.multipliers[0] == pytest.approx(lam, rel=1e-7)
    assert np.allclose(sol.S.values, pv * t / (pv + lam), atol=1e-8)


def test_abs_norm_constraint_positive_optimum():
    p = density_1d(np.linspace(1, 2, 10))
    t = np.linspace(0.5, 1.5, 10)
    pv = np.asarray(p.values)
    prob = VariationalProblem(p, Quadratic(t), (AbsNorm(9.0),))
    sol = solve_static(prob, p.with_values(np.ones(10)), tol=1e-10)
    # with S > 0 the constraint is linear: S = t - lam / (2 p)
    lam = optimize.brentq(lambda l: np.sum(t - l / (2 * pv)) - 9.0, 0.0, 1.0, xtol=1e-15)
    assert np.allclose(sol.S.values, t - lam / (2 * pv), atol=1e-8)


def test_two_constraints():
    p = density_1d(np.linspace(1, 2, 10))
    prob = VariationalProblem(p, PowerLaw(1.0), (TotalResource(1.0), SquareNorm(0.2)))
    sol = solve_static(prob, p.with_values(np.full(10, 0.1)), tol=1e-10)
    gaps = prob.constraint_gaps(np.asarray(sol.S.values))
    assert np.all(np.abs(gaps) <= 1e-8)
    assert stationarity_residual(prob, np.asarray(sol.S.values), sol.multipliers) <= 1e-10
