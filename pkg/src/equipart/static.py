"""Static optima: closed-form power laws, functional gradient descent, HOT lattices, k-medians."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .domain import (
    FLOOR,
    ConvergenceError,
    DensityField,
    GridField,
    VariationalProblem,
    derive_rng,
    integrate,
)


@dataclass(frozen=True, eq=False)
class StaticSolution:
    S: GridField
    multipliers: np.ndarray
    residual: float
    iterations: int
    action: float = float("nan")

    def summary(self) -> dict:
        return {
            "residual": float(self.residual),
            "multipliers": [float(v) for v in self.multipliers],
            "iterations": int(self.iterations),
            "action": float(self.action),
        }


def _floor_for(problem: VariationalProblem) -> float:
    return FLOOR if getattr(problem.loss, "has_pole", False) else -np.inf


def stationarity_residual(problem: VariationalProblem, S: np.ndarray, multipliers) -> float:
    """Sup-norm of the functional gradient, ignoring cells pinned at the floor with g >= 0."""
    g = problem.gradient(S, multipliers)
    pinned = (S <= _floor_for(problem) * (1 + 1e-9)) & (g >= 0)
    g = np.where(pinned, 0.0, g)
    return float(np.max(np.abs(g))) if g.size else 0.0


def gradient_step(S: np.ndarray, grad: np.ndarray, rate, floor: float = -np.inf) -> np.ndarray:
    """One functional-gradient-descent step S - rate * grad, clamped at ``floor``.

    ``rate`` may be a scalar learning rate or a per-cell array (inverse friction).
    """
    return np.maximum(S - rate * grad, floor)


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------


def _budget_constraint(problem: VariationalProblem):
    cons = problem.constraints
    if len(cons) == 1 and getattr(cons[0], "linear", False):
        return cons[0]
    return None


def analytic_power_optimum(problem: VariationalProblem) -> StaticSolution:
    """S = K p^e / int p^e for power-law losses under a single budget constraint."""
    e = getattr(problem.loss, "exponent", None)
    con = _budget_constraint(problem)
    if e is None or con is None or problem.sense != "minimize-cost":
        raise ValueError("no closed form")
    p = problem.density
    gamma = problem.loss.power
    pe = p.values ** e
    Z = integrate(p.with_values(pe))
    S = np.maximum(con.K * pe / Z, FLOOR)
    # p L'(S) + lam = 0 with S^(gamma+1) = (K/Z)^(gamma+1) p
    lam = np.array([gamma * (Z / con.K) ** (gamma + 1.0)])
    return StaticSolution(
        S=p.with_values(S),
        multipliers=lam,
        residual=stationarity_residual(problem, S, lam),
        iterations=0,
        action=problem.action(S, lam),
    )


# ---------------------------------------------------------------------------
# numeric solver
# ---------------------------------------------------------------------------


def _project_budget(S: np.ndarray, w: np.ndarray, K: float) -> np.ndarray:
    total = float(np.dot(S, w))
    if total > 0:
        return S * (K / total)
    return S + (K - total) / w.sum()


def solve_static(
    problem: VariationalProblem,
    init: GridField,
    tol: float = 1e-9,
    max_iter: int = 200_000,
    eta0: float | None = None,
    penalty: float = 1.0,
    precondition: bool = True,
) -> StaticSolution:
    """Constrained functional gradient descent with backtracking.

    A single linear budget (TotalResource / InverseVolume) is enforced by an
    exact rescaling projection after every step, with its multiplier taken at
    the dual fixed point (the volume-weighted mean of -p dL/dS over cells not
    pinned at the floor).  Any other constraint set runs the method of
    multipliers: descend on the augmented Lagrangian
    J + sum lam_i g_i + penalty/2 sum g_i^2 (g_i = int f_i - K_i), then
    ``lam_i += penalty * g_i``, raising the penalty when the gaps stall.

    With ``precondition`` the step in each cell is divided by the loss
    curvature |p L''(S)| (a diagonal Newton scaling).  Power losses are badly
    conditioned when p spans a wide range and plain descent can need
    millions of steps; ``precondition=False`` gives the plain gradient step.
    ``max_iter`` counts primal steps.
    """
    problem.check_field(init)
    floor = _floor_for(problem)
    S = np.array(init.values, dtype=float)
    if np.any(S <= floor):
        raise ValueError("initial field must lie strictly above the positivity floor")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    precondition = precondition and hasattr(problem.loss, "deriv2")
    if eta0 is None:
        eta0 = 1.0 if precondition else 0.1
    budget = _budget_constraint(problem)
    if budget is not None:
        return _solve_budget(problem, S, floor, tol, max_iter, eta0, precondition, budget)
    return _solve_multipliers(problem, S, floor, tol, max_iter, eta0, penalty, precondition)


def _curvature(problem, S):
    h = np.abs(problem.density.values * problem.loss.deriv2(S))
    return np.maximum(h, 1e-12 * max(float(h.max()), 1e-300))


def _line_search(merit, S, d, eta, floor, project=None, gnorm=None):
    """Backtrack from ``eta`` until the merit does not increase; returns (S_new, eta).

    Once merit changes sink into rounding noise, ``gnorm`` (if given) decides:
    a step inside the noise band is taken only when it shrinks the gradient.
    """
    J0 = merit(S)
    slack = 4 * np.finfo(float).eps * max(abs(J0), 1.0)
    g0 = None
    while True:
        S_new = gradient_step(S, d, eta, floor)
        if project is not None:
            S_new = project(S_new)
        J = merit(S_new)
        if gnorm is None:
            if J <= J0 + slack:
                return S_new, eta
        elif J < J0 - slack:
            return S_new, eta
        elif J <= J0 + slack:
            g0 = gnorm(S) if g0 is None else g0
            if gnorm(S_new) < g0:
                return S_new, eta
        eta *= 0.5
        if eta < 1e-30:
            return None, eta


def _solve_budget(problem, S, floor, tol, max_iter, eta0, precondition, budget):
    w = problem.density.cell_volumes()
    p = problem.density.values
    at_floor_tol = floor * (1 + 1e-9)
    S = _project_budget(S, w, budget.K)

    def project(S):
        return _project_budget(S, w, budget.K)

    def merit(S):
        return float(np.dot(p * problem.objective(S), w))

    def multiplier(S, gl):
        low = S <= at_floor_tol
        free = ~low
        lam = -np.dot(w[free], gl[free]) / w[free].sum()
        # a floor cell whose gradient points inward is free to move
        free = ~(low & (gl + lam >= 0))
        return -np.dot(w[free], gl[free]) / w[free].sum(), free

    def gnorm(S):
        gl = p * problem.objective_deriv(S)
        return stationarity_residual(problem, S, [multiplier(S, gl)[0]])

    residual = np.inf
    eta = eta0
    for it in range(max_iter + 1):
        gl = p * problem.objective_deriv(S)
        lam, free = multiplier(S, gl)
        lam_arr = np.array([lam])
        residual = stationarity_residual(problem, S, lam_arr)
        if residual <= tol and abs(problem.constraint_gaps(S)[0]) <= 1e-8 * budget.K:
            return StaticSolution(problem.density.with_values(S), lam_arr, residual, it, problem.action(S, lam_arr))
        if it == max_iter:
            break
        if precondition:
            h = _curvature(problem, S)
            mu = -np.dot(w[free], gl[free] / h[free]) / np.dot(w[free], 1.0 / h[free])
            d = np.where(free, (gl + mu) / h, 0.0)
        else:
            d = np.where(free, gl + lam, 0.0)
        S_new, eta_used = _line_search(merit, S, d, min(2 * eta, eta0), floor, project, gnorm)
        if S_new is None:
            raise ConvergenceError("line search failed", residual)
        S, eta = S_new, eta_used
    raise ConvergenceError(f"no convergence in {max_iter} iterations", residual)


def _newton_direction(problem, S, g, mult, rho, w):
    """Solve H d = w g for the augmented-Lagrangian Hessian H = D + rho U U^T.

    D is diagonal (loss curvature plus constraint curvature, floored to stay
    positive) and U holds the columns w f_k'; Woodbury keeps the solve O(n k).
    """
    a = problem.sign * problem.density.values * problem.loss.deriv2(S)
    for m, con in zip(mult, problem.constraints):
        a = a + m * con.fprime2(S)
    a = np.abs(a)
    a = np.maximum(a, 1e-12 * max(float(a.max()), 1e-300))
    U = np.stack([w * con.fprime(S) for con in problem.constraints], axis=1)
    Dinv_b = g / a
    Dinv_U = U / (w * a)[:, None]
    small = np.eye(U.shape[1]) / rho + U.T @ Dinv_U
    return Dinv_b - Dinv_U @ np.linalg.solve(small, U.T @ Dinv_b)


def _solve_multipliers(problem, S, floor, tol, max_iter, eta0, penalty, precondition):
    scales = np.array([c.K for c in problem.constraints])
    lam = np.zeros(len(problem.constraints))
    rho = float(penalty)
    w = problem.density.cell_volumes()
    newton = precondition and all(hasattr(c, "fprime2") for c in problem.constraints)
    residual = np.inf
    steps = 0
    eta = eta0
    prev_gap = np.inf
    stuck = 0
    while True:
        def merit(S):
            gaps = problem.constraint_gaps(S)
            return problem.action(S, lam) + 0.5 * rho * float(np.dot(gaps, gaps))

        def free_grad(S):
            mult = lam + rho * problem.constraint_gaps(S)
            g = problem.gradient(S, mult)
            return np.where((S <= floor * (1 + 1e-9)) & (g >= 0), 0.0, g), mult

        def gnorm(S):
            return float(np.max(np.abs(free_grad(S)[0])))

        # inner minimisation of the augmented Lagrangian
        inner_tol = max(tol * 0.1, 1e-14)
        start = steps
        while steps < max_iter:
            g, mult = free_grad(S)
            if float(np.max(np.abs(g))) <= inner_tol:
                break
            if newton:
                d = _newton_direction(problem, S, g, mult, rho, w)
                S_new, eta_used = _line_search(merit, S, d, 1.0, floor, gnorm=gnorm)
            else:
                S_new, eta_used = _line_search(merit, S, g, min(2 * eta, 1e6), floor, gnorm=gnorm)
            steps += 1
            if S_new is None or np.array_equal(S_new, S):
                break
            S, eta = S_new, eta_used
        gaps = problem.constraint_gaps(S)
        lam = lam + rho * gaps
        residual = stationarity_residual(problem, S, lam)
        if residual <= tol and np.all(np.abs(gaps) <= 1e-8 * np.abs(scales)):
            return StaticSolution(problem.density.with_values(S), lam, residual, steps, problem.action(S, lam))
        stuck = stuck + 1 if steps - start <= 1 else 0
        if steps >= max_iter or stuck >= 5:
            raise ConvergenceError(f"no convergence after {steps} steps", residual)
        gap = float(np.max(np.abs(gaps)))
        if gap > 0.25 * prev_gap:
            rho = min(rho * 10.0, 1e8)
        prev_gap = gap


# ---------------------------------------------------------------------------
# scaling fits
# ---------------------------------------------------------------------------


def fit_scaling_exponent(S: GridField, p: GridField) -> float:
    """OLS slope of log S against log p over cells where both are positive."""
    return loglog_slope(S.values, p.values)


def loglog_slope(s, q) -> float:
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    keep = (s > 0) & (q > 0)
    if keep.sum() < 10:
        raise ValueError("need at least 10 cells with S > 0 and p > 0")
    x = np.log(q[keep])
    y = np.log(s[keep])
    if np.unique(q[keep]).size < 2:
        raise ValueError("degenerate fit")
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


# ---------------------------------------------------------------------------
# k-medians
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KMediansResult:
    facilities: np.ndarray
    labels: np.ndarray
    objective: list = field(default_factory=list)


def _euclid_cost(points: np.ndarray, center: np.ndarray) -> float:
    return float(np.sqrt(((points - center) ** 2).sum(axis=1)).sum())


def _spread_seeds(pts: np.ndarray, k: int, rng) -> np.ndarray:
    """Distance-weighted seeding: each new facility drawn with probability ~ distance to the nearest one."""
    chosen = [int(rng.integers(len(pts)))]
    d = np.sqrt(((pts - pts[chosen[0]]) ** 2).sum(axis=1))
    for _ in range(k - 1):
        total = d.sum()
        j = int(rng.choice(len(pts), p=d / total)) if total > 0 else int(rng.integers(len(pts)))
        chosen.append(j)
        d = np.minimum(d, np.sqrt(((pts - pts[j]) ** 2).sum(axis=1)))
    return pts[chosen].copy()


def kmedians_em(points, k: int, seed: int, iters: int = 100, init: str = "spread",
                restarts: int = 1) -> KMediansResult:
    """Lloyd-style k-medians: nearest-facility assignment, coordinatewise-median update.

    ``init="spread"`` seeds facilities by distance-weighted sampling,
    ``"random"`` picks k distinct points uniformly.  With ``restarts > 1``
    independent chains run on derived seeds and the lowest final objective
    wins (earliest chain on ties).

    The median update is kept only when it does not raise the cluster's
    Euclidean cost, which keeps the objective non-increasing.  A facility
    left without points jumps to the point farthest from its nearest facility.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be an (n, dims) array")
    if not 1 <= k <= len(pts):
        raise ValueError("need 1 <= k <= number of points")
    if restarts > 1:
        runs = [kmedians_em(pts, k, int(derive_rng(seed, "kmedians_restart", r).integers(2 ** 63)), iters, init)
                for r in range(restarts)]
        return min(runs, key=lambda res: res.objective[-1])
    rng = derive_rng(seed, "kmedians_em")
    if init == "spread":
        centers = _spread_seeds(pts, k, rng)
    elif init == "random":
        centers = pts[rng.choice(len(pts), size=k, replace=False)].copy()
    else:
        raise ValueError(f"unknown init {init!r}")
    labels, dists = kernels.nearest_assign(pts, centers)
    history = [float(dists.sum())]
    for _ in range(iters):
        moved = False
        for j in range(k):
            members = pts[labels == j]
            if len(members) == 0:
                far = int(np.argmax(dists))
                centers[j] = pts[far]
                dists[far] = 0.0
                moved = True
                continue
            cand = np.median(members, axis=0)
            if np.array_equal(cand, centers[j]):
                continue
            if _euclid_cost(members, cand) < _euclid_cost(members, centers[j]):
                centers[j] = cand
                moved = True
        new_labels, dists = kernels.nearest_assign(pts, centers)
        history.append(float(dists.sum()))
        if not moved and np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMediansResult(centers, labels, history)


def facility_density_fit(facilities: np.ndarray, p: DensityField) -> float:
    """Scaling exponent of facility density against p.

    Each lattice cell of ``p`` goes to its nearest facility, giving Voronoi
    areas A_j and cell-averaged densities pbar_j; the result is the OLS
    slope of log(1/A_j) on log(pbar_j) over facilities with nonempty cells.
    """
    if len(p.resolution) != 1:
        raise ValueError("facility fit needs a single-box density")
    lab, _ = kernels.nearest_assign(p.centers(), facilities)
    k = len(facilities)
    w = p.cell_volumes()
    area = np.bincount(lab, weights=w, minlength=k)
    mass = np.bincount(lab, weights=np.asarray(p.values) * w, minlength=k)
    keep = area > 0
    return loglog_slope(1.0 / area[keep], mass[keep] / area[keep])


# ---------------------------------------------------------------------------
# HOT lattice
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HotLattice:
    breaks: np.ndarray
    density: DensityField
    budget: int
    cost: float
    costs: list = field(default_factory=list)
    order: list = field(default_factory=list)


def _select_min(values: np.ndarray, rtol: float = 1e-12) -> int:
    """Lowest flat index among entries within ``rtol`` of the minimum."""
    flat = values.ravel()
    best = flat.min()
    return int(np.flatnonzero(flat <= best + rtol * abs(best))[0])


def hot_lattice_evolve(density: DensityField, budget: int) -> HotLattice:
    """Greedy fire-break placement on a 2-D lattice.

    A spark in an open cell burns its whole 4-connected open component, so the
    expected cost is sum over components of P(component) * Area(component).
    Each step adds the single break cell that lowers that cost most; ties go
    to the lowest row-major cell index.
    """
    if len(density.resolution) != 1 or len(density.resolution[0]) != 2:
        raise ValueError("HOT lattice needs a single-box 2-D density")
    shape = density.resolution[0]
    n_cells = shape[0] * shape[1]
    if not 0 <= budget < n_cells:
        raise ValueError("budget must satisfy 0 <= budget < total cells")
    cell = float(np.prod(density.spacing(0)))
    pmass = density.box_values(0) * cell
    breaks = np.zeros(shape, dtype=np.uint8)
    costs = [kernels.component_cost(breaks, pmass) * cell]
    order = []
    for _ in range(budget):
        cand = kernels.hot_candidate_costs(breaks, pmass) * cell
        idx = _select_min(cand)
        breaks.flat[idx] = 1
        order.append(idx)
        costs.append(float(cand.flat[idx]))
    return HotLattice(breaks, density, budget, costs[-1], costs, order)


def quarter_gaussian(n: int, extent: float = 2.0, scale: float = 1.0) -> DensityField:
    """p(x, y) ~ exp(-(x^2 + y^2) / scale^2) on [0, extent]^2, origin at the first cell."""
    from .domain import BoxDomain, normalize_density

    dom = BoxDomain(((np.zeros(2), np.full(2, float(extent))),))
    f = GridField.from_function(dom, [(n, n)], lambda x: np.exp(-(x ** 2).sum(axis=1) / scale ** 2))
    return normalize_density(f)
