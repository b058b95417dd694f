"""Cost of allocating for the wrong density: opportunity cost, cost share rho, Gaussian divergence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from .domain import BoxDomain, DensityField, PowerLaw, TotalResource, VariationalProblem, derive_rng
from .static import analytic_power_optimum

SQRT2 = float(np.sqrt(2.0))


@dataclass(frozen=True)
class CostReport:
    cost_p_under_p: float
    cost_p_under_q: float
    opportunity: float
    rho: float
    divergent: bool = False
    stderr: float = float("nan")
    rho_stderr: float = float("nan")

    def as_dict(self) -> dict:
        return {k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v)) for k, v in self.__dict__.items()}


def _ratio_stats(a: np.ndarray, b: np.ndarray, scale: float):
    """Means of scale*a, scale*b and delta-method stderr of b-a and of 1 - a/b."""
    n = len(a)
    A = scale * a.mean()
    B = scale * b.mean()
    cov = np.cov(np.vstack([a, b])) * scale ** 2 / n
    se_diff = float(np.sqrt(max(cov[0, 0] + cov[1, 1] - 2 * cov[0, 1], 0.0)))
    var_r = cov[0, 0] / B ** 2 + A ** 2 * cov[1, 1] / B ** 4 - 2 * A * cov[0, 1] / B ** 3
    return A, B, se_diff, float(np.sqrt(max(var_r, 0.0)))


def _report(A, B, se=float("nan"), rse=float("nan")) -> CostReport:
    if not np.isfinite(B):
        return CostReport(float(A), float("inf"), float("inf"), 1.0, True, se, rse)
    return CostReport(float(A), float(B), float(B - A), float(1.0 - A / B), False, se, rse)


def misspec_report(p: DensityField, q: DensityField, loss=None, K: float = 1.0,
                   method: str = "quadrature", n: int = 1_000_000, seed: int = 0,
                   batch: int = 100_000) -> CostReport:
    """Expected cost of the p-optimal allocation when events follow p and when they follow q.

    ``method`` is ``"quadrature"`` (exact cell sums) or ``"mc"`` (uniform
    sampling of the domain in seeded batches, with sample-variance errors).
    """
    loss = PowerLaw(1.0) if loss is None else loss
    if not p.domain.same_as(q.domain) or p.resolution != q.resolution:
        raise ValueError("p and q must share a lattice")
    sol = analytic_power_optimum(VariationalProblem(p, loss, (TotalResource(K),)))
    cost = loss.value(np.asarray(sol.S.values, dtype=float))
    pv = np.asarray(p.values)
    qv = np.asarray(q.values)
    if getattr(loss, "has_pole", False) and np.any((pv == 0) & (qv > 0)):
        # q puts mass where p allocates nothing
        return _report(float(np.dot(pv * cost, p.cell_volumes())), float("inf"))
    if method == "quadrature":
        w = p.cell_volumes()
        return _report(float(np.dot(pv * cost, w)), float(np.dot(qv * cost, w)))
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    a_parts, b_parts = [], []
    for k, start in enumerate(range(0, n, batch)):
        m = min(batch, n - start)
        x = p.domain.sample_uniform(m, derive_rng(seed, "misspec_mc", k))
        idx = p.locate(x)
        a_parts.append(pv[idx] * cost[idx])
        b_parts.append(qv[idx] * cost[idx])
    return _report(*_ratio_stats(np.concatenate(a_parts), np.concatenate(b_parts), p.domain.volume))


# ---------------------------------------------------------------------------
# centred isotropic Gaussians in the plane, HOT loss (gamma = 1)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RhoRow:
    ratio: float
    rho: float
    divergent: bool
    rho_mc: float = float("nan")
    mc_stderr: float = float("nan")


def _log_gauss2(x: np.ndarray, s: float) -> np.ndarray:
    return -(x ** 2).sum(axis=1) / (2 * s * s) - np.log(2 * np.pi * s * s)


def _gauss2(x: np.ndarray, s: float) -> np.ndarray:
    return np.exp(_log_gauss2(x, s))


def gaussian_rho_unbounded(sigma_p: float, sigma_q: float) -> float:
    """Closed form of 1 - (int sqrt p)^2 / (int sqrt p * int q / sqrt p) on the whole plane.

    In polar coordinates int sqrt p = 2 sqrt(2 pi) sigma_p and
    int q / sqrt p = sqrt(2 pi) sigma_p / (2 sigma_q^2 a) with
    a = 1/(2 sigma_q^2) - 1/(4 sigma_p^2), finite only for a > 0; the
    ratio simplifies to (sigma_q / sigma_p)^2 - 1.
    """
    a = 1.0 / (2 * sigma_q ** 2) - 1.0 / (4 * sigma_p ** 2)
    if a <= 0:
        return float("inf")
    i_sqrt_p = 2.0 * np.sqrt(2 * np.pi) * sigma_p
    i_cross = np.sqrt(2 * np.pi) * sigma_p / (2 * sigma_q ** 2 * a)
    return float(1.0 - i_sqrt_p / i_cross)


def _mc_unbounded(sigma_p, sigma_q, n, seed, batch):
    # importance sampling from a centred Gaussian wider than both integrands,
    # which keeps the variance of q / (sqrt p g) finite
    a = 1.0 / (2 * sigma_q ** 2) - 1.0 / (4 * sigma_p ** 2)
    s_g = float(np.sqrt(max(1.0 / a, 4.0 * sigma_p ** 2)))
    a_parts, b_parts = [], []
    for k, start in enumerate(range(0, n, batch)):
        m = min(batch, n - start)
        x = s_g * derive_rng(seed, "rho_unbounded", k).standard_normal((m, 2))
        log_g = _log_gauss2(x, s_g)
        half_log_p = 0.5 * _log_gauss2(x, sigma_p)
        a_parts.append(np.exp(half_log_p - log_g))
        b_parts.append(np.exp(_log_gauss2(x, sigma_q) - half_log_p - log_g))
    A, B, _, rse = _ratio_stats(np.concatenate(a_parts), np.concatenate(b_parts), 1.0)
    return 1.0 - A / B, rse


def _box_mass(domain: BoxDomain, s: float) -> float:
    total = 0.0
    for lo, hi in domain.boxes:
        total += float(np.prod(ndtr(hi / s) - ndtr(lo / s)))
    return total


def _box_quadrature(domain: BoxDomain, func, order: int = 64) -> float:
    nodes, weights = leggauss(order)
    total = 0.0
    for lo, hi in domain.boxes:
        half = (hi - lo) / 2
        axes = [lo[j] + half[j] * (nodes + 1) for j in range(2)]
        X, Y = np.meshgrid(*axes, indexing="ij")
        W = np.outer(weights, weights) * np.prod(half)
        total += float((func(np.column_stack([X.ravel(), Y.ravel()])) * W.ravel()).sum())
    return total


def default_compact_domain() -> BoxDomain:
    """Two disjoint strips inside the unit square."""
    return BoxDomain(((np.array([0.0, 0.0]), np.array([0.4, 1.0])),
                      (np.array([0.6, 0.0]), np.array([1.0, 1.0]))))


def gaussian_rho_compact(sigma_p: float, sigma_q: float, domain: BoxDomain, n: int = 0, seed: int = 0,
                         batch: int = 100_000):
    """rho for origin-centred Gaussians restricted to ``domain`` and renormalised there.

    Returns (quadrature value, MC value, MC stderr); MC is skipped when n = 0.
    """
    zp = _box_mass(domain, sigma_p)
    zq = _box_mass(domain, sigma_q)

    def sqrt_p(x):
        return np.sqrt(_gauss2(x, sigma_p) / zp)

    def cross(x):
        return _gauss2(x, sigma_q) / zq / sqrt_p(x)

    rho = 1.0 - _box_quadrature(domain, sqrt_p) / _box_quadrature(domain, cross)
    if n <= 0:
        return rho, float("nan"), float("nan")
    a_parts, b_parts = [], []
    for k, start in enumerate(range(0, n, batch)):
        m = min(batch, n - start)
        x = domain.sample_uniform(m, derive_rng(seed, "rho_compact", k))
        a_parts.append(sqrt_p(x))
        b_parts.append(cross(x))
    A, B, _, rse = _ratio_stats(np.concatenate(a_parts), np.concatenate(b_parts), domain.volume)
    return rho, 1.0 - A / B, rse


def gaussian_rho_curve(sigma_p: float, ratios, domain: BoxDomain | None = None, n_mc: int = 0,
                       seed: int = 0) -> list[RhoRow]:
    """rho against sigma_q / sigma_p.  ``domain=None`` means the whole plane.

    On the plane the cost under q diverges once sigma_q^2 >= 2 sigma_p^2; those
    rows are flagged and carry rho = 1.  Ratio 1 is rho = 0 by definition.
    """
    if not sigma_p > 0:
        raise ValueError("sigma_p must be > 0")
    rows = []
    for i, r in enumerate(ratios):
        r = float(r)
        if r < 1:
            raise ValueError("ratios must be >= 1")
        if r == 1.0:
            rows.append(RhoRow(r, 0.0, False, 0.0 if n_mc else float("nan"), 0.0 if n_mc else float("nan")))
            continue
        sq = r * sigma_p
        if domain is None:
            # relative slack so that float(sqrt(2)) lands on the divergent side
            if r * r >= 2.0 * (1.0 - 1e-12):
                rows.append(RhoRow(r, 1.0, True))
                continue
            rho = gaussian_rho_unbounded(sigma_p, sq)
            mc, se = _mc_unbounded(sigma_p, sq, n_mc, int(derive_rng(seed, "rho_row", i).integers(2 ** 63)),
                                   100_000) if n_mc else (float("nan"), float("nan"))
            rows.append(RhoRow(r, rho, False, float(mc), float(se)))
        else:
            rho, mc, se = gaussian_rho_compact(sigma_p, sq, domain, n_mc,
                                               int(derive_rng(seed, "rho_row", i).integers(2 ** 63)))
            rows.append(RhoRow(r, float(rho), False, float(mc), float(se)))
    return rows
