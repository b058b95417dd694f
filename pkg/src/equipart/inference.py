"""Streaming estimation: Dirichlet-categorical updating, coupled allocation ODE, spacetime KDE, Wiener oracle."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .domain import FLOOR, FloorClampWarning, derive_rng


# ---------------------------------------------------------------------------
# Dirichlet-categorical
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DirichletPosterior:
    """Dirichlet prior ``alpha`` plus observed category counts (categories are 0-based)."""

    alpha: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        n = np.asarray(self.counts, dtype=np.int64)
        if a.ndim != 1 or a.shape != n.shape:
            raise ValueError("alpha and counts must be 1-d of equal length")
        if np.any(a <= 0):
            raise ValueError("alpha must be > 0")
        if np.any(n < 0):
            raise ValueError("counts must be >= 0")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "counts", n)

    @classmethod
    def uniform(cls, M: int, alpha: float = 1.0) -> "DirichletPosterior":
        return cls(np.full(M, float(alpha)), np.zeros(M, dtype=np.int64))

    @property
    def N(self) -> int:
        return int(self.counts.sum())


def posterior_update(post: DirichletPosterior, category: int) -> DirichletPosterior:
    if not 0 <= category < len(post.alpha):
        raise ValueError(f"category {category} out of range 0..{len(post.alpha) - 1}")
    counts = post.counts.copy()
    counts[category] += 1
    return DirichletPosterior(post.alpha, counts)


def posterior_predictive(post: DirichletPosterior) -> np.ndarray:
    """(alpha_i + n_i) / (N + sum alpha)."""
    w = post.alpha + post.counts
    return w / w.sum()


# ---------------------------------------------------------------------------
# coupled dynamic allocation
# ---------------------------------------------------------------------------


def categorical_optimum(p_hat, K: float) -> np.ndarray:
    """Static HOT optimum K sqrt(p) / sum sqrt(p) over categories."""
    r = np.sqrt(np.asarray(p_hat, dtype=float))
    return K * r / r.sum()


def dynamic_allocation_step(S, p_hat, K: float, dt: float) -> np.ndarray:
    """Explicit Euler step of dS/dt = p S^-2 - (sum sqrt(p) / K)^2."""
    S = np.asarray(S, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    if np.any(S <= 0) or not K > 0:
        raise ValueError("need S > 0 and K > 0")
    lam = (np.sqrt(p_hat).sum() / K) ** 2
    new = S + dt * (p_hat / S ** 2 - lam)
    if np.any(new < FLOOR):
        warnings.warn("allocation clamped at the positivity floor", FloorClampWarning, stacklevel=2)
        new = np.maximum(new, FLOOR)
    return new


@dataclass(eq=False)
class CategoricalRun:
    times: np.ndarray
    predictive: np.ndarray
    allocation: np.ndarray
    posterior: DirichletPosterior


def run_categorical(observations, M: int, K: float, S0, dt: float = 1e-3,
                    steps_per_obs: int = 1, alpha: float = 1.0) -> CategoricalRun:
    """Update the posterior once per observation, then take Euler steps toward its optimum.

    Row 0 of the returned series is the state before any observation.
    """
    post = DirichletPosterior.uniform(M, alpha)
    S = np.asarray(S0, dtype=float).copy()
    if S.shape != (M,):
        raise ValueError("S0 must have one entry per category")
    obs = np.asarray(observations, dtype=np.int64)
    preds = np.empty((len(obs) + 1, M))
    alloc = np.empty((len(obs) + 1, M))
    preds[0] = posterior_predictive(post)
    alloc[0] = S
    for k, c in enumerate(obs, start=1):
        post = posterior_update(post, int(c))
        p_hat = posterior_predictive(post)
        for _ in range(steps_per_obs):
            S = dynamic_allocation_step(S, p_hat, K, dt)
        preds[k] = p_hat
        alloc[k] = S
    times = np.arange(len(obs) + 1) * dt * steps_per_obs
    return CategoricalRun(times, preds, alloc, post)


def relax_allocation(S0, p_hat, K: float, dt: float = 1e-3, tol: float = 1e-10,
                     max_steps: int = 10_000_000) -> tuple[np.ndarray, int]:
    """Iterate the allocation ODE at fixed p until the step change drops below ``tol``."""
    S = np.asarray(S0, dtype=float)
    for n in range(1, max_steps + 1):
        new = dynamic_allocation_step(S, p_hat, K, dt)
        if np.max(np.abs(new - S)) <= tol:
            return new, n
        S = new
    raise RuntimeError("allocation ODE did not settle")


# ---------------------------------------------------------------------------
# spacetime KDE
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SpacetimeKDE:
    """Gaussian kernel estimate over pooled (x, t) records; ``h`` is the kernel variance."""

    h: float
    xs: list = field(default_factory=list)
    ts: list = field(default_factory=list)

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("bandwidth must be > 0")

    @property
    def N(self) -> int:
        return len(self.xs)


def kde_insert(kde: SpacetimeKDE, x, t) -> SpacetimeKDE:
    """Append one record or arrays of records; returns the same (append-only) estimator."""
    kde.xs.extend(np.atleast_1d(np.asarray(x, dtype=float)).tolist())
    kde.ts.extend(np.atleast_1d(np.asarray(t, dtype=float)).tolist())
    if len(kde.xs) != len(kde.ts):
        raise ValueError("x and t lengths differ")
    return kde


def kde_eval(kde: SpacetimeKDE, x, t) -> np.ndarray:
    """(1/N) sum_k exp(-((x-x_k)^2 + (t-t_k)^2) / 2h) / (2 pi h)."""
    if kde.N == 0:
        raise ValueError("KDE has no samples")
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    out = kernels.kde_sum(x, t, np.asarray(kde.xs), np.asarray(kde.ts), kde.h)
    return out.reshape(x.shape)


def bandwidth_schedule(N: int, c: float = 0.5) -> float:
    if N < 1:
        raise ValueError("N must be >= 1")
    return c * N ** (-1.0 / 3.0)


# ---------------------------------------------------------------------------
# Wiener process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WienerSpec:
    mu: float = 0.0
    sigma: float = 1.0
    x0: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")


def wiener_density(spec: WienerSpec, x, t) -> np.ndarray:
    """Transition density of X_t = x0 + mu t + sigma W_t; zero for t <= 0."""
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    out = np.zeros(x.shape)
    pos = t > 0
    var = spec.sigma ** 2 * t[pos]
    out[pos] = np.exp(-(x[pos] - spec.x0 - spec.mu * t[pos]) ** 2 / (2 * var)) / np.sqrt(2 * np.pi * var)
    return out if out.ndim else float(out)


def wiener_sample_paths(spec: WienerSpec, n_paths: int, dt: float, T: float, seed: int) -> np.ndarray:
    """Exact-increment paths on the grid 0, dt, ..., T as rows (path_id, t, x)."""
    if not (dt > 0 and T > 0):
        raise ValueError("need dt > 0 and T > 0")
    n_steps = int(round(T / dt))
    t = np.arange(n_steps + 1) * dt
    rows = []
    for path in range(n_paths):
        rng = derive_rng(seed, "wiener", path)
        inc = spec.mu * dt + spec.sigma * np.sqrt(dt) * rng.standard_normal(n_steps)
        x = spec.x0 + np.concatenate([[0.0], np.cumsum(inc)])
        rows.append(np.column_stack([np.full(n_steps + 1, path), t, x]))
    return np.vstack(rows)


def kde_l1_error(spec: WienerSpec, records: np.ndarray, h: float, x_grid, t_grid, horizon: float) -> float:
    """L1 distance on an (x, t) grid between horizon * KDE and the Wiener density.

    Records are spread uniformly over [0, horizon], so the pooled KDE
    estimates q(x, t) / horizon.
    """
    kde = kde_insert(SpacetimeKDE(h), records[:, 2], records[:, 1])
    X, Tt = np.meshgrid(np.asarray(x_grid, float), np.asarray(t_grid, float), indexing="ij")
    est = horizon * kde_eval(kde, X, Tt)
    truth = wiener_density(spec, X, Tt)
    dx = float(np.diff(x_grid).mean()) if len(x_grid) > 1 else 1.0
    dtt = float(np.diff(t_grid).mean()) if len(t_grid) > 1 else 1.0
    return float(np.abs(est - truth).sum() * dx * dtt)
