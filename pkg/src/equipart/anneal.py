"""Generic simulated annealing over arbitrary state sets, with perturbation kernels and box projection."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .domain import derive_rng


class NonFiniteEnergyError(ArithmeticError):
    def __init__(self, state, energy):
        text = np.array2string(np.asarray(state), threshold=20) if hasattr(state, "__len__") else repr(state)
        super().__init__(f"energy {energy!r} at state {text}")
        self.state = state
        self.energy = energy


@dataclass(frozen=True)
class AnnealConfig:
    beta0: float = 0.1
    schedule: str = "geometric"
    ratio: float = 1.003
    increment: float = 1.0
    beta_max: float = 1e6
    eps: float = 0.0
    tau: int = 2000
    max_iters: int = 1_000_000
    n_max: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.beta0 > 0:
            raise ValueError("beta0 must be > 0")
        if self.schedule == "geometric":
            if not self.ratio > 1:
                raise ValueError("geometric ratio must be > 1")
        elif self.schedule == "linear":
            if not self.increment > 0:
                raise ValueError("linear increment must be > 0")
        else:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")

    def next_beta(self, beta: float) -> float:
        return beta * self.ratio if self.schedule == "geometric" else beta + self.increment


@dataclass(frozen=True)
class StateSpace:
    """Energy H(x), proposal kernel a(x, rng) and an optional projection onto the feasible set."""

    energy: Callable
    perturb: Callable
    project: Callable | None = None


@dataclass(eq=False)
class AnnealHistory:
    iteration: np.ndarray
    energy: np.ndarray
    best: np.ndarray
    beta: np.ndarray
    accepted: np.ndarray
    proposed: np.ndarray = field(default=None)
    uniform: np.ndarray = field(default=None)
    stop_reason: str = ""

    def __len__(self):
        return len(self.iteration)

    def columns(self) -> dict:
        return {"iter": self.iteration, "E": self.energy, "E_best": self.best,
                "beta": self.beta, "accepted": self.accepted.astype(np.int64)}


def _checked(space: StateSpace, x):
    E = float(space.energy(x))
    if not np.isfinite(E):
        raise NonFiniteEnergyError(x, E)
    return E


def anneal(space: StateSpace, config: AnnealConfig, x0, callback: Callable | None = None):
    """Metropolis chain with an increasing inverse temperature; returns (best state, history).

    A proposal is accepted when it lowers the energy or when
    exp(-beta (E' - E)) >= u for a fresh uniform u (drawn every iteration so
    the random stream does not depend on the comparison).  The run stops at
    beta >= beta_max, when |E(t) - E(t - tau)| <= eps, or after max_iters.
    """
    rng = derive_rng(config.seed, "anneal")
    x = space.project(x0) if space.project is not None else x0
    E = _checked(space, x)
    best_x, best_E = x, E
    beta = config.beta0
    n = config.max_iters
    cols = {k: np.empty(n) for k in ("E", "best", "beta", "proposed", "uniform")}
    accepted = np.zeros(n, dtype=bool)
    reason = "max_iters"
    it = 0
    while it < n:
        x_new = space.perturb(x, rng)
        if space.project is not None:
            x_new = space.project(x_new)
        if callback is not None:
            callback(x_new)
        E_new = _checked(space, x_new)
        u = rng.random()
        ok = E_new < E or np.exp(-beta * (E_new - E)) >= u
        if ok:
            x, E = x_new, E_new
            if E < best_E:
                best_x, best_E = x, E
        cols["E"][it] = E
        cols["best"][it] = best_E
        cols["beta"][it] = beta
        cols["proposed"][it] = E_new
        cols["uniform"][it] = u
        accepted[it] = ok
        it += 1
        beta = config.next_beta(beta)
        if beta >= config.beta_max:
            reason = "beta_max"
            break
        if it > config.tau and abs(E - cols["E"][it - 1 - config.tau]) <= config.eps:
            reason = "stalled"
            break
    hist = AnnealHistory(np.arange(1, it + 1), cols["E"][:it].copy(), cols["best"][:it].copy(),
                         cols["beta"][:it].copy(), accepted[:it].copy(), cols["proposed"][:it].copy(),
                         cols["uniform"][:it].copy(), reason)
    return best_x, hist


def anneal_restarts(space: StateSpace, config: AnnealConfig, x0, restarts: int):
    """Independent chains with derived seeds; the lowest final best wins (first on ties)."""
    results = []
    for r in range(restarts):
        seed = int(derive_rng(config.seed, "restart", r).integers(2 ** 63))
        results.append(anneal(space, replace(config, seed=seed), x0))
    k = int(np.argmin([h.best[-1] for _, h in results]))
    return results[k][0], results[k][1], k


# ---------------------------------------------------------------------------
# proposal kernels
# ---------------------------------------------------------------------------


def _element_scale(x: np.ndarray) -> float:
    s = float(np.std(x))
    return s if s > 0 else 1.0


def _pick(size: int, n_max: int, rng, indices):
    if indices is not None:
        return np.asarray(indices, dtype=np.int64).ravel()
    if n_max > size:
        raise ValueError("n_max exceeds the number of elements")
    k = int(rng.integers(0, n_max + 1))
    return rng.choice(size, size=k, replace=False)


def perturb_real(x, n_max: int, rng, indices=None) -> np.ndarray:
    """Add N(0, std(x)) noise to k ~ U{0..n_max} distinct elements (scale 1 for constant x)."""
    x = np.asarray(x, dtype=float)
    flat = x.ravel().copy()
    idx = _pick(flat.size, n_max, rng, indices)
    flat[idx] += rng.normal(0.0, _element_scale(x), size=len(idx))
    return flat.reshape(x.shape)


# symmetric unit-variance step distribution on {-2, ..., 2}
RING_STEPS = np.array([-2, -1, 0, 1, 2])
RING_PROBS = np.array([1 / 12, 1 / 6, 1 / 2, 1 / 6, 1 / 12])


def perturb_ring(x, ring: str, rng, n_max: int, indices=None) -> np.ndarray:
    """Binary: flip k selected entries.  Integer: shift them by round(std(x) * step)."""
    x = np.asarray(x)
    flat = x.ravel().copy()
    idx = _pick(flat.size, n_max, rng, indices)
    if ring == "binary":
        flat[idx] = 1 - flat[idx]
    elif ring == "integer":
        steps = rng.choice(RING_STEPS, size=len(idx), p=RING_PROBS)
        flat[idx] = flat[idx] + np.rint(_element_scale(x) * steps).astype(flat.dtype)
    else:
        raise ValueError(f"unknown ring {ring!r}")
    return flat.reshape(x.shape)


def project_box(x, lower, upper) -> np.ndarray:
    """Nearest point of the box [lower, upper] (componentwise clamp; bounds may be infinite)."""
    return np.clip(np.asarray(x, dtype=float), lower, upper)


# ---------------------------------------------------------------------------
# ready-made test problems
# ---------------------------------------------------------------------------


def quadratic_space(target, n_max: int = 1) -> StateSpace:
    target = np.asarray(target, dtype=float)
    return StateSpace(lambda x: float(((x - target) ** 2).sum()),
                      lambda x, rng: perturb_real(x, n_max, rng))


def binary_space(n_max: int = 1) -> StateSpace:
    return StateSpace(lambda x: float(np.sum(x)),
                      lambda x, rng: perturb_ring(x, "binary", rng, n_max))
