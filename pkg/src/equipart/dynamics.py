"""Time-dependent allocation: Hamilton field equations with transport cost, damping, overdamped limit."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .domain import FLOOR, FloorClampWarning, GridField, VariationalProblem
from .static import analytic_power_optimum, gradient_step, solve_static


@dataclass(frozen=True, eq=False)
class Velocity:
    """Coordinate velocity g(x, t): ``zero``, ``constant`` (vector) or ``linear`` (matrix @ x + offset)."""

    kind: str = "zero"
    vector: np.ndarray | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "linear"):
            raise ValueError(f"unknown velocity kind {self.kind!r}")
        if self.kind == "constant" and self.vector is None:
            raise ValueError("constant velocity needs a vector")
        if self.kind == "linear" and self.matrix is None:
            raise ValueError("linear velocity needs a matrix")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def at(self, points: np.ndarray, t: float) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.kind == "zero":
            return np.zeros_like(points)
        if self.kind == "constant":
            return np.broadcast_to(np.asarray(self.vector, dtype=float), points.shape)
        g = points @ np.asarray(self.matrix, dtype=float).T
        if self.vector is not None:
            g = g + np.asarray(self.vector, dtype=float)
        return g


@dataclass(frozen=True, eq=False)
class TransportSpec:
    alpha: float = 2.0
    velocity: Velocity = field(default_factory=Velocity)
    friction: GridField | None = None

    def __post_init__(self):
        if not 1.0 <= self.alpha <= 2.0:
            raise ValueError("alpha must lie in [1, 2]")
        if self.friction is not None and np.any(np.asarray(self.friction.values) < 0):
            raise ValueError("friction must be >= 0 everywhere")


@dataclass(frozen=True, eq=False)
class PhaseState:
    S: GridField
    Pi: GridField
    t: float = 0.0
    clamped: bool = False


@dataclass(eq=False)
class Trajectory:
    states: list
    dt: float
    energies: list = field(default_factory=list)


def signed_power(x, a):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** a


# ---------------------------------------------------------------------------
# material derivative
# ---------------------------------------------------------------------------


def _upwind_advection(f: GridField, vals: np.ndarray, g: np.ndarray) -> np.ndarray:
    """g . grad(vals) with upwind one-sided differences, per box."""
    out = np.zeros(f.n_cells)
    for b, sl in enumerate(f.box_slices()):
        shape = f.resolution[b]
        v = vals[sl].reshape(shape)
        gb = g[sl]
        acc = np.zeros(shape)
        for j, h in enumerate(f.spacing(b)):
            if shape[j] < 2:
                continue
            d = np.diff(v, axis=j) / h
            back = np.concatenate([np.take(d, [0], axis=j), d], axis=j)
            fwd = np.concatenate([d, np.take(d, [-1], axis=j)], axis=j)
            gj = gb[:, j].reshape(shape)
            acc += gj * np.where(gj > 0, back, fwd)
        out[sl] = acc.ravel()
    return out


def material_derivative(field_now: GridField, field_prev: GridField, dt: float,
                        velocity: Velocity, t: float) -> GridField:
    """(d/dt + g . grad) by a backward time difference and upwind space differences."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    now = np.asarray(field_now.values, dtype=float)
    out = (now - np.asarray(field_prev.values, dtype=float)) / dt
    if not velocity.is_zero:
        out = out + _upwind_advection(field_now, now, velocity.at(field_now.centers(), t))
    return field_now.with_values(out)


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def static_optimum(problem: VariationalProblem):
    """Static optimum of ``problem`` (closed form when available), cached per problem object."""
    try:
        return analytic_power_optimum(problem)
    except ValueError:
        pass
    K = problem.constraints[0].K
    init = problem.density.with_values(np.full(problem.density.n_cells, K / problem.density.domain.volume))
    return solve_static(problem, init)


def equilibrium_multipliers(problem: VariationalProblem) -> np.ndarray:
    return static_optimum(problem).multipliers


def _multipliers(problem, multipliers):
    return equilibrium_multipliers(problem) if multipliers is None else np.asarray(multipliers, dtype=float)


def _clamp(problem, S):
    if not getattr(problem.loss, "has_pole", False):
        return S, False
    low = S < FLOOR
    if np.any(low):
        warnings.warn(f"{int(low.sum())} cells clamped at the positivity floor", FloorClampWarning, stacklevel=3)
        return np.maximum(S, FLOOR), True
    return S, False


def _advance(state, problem, transport, dt, multipliers, friction):
    if not dt > 0:
        raise ValueError("dt must be > 0")
    alpha = transport.alpha
    if alpha == 1.0:
        # infinitely fast allocation: jump straight to the static optimum
        S_opt = static_optimum(problem).S
        return PhaseState(state.S.with_values(np.asarray(S_opt.values, dtype=float).copy()),
                          state.Pi.with_values(np.zeros(state.Pi.n_cells)), state.t + dt, state.clamped)
    lam = _multipliers(problem, multipliers)
    S = np.asarray(state.S.values, dtype=float)
    Pi = np.asarray(state.Pi.values, dtype=float)
    force = problem.gradient(S, lam)
    moving = not transport.velocity.is_zero
    if moving:
        g = transport.velocity.at(state.S.centers(), state.t)
        force = force + _upwind_advection(state.Pi, Pi, g)
    Pi_new = Pi - dt * force
    if friction is not None:
        Pi_new = Pi_new / (1.0 + dt * friction)
    rate = signed_power(Pi_new, 1.0 / (alpha - 1.0))
    if moving:
        rate = rate - _upwind_advection(state.S, S, g)
    S_new, clamped = _clamp(problem, S + dt * rate)
    return PhaseState(state.S.with_values(S_new), state.Pi.with_values(Pi_new), state.t + dt,
                      state.clamped or clamped)


def hamilton_step(state: PhaseState, problem: VariationalProblem, transport: TransportSpec, dt: float,
                  multipliers=None) -> PhaseState:
    """Symplectic Euler: kick the momentum with the current force, then drift S.

    Pi <- Pi - dt (p dL/dS + sum lam df/dS);  S <- S + dt sign(Pi)|Pi|^(1/(alpha-1)).
    With moving coordinates both updates follow the material operator.
    """
    return _advance(state, problem, transport, dt, multipliers, None)


def damped_step(state: PhaseState, problem: VariationalProblem, transport: TransportSpec, dt: float,
                multipliers=None) -> PhaseState:
    """Hamilton step plus the Rayleigh force -k(x) DS/Dt, taken implicitly in the momentum."""
    if transport.alpha != 2.0:
        raise ValueError("damped dynamics needs alpha = 2")
    k = None if transport.friction is None else np.asarray(transport.friction.values, dtype=float)
    return _advance(state, problem, transport, dt, multipliers, k)


def overdamped_step(S: GridField, problem: VariationalProblem, friction: GridField, dt: float,
                    multipliers=None) -> GridField:
    """S <- S - (dt / k) * functional gradient: one gradient-descent step with rate dt/k."""
    k = np.asarray(friction.values, dtype=float)
    if np.any(k <= 0):
        raise ValueError("friction must be > 0 everywhere")
    lam = _multipliers(problem, multipliers)
    vals = np.asarray(S.values, dtype=float)
    floor = FLOOR if getattr(problem.loss, "has_pole", False) else -np.inf
    new = gradient_step(vals, problem.gradient(vals, lam), dt / k, floor)
    if floor > -np.inf and np.any(vals - (dt / k) * problem.gradient(vals, lam) < floor):
        warnings.warn("cells clamped at the positivity floor", FloorClampWarning, stacklevel=2)
    return S.with_values(new)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def hamiltonian(state: PhaseState, problem: VariationalProblem, transport: TransportSpec, multipliers=None) -> float:
    """Integral of (alpha-1)/alpha |Pi|^(alpha/(alpha-1)) + p L(S) + sum lam f(S)."""
    a = transport.alpha
    lam = _multipliers(problem, multipliers)
    S = np.asarray(state.S.values, dtype=float)
    Pi = np.asarray(state.Pi.values, dtype=float)
    kinetic = 0.0 if a == 1.0 else (a - 1.0) / a * np.abs(Pi) ** (a / (a - 1.0))
    dens = kinetic + problem.density.values * problem.objective(S)
    for l, con in zip(lam, problem.constraints):
        dens = dens + l * con.f(S)
    return float(np.dot(dens, problem.density.cell_volumes()))


def run_dynamics(state: PhaseState, problem: VariationalProblem, transport: TransportSpec, dt: float,
                 steps: int, damped: bool = False, multipliers=None, keep_every: int = 1) -> Trajectory:
    lam = _multipliers(problem, multipliers)
    step = damped_step if damped else hamilton_step
    traj = Trajectory([state], dt, [hamiltonian(state, problem, transport, lam)])
    for n in range(1, steps + 1):
        prev = state
        state = step(state, problem, transport, dt, lam)
        if n % keep_every == 0 or n == steps:
            if keep_every > 1:
                traj.states.append(prev)
            traj.states.append(state)
            traj.energies.append(hamiltonian(state, problem, transport, lam))
    return traj


def verify_legendre(trajectory: Trajectory, transport: TransportSpec) -> float:
    """max |Pi - sign(DS/Dt)|DS/Dt|^(alpha-1)| over consecutive recorded steps."""
    worst = 0.0
    a = transport.alpha
    dt = trajectory.dt
    for prev, now in zip(trajectory.states[:-1], trajectory.states[1:]):
        if not np.isclose(now.t - prev.t, dt, rtol=1e-9, atol=0.0):
            continue  # gap in a thinned record
        rate = material_derivative(now.S, prev.S, dt, transport.velocity, now.t)
        pred = signed_power(rate.values, a - 1.0)
        worst = max(worst, float(np.max(np.abs(np.asarray(now.Pi.values) - pred))))
    return worst


def first_passage_time(state: PhaseState, problem: VariationalProblem, transport: TransportSpec, dt: float,
                       target: np.ndarray, rtol: float = 0.01, max_steps: int = 1_000_000,
                       multipliers=None) -> float:
    """Time until every cell is within ``rtol`` of ``target`` or has crossed it."""
    lam = _multipliers(problem, multipliers)
    target = np.asarray(target, dtype=float)
    side0 = np.sign(np.asarray(state.S.values) - target)
    for _ in range(max_steps):
        S = np.asarray(state.S.values)
        close = np.abs(S - target) <= rtol * np.abs(target)
        crossed = np.sign(S - target) != side0
        if np.all(close | crossed):
            return state.t
        state = hamilton_step(state, problem, transport, dt, lam)
    raise RuntimeError("no passage within max_steps")
