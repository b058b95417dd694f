"""Heat-flow transform of a density toward the uniform law, its point map, and the inverse selector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft
from scipy.interpolate import RegularGridInterpolator

from .domain import DensityField, GridField, VariationalProblem, normalize_density


@dataclass(frozen=True, eq=False)
class CosineExpansion:
    """q(x) = sum_k a_k prod_j cos(pi k_j (x_j - lo_j) / L_j) on one box.

    ``coeffs[0, ..., 0]`` is the field mean; ``resolution`` is the lattice the
    expansion was taken from and is reused when synthesising fields.
    """

    coeffs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    resolution: tuple
    time: float = 0.0

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    def decay_factors(self, t: float) -> np.ndarray:
        wave2 = 0.0
        for j, m in enumerate(self.coeffs.shape):
            shape = [1] * self.coeffs.ndim
            shape[j] = m
            wave2 = wave2 + (np.arange(m) / self.lengths[j]).reshape(shape) ** 2
        return np.exp(-np.pi ** 2 * wave2 * t)

    def evolved(self, t: float) -> "CosineExpansion":
        if t < 0:
            raise ValueError("diffusion time must be >= 0")
        return CosineExpansion(self.coeffs * self.decay_factors(t), self.lower, self.upper,
                               self.resolution, self.time + t)

    def trimmed(self, rtol: float = 1e-13) -> "CosineExpansion":
        """Drop modes along each axis whose decay since ``time`` 0 fell below ``rtol``."""
        if self.time <= 0:
            return self
        keep = []
        for j, m in enumerate(self.coeffs.shape):
            k = np.arange(m)
            alive = np.exp(-np.pi ** 2 * (k / self.lengths[j]) ** 2 * self.time) >= rtol
            keep.append(slice(0, max(1, int(alive.sum()))))
        return CosineExpansion(self.coeffs[tuple(keep)], self.lower, self.upper, self.resolution, self.time)

    def _bases(self, points, derivative_axis=None):
        out = []
        for j, m in enumerate(self.coeffs.shape):
            w = np.pi * np.arange(m) / self.lengths[j]
            arg = np.outer(points[:, j] - self.lower[j], w)
            out.append(-w * np.sin(arg) if j == derivative_axis else np.cos(arg))
        return out

    @staticmethod
    def _contract(coeffs, bases):
        res = np.einsum("pa,a...->p...", bases[0], coeffs)
        for b in bases[1:]:
            res = np.einsum("pa,pa...->p...", b, res)
        return res

    def evaluate(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self._contract(self.coeffs, self._bases(points))

    def gradient(self, points) -> np.ndarray:
        return self.value_and_gradient(points)[1]

    def value_and_gradient(self, points):
        """q and grad q at ``points`` from one set of cos/sin tables."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cos, dcos = [], []
        for j, m in enumerate(self.coeffs.shape):
            w = np.pi * np.arange(m) / self.lengths[j]
            arg = np.outer(points[:, j] - self.lower[j], w)
            cos.append(np.cos(arg))
            dcos.append(-w * np.sin(arg))
        if self.coeffs.ndim == 2:
            a = self.coeffs
            ca = cos[0] @ a
            da = dcos[0] @ a
            value = np.einsum("pb,pb->p", ca, cos[1])
            grad = np.stack([np.einsum("pb,pb->p", da, cos[1]), np.einsum("pb,pb->p", ca, dcos[1])], axis=1)
            return value, grad
        value = self._contract(self.coeffs, cos)
        cols = []
        for j in range(self.coeffs.ndim):
            bases = list(cos)
            bases[j] = dcos[j]
            cols.append(self._contract(self.coeffs, bases))
        return value, np.stack(cols, axis=1)

    def synthesize(self) -> np.ndarray:
        """Values at the cell centers of ``resolution`` (row-major, flat)."""
        res = self.coeffs
        for j, n in enumerate(self.resolution):
            m = self.coeffs.shape[j]
            x = (np.arange(n) + 0.5) / n
            basis = np.cos(np.pi * np.outer(x, np.arange(m)))
            res = np.tensordot(res, basis, axes=([0], [1]))
        return res.ravel()


def cosine_expand(p: GridField, M=None) -> CosineExpansion:
    """Discrete cosine coefficients of a single-box field, truncated to M modes per axis."""
    if len(p.domain.boxes) != 1:
        raise ValueError("expand per box")
    res = p.resolution[0]
    if M is None:
        M = res
    M = tuple(int(m) for m in np.broadcast_to(np.atleast_1d(M), (len(res),)))
    if any(m < 1 or m > n for m, n in zip(M, res)):
        raise ValueError("need 1 <= M <= resolution on every axis")
    X = fft.dctn(p.box_values(0), type=2)
    for j, n in enumerate(res):
        scale = np.full(n, 1.0 / n)
        scale[0] = 0.5 / n
        shape = [1] * len(res)
        shape[j] = n
        X = X * scale.reshape(shape)
    lo, hi = p.domain.boxes[0]
    return CosineExpansion(X[tuple(slice(0, m) for m in M)].copy(), lo.copy(), hi.copy(), tuple(res))


def heat_evolve(expansion: CosineExpansion, t: float) -> DensityField:
    """Density after diffusing for time ``t`` under zero-flux walls."""
    ev = expansion.evolved(t)
    dom_field = GridField.on_box(ev.lower, ev.upper, np.zeros(ev.resolution))
    vals = ev.synthesize()
    if np.any(vals < 0):  # truncation ringing
        return normalize_density(dom_field.with_values(np.maximum(vals, 0.0)))
    return DensityField(dom_field.domain, dom_field.resolution, vals)


def _reflect(x, lo, hi):
    x = np.where(x < lo, 2 * lo - x, x)
    x = np.where(x > hi, 2 * hi - x, x)
    return np.clip(x, lo, hi)


def _time_grid(t_final: float, steps: int) -> np.ndarray:
    # quadratic spacing: fine steps while high modes are still alive
    return t_final * (np.arange(steps + 1) / steps) ** 2


def _velocity(expansion: CosineExpansion, x, t, qmin):
    q, grad = expansion.evolved(t).trimmed().value_and_gradient(x)
    return -grad / np.maximum(q, qmin)[:, None]


def _advect(expansion, points, times, qmin):
    x = points.copy()
    lo, hi = expansion.lower, expansion.upper
    for t0, t1 in zip(times[:-1], times[1:]):
        dt = t1 - t0
        k1 = _velocity(expansion, x, t0, qmin)
        mid = _reflect(x + 0.5 * dt * k1, lo, hi)
        k2 = _velocity(expansion, mid, t0 + 0.5 * dt, qmin)
        x = _reflect(x + dt * k2, lo, hi)
    return x


def transform_points(p: DensityField, points, t_final: float, steps: int = 200, M=None) -> np.ndarray:
    """Carry points along the probability-flux velocity v = -grad q / q of the diffusing density.

    Explicit midpoint (RK2) stepping on a time grid refined near t = 0;
    points leaving the box are reflected back in.
    """
    if t_final < 0:
        raise ValueError("t_final must be >= 0")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(p.domain.contains(points)):
        raise ValueError("points must lie inside the domain")
    exp = cosine_expand(p, M)
    if t_final == 0:
        return points.copy()
    qmin = 1e-9 * float(exp.coeffs.flat[0])
    return _advect(exp, points, _time_grid(t_final, steps), qmin)


def inverse_transform_points(p: DensityField, points, t_final: float, steps: int = 200, M=None) -> np.ndarray:
    """Preimages under ``transform_points``: the same flow integrated backward in time."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    exp = cosine_expand(p, M)
    if t_final == 0:
        return points.copy()
    qmin = 1e-9 * float(exp.coeffs.flat[0])
    return _advect(exp, points, _time_grid(t_final, steps)[::-1], qmin)


# ---------------------------------------------------------------------------
# equipartition invariant
# ---------------------------------------------------------------------------


def equipartition_residual(problem: VariationalProblem, solution) -> float:
    """Relative spread of the constraint-weighted marginal ratio in diffused coordinates.

    Per cell r = -(sum_l lam_l df_l/dS) / (d objective/dS), which equals p(x)
    at a stationary point.  The diffusion transform rescales volumes by
    p / <p>, so r <p> / p is the invariant; it is constant (= <p>) across the
    domain exactly when the allocation is optimal.  Returns
    (max - min) / |mean| over cells with p > 0.
    """
    S = np.asarray(solution.S.values, dtype=float)
    marginal = problem.objective_deriv(S)
    if np.any(marginal == 0):
        raise ValueError("degenerate marginal benefit")
    weighted = np.zeros_like(S)
    for lam, con in zip(solution.multipliers, problem.constraints):
        weighted = weighted + lam * con.fprime(S)
    p = problem.density.values
    keep = p > 0
    r = -weighted[keep] / marginal[keep] * problem.density.mean / p[keep]
    return float((r.max() - r.min()) / abs(r.mean()))


# ---------------------------------------------------------------------------
# inverse selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InverseResult:
    best: tuple
    norms: np.ndarray
    scales: np.ndarray


def _model_exponent(model) -> float:
    e = getattr(model, "exponent", model)
    if e is None:
        raise ValueError("model has no power-law exponent")
    return float(e)


def gradient_l1(values: np.ndarray, spacing) -> float:
    """Sum over cells of |forward-difference gradient| times cell volume."""
    grads = []
    for j, h in enumerate(spacing):
        d = np.diff(values, axis=j) / h
        pad = [(0, 0)] * values.ndim
        pad[j] = (0, 1)
        grads.append(np.pad(d, pad))
    mag = np.sqrt(sum(g ** 2 for g in grads))
    return float(mag.sum() * np.prod(spacing))


def inverse_select(Y: GridField, densities, models, t: float | None = None, steps: int = 100) -> InverseResult:
    """Pick the (density, model) pair under which Y looks most evenly spread.

    For each density p_i and power-law model p -> c p^e: fit c by least
    squares, take the observed-to-model ratio Y / (c p_i^e), carry it into the
    diffused coordinates of p_i (lattice points pulled back through the flow
    of ``transform_points``), and score the L1 norm of its forward-difference
    gradient.  Lowest score wins; ties go to the lexicographically first (i, j).
    """
    densities = list(densities)
    models = list(models)
    if not densities or not models:
        raise ValueError("need at least one candidate")
    if len(Y.domain.boxes) != 1:
        raise ValueError("inverse selection works on a single box")
    lo, hi = Y.domain.boxes[0]
    if t is None:
        t = 0.5 * float(np.max(hi - lo)) ** 2
    shape = Y.resolution[0]
    h = Y.spacing(0)
    w = Y.cell_volumes()
    y = np.asarray(Y.values, dtype=float)
    grid_axes = [lo[k] + (np.arange(n) + 0.5) * h[k] for k, n in enumerate(shape)]
    centers = Y.centers()

    norms = np.empty((len(densities), len(models)))
    scales = np.empty_like(norms)
    for i, p in enumerate(densities):
        if p.resolution != Y.resolution or not p.domain.same_as(Y.domain):
            raise ValueError("candidate density lattice differs from Y")
        pre = inverse_transform_points(p, centers, t, steps)
        for j, model in enumerate(models):
            pe = p.values ** _model_exponent(model)
            c = float(np.dot(w, y * pe) / np.dot(w, pe * pe))
            fit = np.maximum(c * pe, 1e-12 * max(abs(c) * pe.max(), 1e-300))
            ratio = (y / fit).reshape(shape)
            interp = RegularGridInterpolator(grid_axes, ratio, bounds_error=False, fill_value=None)
            pulled = interp(pre).reshape(shape)
            norms[i, j] = gradient_l1(pulled, h)
            scales[i, j] = c
    flat = norms.ravel()
    best = flat.min()
    k = int(np.flatnonzero(flat <= best + 1e-12 * abs(best))[0])
    return InverseResult(divmod(k, len(models)), norms, scales)
