"""Domains, lattice fields, densities, loss/constraint families and seeded sampling.

Every field in the package lives on a union of disjoint axis-aligned boxes,
each carrying its own regular lattice.  Values are stored flat, box after
box, each box in row-major (C) order over its cells.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FLOOR = 1e-12  # positivity floor for resources under pole losses


class ConvergenceError(ArithmeticError):
    """An iterative solver ran out of iterations; ``residual`` is the last one seen."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class FloorClampWarning(RuntimeWarning):
    """A resource value was clamped up to the positivity floor."""


def derive_rng(seed: int, label: str = "", index: int = 0) -> np.random.Generator:
    """Independent generator for (master seed, operation label, task index)."""
    key = (zlib.crc32(label.encode()), int(index))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


# ---------------------------------------------------------------------------
# domains and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoxDomain:
    """Union of disjoint axis-aligned boxes in R^N."""

    boxes: tuple

    def __post_init__(self):
        boxes = []
        for lo, hi in self.boxes:
            lo = np.atleast_1d(np.asarray(lo, dtype=float))
            hi = np.atleast_1d(np.asarray(hi, dtype=float))
            if lo.shape != hi.shape:
                raise ValueError("box bounds have mismatched dimension")
            if np.any(lo >= hi):
                raise ValueError(f"box has lower >= upper: {lo} {hi}")
            boxes.append((lo, hi))
        if not boxes:
            raise ValueError("domain needs at least one box")
        dims = {b[0].size for b in boxes}
        if len(dims) != 1:
            raise ValueError("boxes have different dimensions")
        for a in range(len(boxes)):
            for b in range(a + 1, len(boxes)):
                lo = np.maximum(boxes[a][0], boxes[b][0])
                hi = np.minimum(boxes[a][1], boxes[b][1])
                if np.all(hi > lo):
                    raise ValueError(f"boxes {a} and {b} overlap")
        object.__setattr__(self, "boxes", tuple(boxes))

    @classmethod
    def unit(cls, dims: int = 1) -> "BoxDomain":
        return cls(((np.zeros(dims), np.ones(dims)),))

    @classmethod
    def single(cls, lower, upper) -> "BoxDomain":
        return cls(((lower, upper),))

    @property
    def dims(self) -> int:
        return self.boxes[0][0].size

    def volumes(self) -> np.ndarray:
        return np.array([np.prod(hi - lo) for lo, hi in self.boxes])

    @property
    def volume(self) -> float:
        return float(self.volumes().sum())

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        inside = np.zeros(len(points), dtype=bool)
        for lo, hi in self.boxes:
            inside |= np.all((points >= lo) & (points <= hi), axis=1)
        return inside

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Volume-weighted box choice, then uniform within the box."""
        vols = self.volumes()
        which = rng.choice(len(vols), size=n, p=vols / vols.sum())
        out = np.empty((n, self.dims))
        for b, (lo, hi) in enumerate(self.boxes):
            sel = which == b
            out[sel] = lo + (hi - lo) * rng.random((int(sel.sum()), self.dims))
        return out

    def same_as(self, other: "BoxDomain") -> bool:
        if len(self.boxes) != len(other.boxes):
            return False
        return all(
            np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
            for a, b in zip(self.boxes, other.boxes)
        )


@dataclass(frozen=True, eq=False)
class GridField:
    """Scalar field on a lattice over a BoxDomain (one lattice per box)."""

    domain: BoxDomain
    resolution: tuple
    values: np.ndarray

    def __post_init__(self):
        res = tuple(tuple(int(n) for n in np.atleast_1d(r)) for r in self.resolution)
        if len(res) != len(self.domain.boxes):
            raise ValueError("need one resolution per box")
        for r in res:
            if len(r) != self.domain.dims or min(r) < 1:
                raise ValueError(f"bad resolution {r}")
        values = np.array(self.values, dtype=float).ravel()
        expected = sum(int(np.prod(r)) for r in res)
        if values.size != expected:
            raise ValueError(f"expected {expected} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "values", values)

    @classmethod
    def on_box(cls, lower, upper, values) -> "GridField":
        """Single-box field; resolution taken from the shape of ``values``."""
        values = np.asarray(values, dtype=float)
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        if values.ndim != lo.size:
            raise ValueError("values must have one array axis per domain axis")
        dom = BoxDomain(((lower, upper),))
        return cls(dom, (values.shape,), values.ravel())

    @classmethod
    def from_function(cls, domain: BoxDomain, resolution, func) -> "GridField":
        """Sample ``func(points) -> values`` at cell centers."""
        probe = cls(domain, resolution, np.zeros(_count(domain, resolution)))
        return cls(domain, probe.resolution, func(probe.centers()))

    @property
    def n_cells(self) -> int:
        return self.values.size

    def box_slices(self) -> list[slice]:
        out, start = [], 0
        for r in self.resolution:
            n = int(np.prod(r))
            out.append(slice(start, start + n))
            start += n
        return out

    def box_values(self, b: int = 0) -> np.ndarray:
        return self.values[self.box_slices()[b]].reshape(self.resolution[b])

    def spacing(self, b: int = 0) -> np.ndarray:
        lo, hi = self.domain.boxes[b]
        return (hi - lo) / np.asarray(self.resolution[b])

    def cell_volumes(self) -> np.ndarray:
        out = np.empty(self.n_cells)
        for b, sl in enumerate(self.box_slices()):
            out[sl] = np.prod(self.spacing(b))
        return out

    def box_centers(self, b: int = 0) -> np.ndarray:
        lo, _ = self.domain.boxes[b]
        h = self.spacing(b)
        axes = [lo[k] + (np.arange(n) + 0.5) * h[k] for k, n in enumerate(self.resolution[b])]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def centers(self) -> np.ndarray:
        return np.concatenate([self.box_centers(b) for b in range(len(self.resolution))])

    def with_values(self, values) -> "GridField":
        return GridField(self.domain, self.resolution, values)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index of each point (-1 outside the domain)."""
        points = np.atleast_2d(points)
        idx = np.full(len(points), -1, dtype=np.int64)
        for b, sl in enumerate(self.box_slices()):
            lo, hi = self.domain.boxes[b]
            res = np.asarray(self.resolution[b])
            inside = np.all((points >= lo) & (points <= hi), axis=1) & (idx < 0)
            if not inside.any():
                continue
            ijk = np.floor((points[inside] - lo) / self.spacing(b)).astype(np.int64)
            ijk = np.clip(ijk, 0, res - 1)
            idx[inside] = sl.start + np.ravel_multi_index(tuple(ijk.T), tuple(res))
        return idx


def _count(domain: BoxDomain, resolution) -> int:
    return sum(int(np.prod(np.atleast_1d(r))) for r in resolution)


class DensityField(GridField):
    """Nonnegative GridField integrating to one."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise ValueError("density has negative values")
        total = float(np.dot(self.values, self.cell_volumes()))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"density integrates to {total}, not 1")

    def with_values(self, values) -> GridField:
        return GridField(self.domain, self.resolution, values)

    @property
    def mean(self) -> float:
        """Spatial average of the density, i.e. 1/|Omega|."""
        return 1.0 / float(self.cell_volumes().sum())


def integrate(field: GridField) -> float:
    """Midpoint-rule integral over the domain."""
    return float(np.dot(field.values, field.cell_volumes()))


def normalize_density(field: GridField) -> DensityField:
    vals = np.asarray(field.values, dtype=float)
    if np.any(vals < 0):
        raise ValueError("density values must be nonnegative")
    total = integrate(field)
    if total <= 0:
        raise ValueError("degenerate density")
    return DensityField(field.domain, field.resolution, vals / total)


def sample_density(p: DensityField, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` points: categorical draw of a cell, uniform jitter inside it."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = derive_rng(seed, "sample_density")
    mass = p.values * p.cell_volumes()
    cells = rng.choice(p.n_cells, size=n, p=mass / mass.sum())
    centers = p.centers()
    half = np.empty((p.n_cells, p.domain.dims))
    for b, sl in enumerate(p.box_slices()):
        half[sl] = 0.5 * p.spacing(b)
    jitter = rng.uniform(-1.0, 1.0, size=(n, p.domain.dims))
    return centers[cells] + jitter * half[cells]


# ---------------------------------------------------------------------------
# loss and constraint families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerLaw:
    """HOT cost L(S) = S^-gamma."""

    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")

    has_pole = True

    @property
    def exponent(self) -> float:
        return 1.0 / (self.gamma + 1.0)

    @property
    def power(self) -> float:
        return self.gamma

    def value(self, S):
        return S ** (-self.power)

    def deriv(self, S):
        return -self.power * S ** (-self.power - 1.0)

    def deriv2(self, S):
        return self.power * (self.power + 1.0) * S ** (-self.power - 2.0)


@dataclass(frozen=True)
class VolumeMedian(PowerLaw):
    """Facility placement, median distance: p V^(1/N) with S = 1/V."""

    gamma: float = field(init=False, default=1.0)
    N: int = 2

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        object.__setattr__(self, "gamma", 1.0 / self.N)

    @property
    def exponent(self) -> float:
        return self.N / (self.N + 1.0)


@dataclass(frozen=True)
class VolumeMean(PowerLaw):
    """Facility placement, mean squared distance: p V^(2/N) with S = 1/V."""

    gamma: float = field(init=False, default=1.0)
    N: int = 2

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        object.__setattr__(self, "gamma", 2.0 / self.N)

    @property
    def exponent(self) -> float:
        return self.N / (self.N + 2.0)


@dataclass(frozen=True, eq=False)
class Quadratic:
    """Test-harness loss (S - target)^2; target is a scalar or per-cell array."""

    target: object

    has_pole = False
    exponent = None

    def value(self, S):
        return (S - np.asarray(self.target)) ** 2

    def deriv(self, S):
        return 2.0 * (S - np.asarray(self.target))

    def deriv2(self, S):
        return np.full_like(np.asarray(S, dtype=float), 2.0)


@dataclass(frozen=True)
class TotalResource:
    K: float
    linear = True

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("constraint target K must be > 0")

    def f(self, S):
        return np.asarray(S, dtype=float)

    def fprime(self, S):
        return np.ones_like(np.asarray(S, dtype=float))

    def fprime2(self, S):
        return np.zeros_like(np.asarray(S, dtype=float))


@dataclass(frozen=True)
class InverseVolume(TotalResource):
    """Integral of V^-1; with S = 1/V this is the facility count, linear in S."""


@dataclass(frozen=True)
class AbsNorm(TotalResource):
    linear = False

    def f(self, S):
        return np.abs(S)

    def fprime(self, S):
        return np.sign(S)


@dataclass(frozen=True)
class SquareNorm(TotalResource):
    linear = False

    def f(self, S):
        return np.asarray(S, dtype=float) ** 2

    def fprime(self, S):
        return 2.0 * np.asarray(S, dtype=float)

    def fprime2(self, S):
        return np.full_like(np.asarray(S, dtype=float), 2.0)


@dataclass(frozen=True, eq=False)
class VariationalProblem:
    density: DensityField
    loss: object
    constraints: tuple
    sense: str = "minimize-cost"

    def __post_init__(self):
        cons = tuple(self.constraints)
        if not cons:
            raise ValueError("problem needs at least one constraint")
        if self.sense not in ("minimize-cost", "maximize-benefit"):
            raise ValueError(f"unknown sense {self.sense!r}")
        object.__setattr__(self, "constraints", cons)

    @property
    def sign(self) -> float:
        """+1 when the loss is a cost, -1 when it is a benefit to maximize."""
        return 1.0 if self.sense == "minimize-cost" else -1.0

    def check_field(self, S: GridField):
        if not self.density.domain.same_as(S.domain) or S.resolution != self.density.resolution:
            raise ValueError("field lattice differs from density lattice")

    def objective(self, S):
        return self.sign * self.loss.value(S)

    def objective_deriv(self, S):
        return self.sign * self.loss.deriv(S)

    def gradient(self, S, multipliers) -> np.ndarray:
        """Discrete functional gradient p dL/dS + sum_i lambda_i df_i/dS, per cell."""
        g = self.density.values * self.objective_deriv(S)
        for lam, con in zip(multipliers, self.constraints):
            g = g + lam * con.fprime(S)
        return g

    def constraint_gaps(self, S) -> np.ndarray:
        w = self.density.cell_volumes()
        return np.array([np.dot(con.f(S), w) - con.K for con in self.constraints])

    def action(self, S, multipliers) -> float:
        w = self.density.cell_volumes()
        base = float(np.dot(self.density.values * self.objective(S), w))
        return base + float(np.dot(multipliers, self.constraint_gaps(S)))


# ---------------------------------------------------------------------------
# CSV format
# ---------------------------------------------------------------------------


def write_field(path, field: GridField) -> None:
    lines = []
    for b, sl in enumerate(field.box_slices()):
        lo, hi = field.domain.boxes[b]
        res = ",".join(str(n) for n in field.resolution[b])
        bounds = ",".join(f"{l!r}:{u!r}" for l, u in zip(lo.tolist(), hi.tolist()))
        lines.append(f"# box={b} res={res} bounds={bounds}")
        lines.extend("%.17g" % v for v in field.values[sl])
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> GridField:
    boxes, res, chunks = [], [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            try:
                parts = dict(tok.split("=", 1) for tok in line[1:].split())
                r = tuple(int(x) for x in parts["res"].split(","))
                lo, hi = zip(*(tuple(float(v) for v in b.split(":")) for b in parts["bounds"].split(",")))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad box header: {exc}") from None
            boxes.append((np.array(lo), np.array(hi)))
            res.append(r)
            chunks.append([])
            continue
        if not chunks:
            raise ValueError(f"{path}:{lineno}: value before any box header")
        try:
            chunks[-1].append(float(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    if not boxes:
        raise ValueError(f"{path}: no box header found")
    for b, (r, c) in enumerate(zip(res, chunks)):
        if len(c) != int(np.prod(r)):
            raise ValueError(f"{path}: box {b} has {len(c)} values, header says {int(np.prod(r))}")
    return GridField(BoxDomain(tuple(boxes)), tuple(res), np.concatenate([np.array(c) for c in chunks]))


def read_density(path) -> DensityField:
    return normalize_density(read_field(path))


def lattice(domain: BoxDomain, resolution: Sequence) -> GridField:
    """Zero field on ``domain``; a single per-axis resolution is reused for every box."""
    resolution = list(resolution)
    if resolution and np.isscalar(resolution[0]):
        resolution = [tuple(resolution)] * len(domain.boxes)
    return GridField(domain, tuple(resolution), np.zeros(_count(domain, resolution)))
