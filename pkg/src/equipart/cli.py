"""Command-line front end: one subcommand per experiment, seeded, with a replayable run manifest."""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .domain import (
    AbsNorm,
    BoxDomain,
    ConvergenceError,
    DensityField,
    GridField,
    InverseVolume,
    PowerLaw,
    Quadratic,
    SquareNorm,
    TotalResource,
    VariationalProblem,
    VolumeMean,
    VolumeMedian,
    normalize_density,
    read_density,
    read_field,
    sample_density,
    write_field,
)

SUBCOMMANDS = ("static", "hot-lattice", "kmedians", "diffuse", "invert", "dynamics", "misspec",
               "infer-categorical", "infer-kde", "network", "anneal")

# flags that locate files or tune execution but do not change numeric results
_NOT_CONFIG = {"out_dir", "config", "threads", "command"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# small parsers for flag values
# ---------------------------------------------------------------------------


def floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def ints(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def parse_loss(spec: str):
    name, _, arg = spec.partition(":")
    try:
        if name == "powerlaw":
            return PowerLaw(float(arg or 1.0))
        if name == "median":
            return VolumeMedian(N=int(arg or 2))
        if name == "mean":
            return VolumeMean(N=int(arg or 2))
        if name == "quadratic":
            return Quadratic(float(arg or 1.0))
    except ValueError as exc:
        raise ValueError(f"bad loss {spec!r}: {exc}") from None
    raise ValueError(f"unknown loss {spec!r} (powerlaw:G | median:N | mean:N | quadratic:T)")


_CONSTRAINTS = {"total": TotalResource, "inverse-volume": InverseVolume, "abs": AbsNorm, "square": SquareNorm}


def parse_constraint(name: str, K: float):
    if name not in _CONSTRAINTS:
        raise ValueError(f"unknown constraint {name!r} ({' | '.join(_CONSTRAINTS)})")
    return _CONSTRAINTS[name](K)


def read_points(path) -> np.ndarray:
    try:
        pts = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return pts


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


class Run:
    """Collects outputs and input digests for the manifest."""

    def __init__(self, out_dir: Path, fmt: str):
        self.out_dir = out_dir
        self.fmt = fmt
        self.outputs: list[str] = []
        self.inputs: dict[str, str] = {}
        out_dir.mkdir(parents=True, exist_ok=True)

    def input(self, path) -> str:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"input file not found: {path}")
        self.inputs[str(path)] = hashlib.sha256(p.read_bytes()).hexdigest()
        return str(path)

    def _track(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name

    def field(self, name: str, f: GridField) -> None:
        write_field(self._track(name), f)

    def table(self, stem: str, columns: dict) -> None:
        cols = {k: np.asarray(v) for k, v in columns.items()}
        if self.fmt == "json":
            rows = [{k: _scalar(cols[k][i]) for k in cols} for i in range(len(next(iter(cols.values()))))]
            self._track(stem + ".json").write_text(json.dumps(rows, indent=1) + "\n")
            return
        lines = [",".join(cols)]
        for row in zip(*cols.values()):
            lines.append(",".join(_fmt(v) for v in row))
        self._track(stem + ".csv").write_text("\n".join(lines) + "\n")

    def json(self, name: str, obj) -> None:
        self._track(name).write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int, np.bool_, bool)):
        return str(int(v))
    return "%.17g" % float(v)


def _scalar(v):
    if isinstance(v, (np.integer, np.bool_)):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return _scalar(obj)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_static(a, run: Run):
    from .static import analytic_power_optimum, solve_static

    p = read_density(run.input(a.density))
    problem = VariationalProblem(p, parse_loss(a.loss), (parse_constraint(a.constraint, a.budget),))
    method = a.method
    if method == "auto":
        method = "analytic" if getattr(problem.loss, "exponent", None) is not None and a.constraint in (
            "total", "inverse-volume") else "numeric"
    if method == "analytic":
        sol = analytic_power_optimum(problem)
    else:
        init = p.with_values(np.full(p.n_cells, a.budget / p.domain.volume))
        sol = solve_static(problem, init, tol=a.tol)
    run.field("solution.csv", sol.S)
    run.json("summary.json", dict(sol.summary(), method=method))


def cmd_hot_lattice(a, run: Run):
    from .static import hot_lattice_evolve, quarter_gaussian

    if a.density:
        p = read_density(run.input(a.density))
    else:
        p = quarter_gaussian(a.n, a.extent, a.scale)
    lat = hot_lattice_evolve(p, a.budget)
    run.field("breaks.csv", p.with_values(lat.breaks.ravel().astype(float)))
    run.table("costs", {"step": np.arange(len(lat.costs)), "cost": lat.costs,
                        "cell": [-1] + list(lat.order)})
    run.json("summary.json", {"cost": lat.cost, "budget": lat.budget, "backend": kernels.backend()})


def cmd_kmedians(a, run: Run):
    from .static import facility_density_fit, kmedians_em

    p = read_density(run.input(a.density)) if a.density else None
    if a.points:
        pts = read_points(run.input(a.points))
    elif p is not None:
        pts = sample_density(p, a.samples, a.seed)
    else:
        raise ValueError("kmedians needs --points or --density")
    res = kmedians_em(pts, a.k, a.seed, iters=a.iters, restarts=a.restarts)
    cols = {f"x{j}": res.facilities[:, j] for j in range(res.facilities.shape[1])}
    run.table("facilities", cols)
    run.table("objective", {"iter": np.arange(len(res.objective)), "objective": res.objective})
    summary = {"objective": res.objective[-1], "iterations": len(res.objective) - 1}
    if p is not None:
        try:
            summary["exponent"] = facility_density_fit(res.facilities, p)
        except ValueError as exc:  # too few facilities for a slope
            summary["exponent"] = None
            summary["exponent_note"] = str(exc)
    run.json("summary.json", summary)


def cmd_diffuse(a, run: Run):
    from .diffusion import cosine_expand, heat_evolve, transform_points

    p = read_density(run.input(a.density))
    exp = cosine_expand(p, a.modes)
    times = floats(a.times)
    for i, t in enumerate(times):
        run.field(f"field_{i:03d}.csv", heat_evolve(exp, t))
    run.table("snapshots", {"index": np.arange(len(times)), "t": times})
    if a.points or a.samples:
        pts = read_points(run.input(a.points)) if a.points else sample_density(p, a.samples, a.seed)
        out = transform_points(p, pts, a.t_final, a.steps, a.modes)
        cols = {f"x{j}": pts[:, j] for j in range(pts.shape[1])}
        cols.update({f"y{j}": out[:, j] for j in range(out.shape[1])})
        run.table("points", cols)


def cmd_invert(a, run: Run):
    from .diffusion import inverse_select

    Y = read_field(run.input(a.observed))
    cands = [read_density(run.input(c)) for c in a.candidates]
    exps = floats(a.exponents)
    res = inverse_select(Y, cands, exps, t=a.t, steps=a.steps)
    ranking = sorted(({"density": i, "exponent": exps[j], "model": j, "norm": float(res.norms[i, j]),
                       "scale": float(res.scales[i, j])}
                      for i in range(len(cands)) for j in range(len(exps))),
                     key=lambda r: (r["norm"], r["density"], r["model"]))
    run.json("ranking.json", {"best": list(res.best), "candidates": [str(c) for c in a.candidates],
                              "ranking": ranking})


def cmd_dynamics(a, run: Run):
    from .dynamics import (PhaseState, TransportSpec, Velocity, equilibrium_multipliers, hamiltonian,
                           material_derivative, overdamped_step, signed_power)

    p = read_density(run.input(a.density))
    problem = VariationalProblem(p, parse_loss(a.loss), (parse_constraint(a.constraint, a.budget),))
    lam = equilibrium_multipliers(problem)
    if a.init:
        S0 = read_field(run.input(a.init))
        problem.check_field(S0)
    else:
        S0 = p.with_values(np.full(p.n_cells, a.init_scale * a.budget / p.domain.volume))
    velocity = Velocity("constant", np.array(floats(a.velocity))) if a.velocity else Velocity()
    friction = p.with_values(np.full(p.n_cells, a.friction)) if a.friction is not None else None
    tr = TransportSpec(a.alpha if a.mode != "overdamped" else 2.0, velocity, friction)
    state = PhaseState(S0, p.with_values(np.zeros(p.n_cells)), 0.0)
    series = {"step": [], "t": [], "energy": [], "legendre_residual": [], "action": []}

    def record(n, st, resid):
        S = np.asarray(st.S.values)
        series["step"].append(n)
        series["t"].append(st.t)
        series["energy"].append(hamiltonian(st, problem, tr, lam) if a.mode != "overdamped" else np.nan)
        series["legendre_residual"].append(resid)
        series["action"].append(problem.action(S, lam))

    record(0, state, 0.0)
    run.field("S_000000.csv", state.S)
    from .dynamics import damped_step, hamilton_step

    for n in range(1, a.steps + 1):
        if a.mode == "overdamped":
            S = overdamped_step(state.S, problem, friction if friction is not None else
                                p.with_values(np.ones(p.n_cells)), a.dt, lam)
            new = PhaseState(S, state.Pi, state.t + a.dt)
            resid = np.nan
        else:
            step = damped_step if a.mode == "damped" else hamilton_step
            new = step(state, problem, tr, a.dt, lam)
            rate = material_derivative(new.S, state.S, a.dt, velocity, new.t)
            resid = float(np.max(np.abs(np.asarray(new.Pi.values) - signed_power(rate.values, tr.alpha - 1))))
        state = new
        if n % a.snapshot_every == 0 or n == a.steps:
            record(n, state, resid)
            run.field(f"S_{n:06d}.csv", state.S)
    run.table("series", series)


def cmd_misspec(a, run: Run):
    from .misspec import default_compact_domain, gaussian_rho_curve, misspec_report

    if a.p or a.q:
        if not (a.p and a.q):
            raise ValueError("--p and --q go together")
        p = read_density(run.input(a.p))
        q = read_density(run.input(a.q))
        rep = misspec_report(p, q, parse_loss(a.loss), a.budget,
                             method="mc" if a.mc else "quadrature", n=a.mc or 0, seed=a.seed)
        run.json("report.json", rep.as_dict())
        return
    domain = None if a.domain == "unbounded" else default_compact_domain()
    rows = gaussian_rho_curve(a.sigma_p, floats(a.ratio), domain, a.mc, a.seed)
    run.table("rho", {"ratio": [r.ratio for r in rows], "rho": [r.rho for r in rows],
                      "rho_mc": [r.rho_mc for r in rows], "stderr": [r.mc_stderr for r in rows],
                      "divergent": [int(r.divergent) for r in rows]})


def cmd_infer_categorical(a, run: Run):
    from .domain import derive_rng
    from .inference import categorical_optimum, run_categorical

    if a.observations_file:
        obs = np.loadtxt(run.input(a.observations_file), dtype=np.int64, comments="#", ndmin=1)
        M = a.categories or int(obs.max()) + 1
    else:
        truth = np.asarray(floats(a.truth))
        if np.any(truth < 0) or abs(truth.sum() - 1) > 1e-12:
            raise ValueError("--truth must be a probability vector")
        M = len(truth)
        obs = derive_rng(a.seed, "categorical_obs").choice(M, size=a.observations, p=truth)
    S0 = np.asarray(floats(a.init)) if a.init else np.full(M, a.budget / M)
    res = run_categorical(obs, M, a.budget, S0, a.dt, a.steps_per_obs)
    cols = {"t": res.times}
    cols.update({f"p{i}": res.predictive[:, i] for i in range(M)})
    cols.update({f"S{i}": res.allocation[:, i] for i in range(M)})
    run.table("series", cols)
    run.json("summary.json", {"predictive": res.predictive[-1], "allocation": res.allocation[-1],
                              "static_optimum": categorical_optimum(res.predictive[-1], a.budget)})


def cmd_infer_kde(a, run: Run):
    from .inference import WienerSpec, bandwidth_schedule, kde_l1_error, wiener_sample_paths

    spec = WienerSpec(a.mu, a.sigma, a.x0)
    xg = np.linspace(a.x_min, a.x_max, a.x_points)
    tg = np.linspace(a.t_min, a.t_max, a.t_points)
    Ns, hs, errs = ints(a.paths), [], []
    rec = None
    for N in Ns:
        rec = wiener_sample_paths(spec, N, a.dt, a.horizon, a.seed)
        h = bandwidth_schedule(N, a.bandwidth_scale)
        hs.append(h)
        errs.append(kde_l1_error(spec, rec, h, xg, tg, a.horizon))
    run.table("errors", {"paths": Ns, "h": hs, "l1": errs})
    if a.save_paths and rec is not None:
        run.table("paths", {"path_id": rec[:, 0].astype(np.int64), "t": rec[:, 1], "x": rec[:, 2]})


def _graph(a, run: Run):
    from .network import load_edge_list, synthetic_graph

    if a.edges:
        return load_edge_list(run.input(a.edges))
    if a.synthetic:
        n, m = ints(a.synthetic)
        return synthetic_graph(n, m, a.seed)
    raise ValueError("need --edges or --synthetic n,m")


def _node_density(a, g, run: Run):
    from .domain import derive_rng

    if a.p:
        p = np.asarray(floats(a.p))
    elif a.p_file:
        p = np.loadtxt(run.input(a.p_file), comments="#", ndmin=1)
    elif a.p_mode == "random":
        p = derive_rng(a.seed, "node_density").uniform(0.5, 1.5, g.n)
    else:
        p = np.ones(g.n)
    if p.shape != (g.n,):
        raise ValueError(f"node density has {p.size} entries for {g.n} nodes")
    return p / p.sum()


def cmd_network(a, run: Run):
    from .anneal import AnnealConfig, anneal
    from .network import (degree_approx, degree_fit, hot_node_fixed_point, incident_sums, neighborhood_action,
                          neighborhood_optimum, neighborhood_space, node_hot_cost, scaling_residual,
                          subgraph_loss)

    g = _graph(a, run)
    p = _node_density(a, g, run)
    u, v = g.edges[:, 0] + 1, g.edges[:, 1] + 1
    if a.mode in ("analytic", "degree", "subgraph"):
        opt = neighborhood_optimum(g, p, a.budget)
        run.table("alloc", {"u": u, "v": v, "S": opt.S})
        summary = {"action": neighborhood_action(g, p, opt), "nodes": g.n, "edges": g.m}
        if a.mode == "degree":
            fit = degree_fit(g, p, a.budget)
            run.table("degree", {"node": np.arange(1, g.n + 1), "degree_share": degree_approx(g, a.budget),
                                 "incident_sum": incident_sums(g, opt)})
            summary.update(slope=fit.slope, intercept=fit.intercept, r2=fit.r2)
        if a.mode == "subgraph":
            losses = [subgraph_loss(g, opt, i) for i in range(g.n)]
            run.table("subgraph_loss", {"node": np.arange(1, g.n + 1), "loss": losses})
        run.json("summary.json", summary)
    elif a.mode == "anneal":
        cfg = AnnealConfig(ratio=a.ratio, beta_max=a.beta_max, max_iters=a.max_iters, tau=a.tau, seed=a.seed)
        space = neighborhood_space(g, p, a.budget)
        xb, hist = anneal(space, cfg, np.full(g.m, 10.0))
        S = a.budget * xb / xb.sum()
        run.table("alloc", {"u": u, "v": v, "S": S})
        run.table("history", hist.columns())
        run.json("summary.json", {"action": neighborhood_action(g, p, S),
                                  "analytic_action": neighborhood_action(g, p, neighborhood_optimum(g, p, a.budget))})
    elif a.mode == "hot-node":
        from .domain import derive_rng

        pe = derive_rng(a.seed, "edge_density").uniform(0.5, 1.5, g.m) if a.p_mode == "random" else np.ones(g.m)
        pe = pe / pe.sum()
        S = hot_node_fixed_point(g, pe, a.gamma, a.budget, a.damping, a.tol)
        run.table("nodes", {"node": np.arange(1, g.n + 1), "S": S})
        run.json("summary.json", {"cost": node_hot_cost(g, pe, a.gamma, S),
                                  "max_residual": float(scaling_residual(g, pe, a.gamma, S, a.budget).max())})
    else:
        raise ValueError(f"unknown network mode {a.mode!r}")


def cmd_anneal(a, run: Run):
    from .anneal import AnnealConfig, anneal, binary_space, quadratic_space

    cfg = AnnealConfig(beta0=a.beta0, schedule=a.schedule, ratio=a.ratio, increment=a.increment,
                       beta_max=a.beta_max, eps=a.eps, tau=a.tau, max_iters=a.max_iters, n_max=a.n_max,
                       seed=a.seed)
    if a.problem == "quadratic-test":
        target = np.asarray(floats(a.target))
        xb, hist = anneal(quadratic_space(target, a.n_max), cfg, np.zeros_like(target))
        best = {"x_best": xb, "distance": float(np.linalg.norm(xb - target))}
    elif a.problem == "binary-test":
        xb, hist = anneal(binary_space(a.n_max), cfg, np.ones((a.size, a.size), dtype=np.int64))
        best = {"ones": int(xb.sum())}
    elif a.problem == "network-neighborhood":
        from .network import neighborhood_action, neighborhood_optimum, neighborhood_space

        g = _graph(a, run)
        p = _node_density(a, g, run)
        xb, hist = anneal(neighborhood_space(g, p, a.budget, a.n_max), cfg, np.full(g.m, 10.0))
        best = {"action": neighborhood_action(g, p, a.budget * xb / xb.sum()),
                "analytic_action": neighborhood_action(g, p, neighborhood_optimum(g, p, a.budget))}
    else:
        raise ValueError(f"unknown problem {a.problem!r}")
    run.table("history", hist.columns())
    run.json("summary.json", dict(best, E_best=float(hist.best[-1]), iterations=len(hist),
                                  stop_reason=hist.stop_reason))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_graph_flags(s):
    s.add_argument("--edges", help="edge list, 1-based 'u v' lines")
    s.add_argument("--synthetic", help="n,m preferential-attachment graph")
    s.add_argument("--p", help="node probabilities, comma-separated")
    s.add_argument("--p-file", help="node probabilities, one per line")
    s.add_argument("--p-mode", choices=("uniform", "random"), default="uniform")
    s.add_argument("--budget", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="equipart", description="Optimal resource allocation experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="out")
    ap.add_argument("--config", help="JSON config or a previous run's manifest.json")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    ap.add_argument("--threads", type=int, default=0)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("static", help="static optimum of a density")
    s.add_argument("--density", required=True)
    s.add_argument("--loss", default="powerlaw:1")
    s.add_argument("--constraint", default="total")
    s.add_argument("--budget", type=float, required=True)
    s.add_argument("--method", choices=("auto", "analytic", "numeric"), default="auto")
    s.add_argument("--tol", type=float, default=1e-9)

    s = sub.add_parser("hot-lattice", help="greedy fire-break lattice")
    s.add_argument("--density")
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--extent", type=float, default=2.0)
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--budget", type=int, required=True)

    s = sub.add_parser("kmedians", help="k-medians facility placement")
    s.add_argument("--points")
    s.add_argument("--density")
    s.add_argument("--samples", type=int, default=5000)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--restarts", type=int, default=1)

    s = sub.add_parser("diffuse", help="heat-flow snapshots and point transform")
    s.add_argument("--density", required=True)
    s.add_argument("--times", default="0,0.01,0.1,0.5")
    s.add_argument("--modes", type=int)
    s.add_argument("--points")
    s.add_argument("--samples", type=int, default=0)
    s.add_argument("--t-final", type=float, default=0.5)
    s.add_argument("--steps", type=int, default=200)

    s = sub.add_parser("invert", help="rank candidate densities for an observed resource")
    s.add_argument("--observed", required=True)
    s.add_argument("--candidates", nargs="+", required=True)
    s.add_argument("--exponents", default="0.5,0.6666666666666666,0.75")
    s.add_argument("--t", type=float)
    s.add_argument("--steps", type=int, default=100)

    s = sub.add_parser("dynamics", help="time-dependent allocation")
    s.add_argument("--density", required=True)
    s.add_argument("--loss", default="powerlaw:1")
    s.add_argument("--constraint", default="total")
    s.add_argument("--budget", type=float, required=True)
    s.add_argument("--mode", choices=("hamilton", "damped", "overdamped"), default="hamilton")
    s.add_argument("--alpha", type=float, default=2.0)
    s.add_argument("--friction", type=float)
    s.add_argument("--velocity", help="constant coordinate velocity, comma-separated")
    s.add_argument("--init")
    s.add_argument("--init-scale", type=float, default=1.5)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--snapshot-every", type=int, default=100)

    s = sub.add_parser("misspec", help="cost share of a misspecified density")
    s.add_argument("--sigma-p", type=float, default=0.5)
    s.add_argument("--ratio", default="1.0,1.1,1.2,1.3,1.4,1.5,2.0")
    s.add_argument("--domain", choices=("unbounded", "compact"), default="unbounded")
    s.add_argument("--mc", type=int, default=0)
    s.add_argument("--p")
    s.add_argument("--q")
    s.add_argument("--loss", default="powerlaw:1")
    s.add_argument("--budget", type=float, default=1.0)

    s = sub.add_parser("infer-categorical", help="streaming Dirichlet-categorical allocation")
    s.add_argument("--truth", default="0.5,0.3,0.2")
    s.add_argument("--observations", type=int, default=10000)
    s.add_argument("--observations-file")
    s.add_argument("--categories", type=int)
    s.add_argument("--budget", type=float, default=1.0)
    s.add_argument("--init")
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--steps-per-obs", type=int, default=1)

    s = sub.add_parser("infer-kde", help="spacetime KDE against the Wiener density")
    s.add_argument("--mu", type=float, default=0.5)
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--x0", type=float, default=0.0)
    s.add_argument("--paths", default="100,1000,10000")
    s.add_argument("--dt", type=float, default=0.05)
    s.add_argument("--horizon", type=float, default=2.0)
    s.add_argument("--bandwidth-scale", type=float, default=0.5)
    s.add_argument("--x-min", type=float, default=-3.0)
    s.add_argument("--x-max", type=float, default=4.0)
    s.add_argument("--x-points", type=int, default=71)
    s.add_argument("--t-min", type=float, default=0.5)
    s.add_argument("--t-max", type=float, default=1.5)
    s.add_argument("--t-points", type=int, default=11)
    s.add_argument("--save-paths", action="store_true")

    s = sub.add_parser("network", help="allocation on a graph")
    _add_graph_flags(s)
    s.add_argument("--mode", choices=("analytic", "degree", "subgraph", "anneal", "hot-node"), default="analytic")
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--damping", type=float, default=0.5)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--ratio", type=float, default=1.0005)
    s.add_argument("--beta-max", type=float, default=1e9)
    s.add_argument("--max-iters", type=int, default=200000)
    s.add_argument("--tau", type=int, default=200000)

    s = sub.add_parser("anneal", help="simulated annealing test problems")
    s.add_argument("--problem", choices=("quadratic-test", "binary-test", "network-neighborhood"),
                   default="quadratic-test")
    s.add_argument("--target", default="1,2,3,4")
    s.add_argument("--size", type=int, default=8)
    _add_graph_flags(s)
    s.add_argument("--beta0", type=float, default=0.1)
    s.add_argument("--schedule", choices=("geometric", "linear"), default="geometric")
    s.add_argument("--ratio", type=float, default=1.003)
    s.add_argument("--increment", type=float, default=1.0)
    s.add_argument("--beta-max", type=float, default=1e6)
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--tau", type=int, default=2000)
    s.add_argument("--max-iters", type=int, default=1_000_000)
    s.add_argument("--n-max", type=int, default=1)
    return ap


COMMANDS = {
    "static": cmd_static, "hot-lattice": cmd_hot_lattice, "kmedians": cmd_kmedians, "diffuse": cmd_diffuse,
    "invert": cmd_invert, "dynamics": cmd_dynamics, "misspec": cmd_misspec,
    "infer-categorical": cmd_infer_categorical, "infer-kde": cmd_infer_kde, "network": cmd_network,
    "anneal": cmd_anneal,
}


def _load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: top level must be an object")
    return cfg


_GLOBAL_VALUED = ("--seed", "--out-dir", "--config", "--format", "--threads")


def _subcommand_index(argv: list[str]) -> int:
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _GLOBAL_VALUED:
            i += 2
        elif tok.split("=", 1)[0] in _GLOBAL_VALUED:
            i += 1
        else:
            break
    return i


def _resolve(argv: list[str]):
    """Parse argv, layering a JSON config (or manifest) under explicit flags."""
    ap = build_parser()
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    cfg: dict = {}
    command = None
    if known.config:
        raw = _load_config(known.config)
        if "subcommand" in raw and "config" in raw:  # a manifest
            command = raw["subcommand"]
            cfg = dict(raw["config"])
        else:
            command = raw.pop("command", None)
            cfg = raw
    i = _subcommand_index(argv)
    if i < len(argv) and argv[i] in SUBCOMMANDS:
        command = argv[i]
    elif i < len(argv) and argv[i] in ("-h", "--help", "--version"):
        return ap.parse_args(argv)
    elif command is None:
        raise UsageError("equipart: a subcommand is required (" + " | ".join(SUBCOMMANDS) + ")")
    else:
        argv = argv[:i] + [command] + argv[i:]
    if command not in SUBCOMMANDS:
        raise UsageError(f"equipart: unknown subcommand {command!r}")
    # nested sections ({"static": {...}}) hold subcommand flags
    flat = dict(cfg.pop(command, {})) if isinstance(cfg.get(command), dict) else {}
    flat.update({k: v for k, v in cfg.items() if not isinstance(v, dict)})
    flat = {k.replace("-", "_"): v for k, v in flat.items()}
    sub = ap._subparsers._group_actions[0].choices[command]
    top_dests = {act.dest for act in ap._actions}
    unknown = set(flat) - top_dests - {act.dest for act in sub._actions}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for act in sub._actions:
        if act.dest in flat:
            act.required = False
    ap.set_defaults(**{k: v for k, v in flat.items() if k in top_dests})
    sub.set_defaults(**{k: v for k, v in flat.items() if k not in top_dests})
    return ap.parse_args(argv)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _resolve(argv)
        kernels.set_threads(args.threads)
        out_dir = Path(args.out_dir)
        fmt = args.format
        rec = Run(out_dir, fmt)
        t0 = time.perf_counter()
        COMMANDS[args.command](args, rec)
        wall = time.perf_counter() - t0
        config = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
        manifest = {
            "subcommand": args.command,
            "config": config,
            "seed": args.seed,
            "inputs": rec.inputs,
            "outputs": {name: hashlib.sha256((out_dir / name).read_bytes()).hexdigest() for name in rec.outputs},
            "wall_time_s": wall,
            "version": __version__,
            "backend": kernels.backend(),
        }
        (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=1, sort_keys=True) + "\n")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ArithmeticError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
