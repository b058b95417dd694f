"""Resource allocation on undirected graphs: neighborhood action, degree rule, HOT node fixed point, path losses.

Allocations hold one value per undirected edge and every normalization runs
over unordered edges.  Summing over ordered node pairs with a symmetric
adjacency instead counts each edge twice, so per-node incident sums here
total 2K rather than K.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .anneal import StateSpace, perturb_real, project_box
from .domain import ConvergenceError, derive_rng


@dataclass(frozen=True, eq=False)
class UGraph:
    """Simple undirected graph; ``edges`` rows are (u, v) with u < v, sorted and unique."""

    n: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ValueError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0)
        object.__setattr__(self, "edges", e)
        # CSR adjacency with ascending neighbor ids; nbr_edge maps to the edge row
        both = np.concatenate([e, e[:, ::-1]])
        eid = np.concatenate([np.arange(len(e)), np.arange(len(e))])
        order = np.lexsort((both[:, 1], both[:, 0]))
        object.__setattr__(self, "_nbr", both[order, 1])
        object.__setattr__(self, "_nbr_edge", eid[order])
        object.__setattr__(self, "_indptr", np.searchsorted(both[order, 0], np.arange(self.n + 1)))

    @classmethod
    def from_pairs(cls, pairs, n: int | None = None) -> "UGraph":
        e = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if n is None:
            n = int(e.max()) + 1 if e.size else 0
        return cls(n, e)

    @classmethod
    def from_networkx(cls, graph) -> "UGraph":
        nodes = sorted(graph.nodes())
        index = {v: i for i, v in enumerate(nodes)}
        return cls(len(nodes), np.array([(index[u], index[v]) for u, v in graph.edges()], dtype=np.int64))

    @property
    def m(self) -> int:
        return len(self.edges)

    def neighbors(self, i: int) -> np.ndarray:
        return self._nbr[self._indptr[i]:self._indptr[i + 1]]

    def incident_edges(self, i: int) -> np.ndarray:
        return self._nbr_edge[self._indptr[i]:self._indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self._indptr)

    def edge_id(self, u: int, v: int) -> int:
        a, b = (u, v) if u < v else (v, u)
        nb = self.neighbors(a)
        k = int(np.searchsorted(nb, b))
        if k >= len(nb) or nb[k] != b:
            raise KeyError(f"no edge ({u}, {v})")
        return int(self.incident_edges(a)[k])


@dataclass(frozen=True, eq=False)
class EdgeAlloc:
    graph: UGraph
    S: np.ndarray
    K: float


def check_node_density(g: UGraph, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (g.n,):
        raise ValueError("need one probability per node")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("node probabilities must be >= 0 and sum to 1")
    return p


def _edge_weight(g: UGraph, p: np.ndarray) -> np.ndarray:
    return p[g.edges[:, 0]] + p[g.edges[:, 1]]


def neighborhood_action(g: UGraph, p, alloc) -> float:
    """Sum over undirected edges of (p_u + p_v) / S_e."""
    S = np.asarray(getattr(alloc, "S", alloc), dtype=float)
    if S.shape != (g.m,):
        raise ValueError(f"allocation has {S.size} entries for {g.m} edges")
    w = _edge_weight(g, np.asarray(p, dtype=float))
    terms = np.divide(w, S, out=np.zeros_like(w), where=w > 0)
    return float(terms.sum())


def neighborhood_optimum(g: UGraph, p, K: float) -> EdgeAlloc:
    """S_e = K sqrt(p_u + p_v) / sum over edges of sqrt(p_k + p_l)."""
    if g.m == 0:
        raise ValueError("graph has no edges")
    if not K > 0:
        raise ValueError("K must be > 0")
    r = np.sqrt(_edge_weight(g, check_node_density(g, p)))
    return EdgeAlloc(g, K * r / r.sum(), float(K))


def incident_sums(g: UGraph, S) -> np.ndarray:
    """Per node, the total allocation on its incident edges."""
    S = np.asarray(getattr(S, "S", S), dtype=float)
    return np.bincount(g.edges[:, 0], S, g.n) + np.bincount(g.edges[:, 1], S, g.n)


def degree_approx(g: UGraph, K: float) -> np.ndarray:
    """K deg_i / sum deg: the degree-proportional share of the budget per node.

    Matches ``incident_sums`` of the optimum up to the factor 2 of the edge
    convention when p_u + p_v is nearly constant over edges.
    """
    d = g.degrees().astype(float)
    if d.sum() <= 0:
        raise ValueError("graph has no edges")
    return K * d / d.sum()


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float


def linear_fit(x, y) -> LinearFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    slope = float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    ss = float(((y - y.mean()) ** 2).sum())
    return LinearFit(slope, intercept, 1.0 - float((resid ** 2).sum()) / ss if ss > 0 else 1.0)


def degree_fit(g: UGraph, p, K: float) -> LinearFit:
    """Regress the optimum's incident sums on the degree approximation."""
    return linear_fit(degree_approx(g, K), incident_sums(g, neighborhood_optimum(g, p, K)))


def random_feasible(g: UGraph, K: float, count: int, seed: int) -> np.ndarray:
    """``count`` allocations S = K x / sum x with x ~ Exp(1) per edge."""
    rng = derive_rng(seed, "random_feasible")
    x = rng.exponential(size=(count, g.m))
    return K * x / x.sum(axis=1, keepdims=True)


def neighborhood_space(g: UGraph, p, K: float, n_max: int = 1, floor: float = 1.0) -> StateSpace:
    """Annealing state space: x >= floor per edge, allocation S = K x / sum x."""
    p = check_node_density(g, p)

    def energy(x):
        return neighborhood_action(g, p, K * x / x.sum())

    return StateSpace(energy, lambda x, rng: perturb_real(x, n_max, rng),
                      lambda x: project_box(x, floor, np.inf))


# ---------------------------------------------------------------------------
# HOT allocation on nodes
# ---------------------------------------------------------------------------


def _edge_pressure(g: UGraph, p_edge, S, gamma):
    """T_i = sum over incident edges (i, j) of p_ij S_j^-gamma_j."""
    u, v = g.edges[:, 0], g.edges[:, 1]
    return (np.bincount(u, p_edge * S[v] ** -gamma[v], g.n)
            + np.bincount(v, p_edge * S[u] ** -gamma[u], g.n))


def _scaling_update(T, gamma, K):
    """S_i = (gamma_i T_i / lam)^(1/(gamma_i+1)) with lam chosen so that sum S = K."""
    if np.all(gamma == gamma[0]):
        s = T ** (1.0 / (gamma[0] + 1.0))
        return K * s / s.sum()
    base = gamma * T

    def excess(log_lam):
        return float(((base * np.exp(-log_lam)) ** (1.0 / (gamma + 1.0))).sum() - K)

    lo, hi = -50.0, 50.0
    while excess(lo) < 0:
        lo -= 50.0
    while excess(hi) > 0:
        hi += 50.0
    lam = np.exp(brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15))
    return (base / lam) ** (1.0 / (gamma + 1.0))


def scaling_residual(g: UGraph, p_edge, gamma, S, K: float) -> np.ndarray:
    """Per-node relative gap |S_i - update_i| / S_i of the scaling relation."""
    S = np.asarray(S, dtype=float)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (g.n,))
    new = _scaling_update(_edge_pressure(g, np.asarray(p_edge, float), S, gamma), gamma, K)
    return np.abs(new - S) / S


def hot_node_fixed_point(g: UGraph, p_edge, gamma, K: float, damping: float = 0.5, tol: float = 1e-10,
                         max_sweeps: int = 100_000) -> np.ndarray:
    """Node allocation stationary for sum_e p_e S_u^-gamma_u S_v^-gamma_v under sum S = K.

    Stationarity gives S_i^(gamma_i+1) proportional to gamma_i sum_j p_ij S_j^-gamma_j;
    the damped iteration S <- (1-d) S + d update is renormalised to the
    budget each sweep and stops once every node satisfies the relation to
    relative precision ``tol``.
    """
    p_edge = np.asarray(p_edge, dtype=float)
    if p_edge.shape != (g.m,) or np.any(p_edge < 0):
        raise ValueError("need a nonnegative probability per edge")
    if abs(p_edge.sum() - 1.0) > 1e-12:
        raise ValueError("edge probabilities must sum to 1")
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (g.n,)).copy()
    if np.any(gamma <= 0):
        raise ValueError("gamma must be > 0")
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if np.any(g.degrees() == 0):
        raise ValueError("isolated nodes carry no edge events")
    S = np.full(g.n, K / g.n)
    residual = np.inf
    for _ in range(max_sweeps):
        update = _scaling_update(_edge_pressure(g, p_edge, S, gamma), gamma, K)
        residual = float(np.max(np.abs(update - S) / S))
        if residual <= tol:
            return S
        S = (1 - damping) * S + damping * update
        S *= K / S.sum()
    raise ConvergenceError("node fixed point did not converge", residual)


def node_hot_cost(g: UGraph, p_edge, gamma, S) -> float:
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (g.n,))
    u, v = g.edges[:, 0], g.edges[:, 1]
    return float((np.asarray(p_edge) * S[u] ** -gamma[u] * S[v] ** -gamma[v]).sum())


# ---------------------------------------------------------------------------
# shortest-path loss
# ---------------------------------------------------------------------------


def bfs_tree(g: UGraph, source: int):
    """Hop distances (-1 if unreachable) and predecessors, each the lowest-numbered
    neighbor one hop closer to ``source``."""
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    order = [source]
    while queue:
        u = queue.popleft()
        for w in g.neighbors(u):
            if dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(int(w))
                order.append(int(w))
    pred = np.full(g.n, -1, dtype=np.int64)
    for v in order[1:]:
        nb = g.neighbors(v)
        pred[v] = int(nb[dist[nb] == dist[v] - 1].min())
    return dist, pred, order


def path_counts(g: UGraph, source: int) -> np.ndarray:
    """Per edge, how many targets' chosen shortest paths from ``source`` traverse it."""
    dist, pred, order = bfs_tree(g, source)
    sub = np.ones(g.n, dtype=np.int64)
    counts = np.zeros(g.m, dtype=np.int64)
    for v in reversed(order[1:]):
        sub[pred[v]] += sub[v]
        counts[g.edge_id(int(pred[v]), v)] = sub[v]
    return counts


def subgraph_loss(g: UGraph, S, source: int) -> float:
    """sum over edges (k', k) of count(k', k) exp(-d(source, k')) / S_(k'k), k' the end nearer source."""
    S = np.asarray(getattr(S, "S", S), dtype=float)
    if S.shape != (g.m,) or np.any(S <= 0):
        raise ValueError("need a positive allocation on every edge")
    dist, pred, order = bfs_tree(g, source)
    counts = path_counts(g, source)
    total = 0.0
    for v in order[1:]:
        e = g.edge_id(int(pred[v]), v)
        total += counts[e] * np.exp(-float(dist[pred[v]])) / S[e]
    return float(total)


# ---------------------------------------------------------------------------
# I/O and synthetic graphs
# ---------------------------------------------------------------------------


def load_edge_list(path) -> UGraph:
    """Whitespace-separated ``u v [...]`` lines with 1-based ids; '%' and '#' lines are comments."""
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "%#":
            continue
        parts = line.split()
        try:
            if len(parts) < 2:
                raise ValueError
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: expected two integer node ids, got {raw!r}") from None
        if u < 1 or v < 1:
            raise ValueError(f"{path}:{lineno}: node ids are 1-based")
        if u == v:
            raise ValueError(f"{path}:{lineno}: self-loop {u} {v}")
        pairs.append((u - 1, v - 1))
    if not pairs:
        return UGraph(0, np.zeros((0, 2), dtype=np.int64))
    return UGraph.from_pairs(pairs)


def write_edge_list(path, g: UGraph) -> None:
    np.savetxt(path, g.edges + 1, fmt="%d")


def synthetic_graph(n: int, m: int, seed: int) -> UGraph:
    """Seeded preferential-attachment graph (connected, heavy-tailed degrees)."""
    import networkx as nx

    return UGraph.from_networkx(nx.barabasi_albert_graph(n, m, seed=seed))
