"""numba-compiled versions of the hot kernels; same signatures as ``_numpy``."""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _label4(open_mask):
    nr, nc = open_mask.shape
    labels = np.zeros((nr, nc), dtype=np.int64)
    stack = np.empty(nr * nc, dtype=np.int64)
    n = 0
    for r0 in range(nr):
        for c0 in range(nc):
            if not open_mask[r0, c0] or labels[r0, c0] != 0:
                continue
            n += 1
            labels[r0, c0] = n
            stack[0] = r0 * nc + c0
            top = 1
            while top > 0:
                top -= 1
                cell = stack[top]
                r = cell // nc
                c = cell % nc
                for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    rr = r + dr
                    cc = c + dc
                    if 0 <= rr < nr and 0 <= cc < nc and open_mask[rr, cc] and labels[rr, cc] == 0:
                        labels[rr, cc] = n
                        stack[top] = rr * nc + cc
                        top += 1
    return labels, n


@njit(cache=True)
def _component_totals(labels, n, pmass):
    mass = np.zeros(n + 1)
    size = np.zeros(n + 1)
    nr, nc = labels.shape
    for r in range(nr):
        for c in range(nc):
            lab = labels[r, c]
            if lab > 0:
                mass[lab] += pmass[r, c]
                size[lab] += 1.0
    return mass, size


@njit(cache=True)
def component_cost(breaks, pmass):
    labels, n = _label4(breaks == 0)
    mass, size = _component_totals(labels, n, pmass)
    total = 0.0
    for k in range(1, n + 1):
        total += mass[k] * size[k]
    return total


@njit(cache=True)
def hot_candidate_costs(breaks, pmass):
    nr, nc = breaks.shape
    labels, n = _label4(breaks == 0)
    mass, size = _component_totals(labels, n, pmass)
    base = 0.0
    for k in range(1, n + 1):
        base += mass[k] * size[k]
    out = np.full((nr, nc), np.inf)
    stamp = np.zeros((nr, nc), dtype=np.int64)
    stack = np.empty(nr * nc, dtype=np.int64)
    tick = 0
    for r0 in range(nr):
        for c0 in range(nc):
            lab = labels[r0, c0]
            if lab == 0:
                continue
            tick += 1
            stamp[r0, c0] = tick  # the candidate itself is removed
            extra = 0.0
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rs = r0 + dr
                cs = c0 + dc
                if not (0 <= rs < nr and 0 <= cs < nc):
                    continue
                if labels[rs, cs] != lab or stamp[rs, cs] == tick:
                    continue
                stamp[rs, cs] = tick
                stack[0] = rs * nc + cs
                top = 1
                m = 0.0
                s = 0.0
                while top > 0:
                    top -= 1
                    cell = stack[top]
                    r = cell // nc
                    c = cell % nc
                    m += pmass[r, c]
                    s += 1.0
                    for er, ec in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                        rr = r + er
                        cc = c + ec
                        if 0 <= rr < nr and 0 <= cc < nc and labels[rr, cc] == lab and stamp[rr, cc] != tick:
                            stamp[rr, cc] = tick
                            stack[top] = rr * nc + cc
                            top += 1
                extra += m * s
            out[r0, c0] = base - mass[lab] * size[lab] + extra
    return out


@njit(parallel=True, cache=True)
def kde_sum(xe, te, xs, ts, h):
    out = np.empty(xe.size)
    norm = 1.0 / (2.0 * np.pi * h * xs.size)
    inv = 1.0 / (2.0 * h)
    for i in prange(xe.size):
        acc = 0.0
        for k in range(xs.size):
            dx = xe[i] - xs[k]
            dt = te[i] - ts[k]
            acc += np.exp(-(dx * dx + dt * dt) * inv)
        out[i] = acc * norm
    return out


@njit(parallel=True, cache=True)
def nearest_assign(points, centers):
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n)
    for i in prange(n):
        best = np.inf
        arg = 0
        for k in range(centers.shape[0]):
            d2 = 0.0
            for j in range(points.shape[1]):
                diff = points[i, j] - centers[k, j]
                d2 += diff * diff
            if d2 < best:
                best = d2
                arg = k
        labels[i] = arg
        dists[i] = np.sqrt(best)
    return labels, dists
