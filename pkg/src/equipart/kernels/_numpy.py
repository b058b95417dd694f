"""Pure-numpy (plus scipy.ndimage) versions of the hot kernels."""

import numpy as np
from scipy import ndimage

_FOUR = ndimage.generate_binary_structure(2, 1)


def component_cost(breaks, pmass):
    """Sum over 4-connected non-break components of (probability mass) * (cell count)."""
    labels, n = ndimage.label(breaks == 0, structure=_FOUR)
    if n == 0:
        return 0.0
    mass = np.bincount(labels.ravel(), weights=pmass.ravel(), minlength=n + 1)[1:]
    size = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return float(np.dot(mass, size))


def hot_candidate_costs(breaks, pmass):
    """Cost after turning each open cell into a break (inf for existing breaks).

    Only the component containing the candidate changes, so each candidate
    relabels the bounding box of its own component.
    """
    labels, n = ndimage.label(breaks == 0, structure=_FOUR)
    out = np.full(breaks.shape, np.inf)
    if n == 0:
        return out
    mass = np.bincount(labels.ravel(), weights=pmass.ravel(), minlength=n + 1)
    size = np.bincount(labels.ravel(), minlength=n + 1)
    base = float(np.dot(mass[1:], size[1:]))
    boxes = ndimage.find_objects(labels)
    for lab in range(1, n + 1):
        sl = boxes[lab - 1]
        comp = labels[sl] == lab
        pm = pmass[sl]
        rest = base - mass[lab] * size[lab]
        for r, c in zip(*np.nonzero(comp)):
            sub = comp.copy()
            sub[r, c] = False
            sl2, k = ndimage.label(sub, structure=_FOUR)
            if k:
                m = np.bincount(sl2.ravel(), weights=pm.ravel(), minlength=k + 1)[1:]
                s = np.bincount(sl2.ravel(), minlength=k + 1)[1:]
                extra = float(np.dot(m, s))
            else:
                extra = 0.0
            out[sl[0].start + r, sl[1].start + c] = rest + extra
    return out


def kde_sum(xe, te, xs, ts, h, chunk=2048):
    """Mean over samples of the isotropic 2-D Gaussian kernel with variance h."""
    out = np.empty(xe.size)
    norm = 1.0 / (2.0 * np.pi * h * xs.size)
    for start in range(0, xe.size, chunk):
        stop = min(start + chunk, xe.size)
        dx = xe[start:stop, None] - xs[None, :]
        dt = te[start:stop, None] - ts[None, :]
        out[start:stop] = np.exp(-(dx * dx + dt * dt) / (2.0 * h)).sum(axis=1) * norm
    return out


def nearest_assign(points, centers, chunk=4096):
    """Index of the nearest center (lowest index on ties) and the distance to it."""
    labels = np.empty(len(points), dtype=np.int64)
    dists = np.empty(len(points))
    for start in range(0, len(points), chunk):
        d2 = ((points[start:start + chunk, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        k = np.argmin(d2, axis=1)
        labels[start:start + chunk] = k
        dists[start:start + chunk] = np.sqrt(d2[np.arange(len(k)), k])
    return labels, dists
