import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from equipart import kernels
from equipart.domain import derive_rng

needs_numba = pytest.mark.skipif(kernels.numba_impl is None, reason="numba not importable")
IMPLS = [kernels.numpy_impl] + ([kernels.numba_impl] if kernels.numba_impl is not None else [])


def _grid(seed, shape=(12, 10), density=0.35):
    rng = derive_rng(seed, "kernel_grid")
    breaks = (rng.random(shape) < density).astype(np.uint8)
    mass = rng.random(shape)
    return breaks, mass / mass.sum()


def _brute_cost(breaks, mass):
    # flood fill with an explicit stack, independent of both kernels
    seen = np.zeros(breaks.shape, bool)
    total = 0.0
    for start in zip(*np.nonzero(breaks == 0)):
        if seen[start]:
            continue
        stack, m, size = [start], 0.0, 0
        seen[start] = True
        while stack:
            r, c = stack.pop()
            m += mass[r, c]
            size += 1
            for rr, cc in ((r + 1, c), (r - 1, c), (r, c + 1), (r, c - 1)):
                if 0 <= rr < breaks.shape[0] and 0 <= cc < breaks.shape[1] and not seen[rr, cc] \
                        and breaks[rr, cc] == 0:
                    seen[rr, cc] = True
                    stack.append((rr, cc))
        total += m * size
    return total


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.__name__.rsplit("_", 1)[-1])
@pytest.mark.parametrize("seed", range(4))
def test_component_cost_brute_force(impl, seed):
    b, m = _grid(seed)
    assert impl.component_cost(b, m) == pytest.approx(_brute_cost(b, m), rel=1e-13)


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.__name__.rsplit("_", 1)[-1])
def test_candidate_costs_brute_force(impl):
    b, m = _grid(5, (7, 6))
    out = impl.hot_candidate_costs(b, m)
    for r in range(b.shape[0]):
        for c in range(b.shape[1]):
            if b[r, c]:
                assert out[r, c] == np.inf
            else:
                trial = b.copy()
                trial[r, c] = 1
                assert out[r, c] == pytest.approx(_brute_cost(trial, m), rel=1e-12)


@needs_numba
@settings(max_examples=25)
@given(st.integers(0, 2 ** 32), st.floats(0.0, 0.9))
def test_lattice_kernels_agree(seed, density):
    b, m = _grid(seed, (9, 11), density)
    n, j = kernels.numpy_impl, kernels.numba_impl
    assert n.component_cost(b, m) == pytest.approx(j.component_cost(b, m), rel=1e-12)
    a, c = n.hot_candidate_costs(b, m), j.hot_candidate_costs(b, m)
    assert np.array_equal(np.isinf(a), np.isinf(c))
    assert np.allclose(a[np.isfinite(a)], c[np.isfinite(c)], rtol=1e-12)


@needs_numba
def test_kde_sum_agrees():
    rng = derive_rng(0, "kde_kernel")
    xs, ts = rng.normal(size=3000), rng.random(3000)
    xe, te = rng.normal(size=500), rng.random(500)
    a = kernels.numpy_impl.kde_sum(xe, te, xs, ts, 0.07)
    b = kernels.numba_impl.kde_sum(xe, te, xs, ts, 0.07)
    assert np.allclose(a, b, rtol=1e-12, atol=0)


@needs_numba
@given(arrays(float, st.tuples(st.integers(1, 40), st.just(2)), elements=st.floats(-5, 5)),
       arrays(float, st.tuples(st.integers(1, 6), st.just(2)), elements=st.floats(-5, 5)))
def test_nearest_assign_agrees(points, centers):
    la, da = kernels.numpy_impl.nearest_assign(points, centers)
    lb, db = kernels.numba_impl.nearest_assign(points, centers)
    assert np.array_equal(la, lb)
    assert np.allclose(da, db, rtol=1e-14, atol=0)


@pytest.mark.parametrize("impl", IMPLS, ids=lambda m: m.__name__.rsplit("_", 1)[-1])
def test_nearest_assign_ties_lowest_index(impl):
    labels, dists = impl.nearest_assign(np.array([[0.5, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert labels.tolist() == [0] and dists.tolist() == [0.5]


def test_dispatch_coerces_inputs():
    b, m = _grid(1)
    assert kernels.component_cost(b.astype(bool), m.tolist()) == pytest.approx(_brute_cost(b, m))


def _backend_in_subprocess(value):
    env = dict(os.environ)
    env.pop("EQUIPART_DISABLE_NUMBA", None)
    if value is not None:
        env["EQUIPART_DISABLE_NUMBA"] = value
    code = ("from equipart import kernels;"
            "import numpy as np;"
            "print(kernels.backend(), kernels.component_cost(np.zeros((3,3),np.uint8), np.full((3,3),1/9)))")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return out.stdout.split()


@pytest.mark.parametrize("value", ["1", "true", "YES"])
def test_env_var_selects_numpy(value):
    name, cost = _backend_in_subprocess(value)
    assert name == "numpy" and float(cost) == pytest.approx(9.0)


@needs_numba
def test_default_backend_is_numba():
    assert _backend_in_subprocess(None)[0] == "numba"
    assert _backend_in_subprocess("0")[0] == "numba"


@pytest.mark.slow
def test_suite_module_runs_without_numba(tmp_path):
    env = dict(os.environ, EQUIPART_DISABLE_NUMBA="1")
    here = os.path.dirname(__file__)
    out = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                          os.path.join(here, "test_static.py"), "-k", "hot or kmedians"],
                         env=env, capture_output=True, text=True, cwd=tmp_path)
    assert out.returncode == 0, out.stdout[-2000:]


def test_benchmark_script_runs():
    script = os.path.join(os.path.dirname(__file__), os.pardir, "benchmarks", "bench_kernels.py")
    out = subprocess.run([sys.executable, script, "--repeat", "1"], capture_output=True, text=True, check=True)
    assert "nearest_assign" in out.stdout
