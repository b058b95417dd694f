import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import trapezoid
from scipy.special import gammaln

from equipart.domain import FloorClampWarning, derive_rng
from equipart.inference import (
    DirichletPosterior,
    SpacetimeKDE,
    WienerSpec,
    bandwidth_schedule,
    categorical_optimum,
    dynamic_allocation_step,
    kde_eval,
    kde_insert,
    kde_l1_error,
    posterior_predictive,
    posterior_update,
    relax_allocation,
    run_categorical,
    wiener_density,
    wiener_sample_paths,
)


def test_update_counts():
    post = posterior_update(DirichletPosterior.uniform(2), 0)
    assert post.counts.tolist() == [1, 0] and post.N == 1


def test_distinct_updates():
    post = DirichletPosterior.uniform(5)
    for c in range(5):
        post = posterior_update(post, c)
    assert post.N == 5


@given(st.lists(st.integers(0, 3), max_size=30), st.randoms(use_true_random=False))
def test_update_order_irrelevant(obs, rnd):
    shuffled = list(obs)
    rnd.shuffle(shuffled)
    a = b = DirichletPosterior.uniform(4)
    for c in obs:
        a = posterior_update(a, c)
    for c in shuffled:
        b = posterior_update(b, c)
    assert np.array_equal(a.counts, b.counts)


def test_update_rejects_bad_category():
    with pytest.raises(ValueError):
        posterior_update(DirichletPosterior.uniform(3), 3)
    with pytest.raises(ValueError):
        posterior_update(DirichletPosterior.uniform(3), -1)


def test_invalid_posterior():
    with pytest.raises(ValueError):
        DirichletPosterior(np.array([1.0, 0.0]), np.array([0, 0]))
    with pytest.raises(ValueError):
        DirichletPosterior(np.array([1.0, 1.0]), np.array([0, -1]))


def test_predictive_symmetric_prior():
    assert posterior_predictive(DirichletPosterior.uniform(2)).tolist() == [0.5, 0.5]


def test_predictive_against_marginal_enumeration():
    alpha = np.array([1.0, 1.0])
    counts = np.array([3, 1])
    got = posterior_predictive(DirichletPosterior(alpha, counts))
    assert np.allclose(got, [2 / 3, 1 / 3], atol=1e-15)

    # P(next = i | data) = m(data + e_i) / m(data), m the Dirichlet-multinomial sequence probability
    def log_marginal(n):
        return (gammaln(alpha.sum()) - gammaln(alpha.sum() + n.sum())
                + np.sum(gammaln(alpha + n) - gammaln(alpha)))

    oracle = [np.exp(log_marginal(counts + np.eye(2, dtype=int)[i]) - log_marginal(counts)) for i in range(2)]
    assert np.allclose(got, oracle, rtol=1e-12)


@given(st.lists(st.floats(0.1, 10), min_size=1, max_size=8).flatmap(
    lambda a: st.tuples(st.just(a), st.lists(st.integers(0, 1000), min_size=len(a), max_size=len(a)))))
def test_predictive_sums_to_one(args):
    alpha, counts = args
    pred = posterior_predictive(DirichletPosterior(np.array(alpha), np.array(counts)))
    assert abs(pred.sum() - 1.0) <= 1e-15 and np.all(pred > 0)


def test_predictive_tracks_frequencies():
    f = np.array([0.5, 0.3, 0.2])
    N = 10_000
    obs = derive_rng(3, "freq").choice(3, size=N, p=f)
    post = DirichletPosterior(np.ones(3), np.bincount(obs, minlength=3))
    assert np.max(np.abs(posterior_predictive(post) - f)) <= 3 / np.sqrt(N)


def test_allocation_fixed_point():
    p = np.array([0.5, 0.3, 0.2])
    S = categorical_optimum(p, 2.0)
    assert np.allclose(dynamic_allocation_step(S, p, 2.0, 1e-3), S, atol=1e-15)


def test_allocation_two_categories():
    S, _ = relax_allocation([0.9, 0.1], [0.75, 0.25], 1.0)
    assert np.allclose(S, [0.6339746, 0.3660254], atol=1e-6)
    assert abs(S.sum() - 1.0) <= 1e-6


def test_allocation_from_bad_start():
    p = np.array([0.6, 0.25, 0.1, 0.05])
    S, _ = relax_allocation([0.01, 0.01, 0.01, 3.0], p, 1.0)
    opt = categorical_optimum(p, 1.0)
    assert np.max(np.abs(S - opt) / opt) < 0.01


def test_allocation_clamp_flag():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        new = dynamic_allocation_step([0.5, 0.5], [0.99, 0.01], 1.0, 5.0)
    assert np.all(new > 0)
    assert any(issubclass(w.category, FloorClampWarning) for w in rec)


def test_allocation_rejects_nonpositive():
    with pytest.raises(ValueError):
        dynamic_allocation_step([0.5, 0.0], [0.5, 0.5], 1.0, 1e-3)


def test_categorical_replay():
    obs = derive_rng(0, "obs").choice(3, size=200, p=[0.6, 0.3, 0.1])
    a = run_categorical(obs, 3, 1.0, [1 / 3] * 3)
    b = run_categorical(obs, 3, 1.0, [1 / 3] * 3)
    assert np.array_equal(a.allocation, b.allocation) and np.array_equal(a.predictive, b.predictive)
    assert a.predictive.shape == (201, 3)
    assert a.predictive[0].tolist() == [1 / 3] * 3


def test_kde_peak():
    kde = kde_insert(SpacetimeKDE(0.04), 1.0, 2.0)
    assert kde_eval(kde, 1.0, 2.0) == pytest.approx(1 / (2 * np.pi * 0.04), rel=1e-14)


def test_kde_far_field():
    h = 0.01
    kde = kde_insert(SpacetimeKDE(h), [0.0, 0.1], [0.0, 0.05])
    assert kde_eval(kde, 10 * np.sqrt(h) + 0.1, 0.0) <= 1e-20


def test_kde_integrates_to_one():
    rng = derive_rng(1, "kde_mass")
    kde = kde_insert(SpacetimeKDE(0.05), rng.normal(size=50), rng.uniform(0, 1, 50))
    x = np.linspace(-6, 6, 481)
    t = np.linspace(-3, 4, 281)
    X, T = np.meshgrid(x, t, indexing="ij")
    mass = kde_eval(kde, X, T).sum() * (x[1] - x[0]) * (t[1] - t[0])
    assert mass == pytest.approx(1.0, abs=0.01)


def test_kde_empty_and_bad_bandwidth():
    with pytest.raises(ValueError):
        kde_eval(SpacetimeKDE(1.0), 0.0, 0.0)
    with pytest.raises(ValueError):
        SpacetimeKDE(0.0)


def test_bandwidth_schedule():
    assert bandwidth_schedule(1) == 0.5
    assert bandwidth_schedule(2000) / bandwidth_schedule(1000) == pytest.approx(2 ** (-1 / 3))
    assert bandwidth_schedule(10 ** 12) < 1e-4
    with pytest.raises(ValueError):
        bandwidth_schedule(0)


def test_wiener_density_values():
    spec = WienerSpec()
    assert wiener_density(spec, 0.3, -1.0) == 0.0
    assert wiener_density(spec, 0.0, 1.0) == pytest.approx(1 / np.sqrt(2 * np.pi), rel=1e-15)


@given(st.floats(-2, 2), st.floats(0.2, 3), st.floats(-1, 1), st.floats(0.05, 5))
def test_wiener_density_normalised(mu, sigma, x0, t):
    spec = WienerSpec(mu, sigma, x0)
    c = x0 + mu * t
    w = 12 * sigma * np.sqrt(t)
    x = np.linspace(c - w, c + w, 4001)
    mass = trapezoid(wiener_density(spec, x, np.full_like(x, t)), x)
    assert abs(mass - 1.0) <= 1e-9


def test_wiener_drift_limit():
    rec = wiener_sample_paths(WienerSpec(0.7, 1e-12, 0.2), 3, 0.01, 1.0, 0)
    end = rec[rec[:, 1] == rec[:, 1].max(), 2]
    assert np.allclose(end, 0.2 + 0.7, atol=1e-9)


def test_wiener_terminal_moments():
    spec = WienerSpec(0.5, 1.2, 0.0)
    T, n = 1.0, 10_000
    rec = wiener_sample_paths(spec, n, 0.25, T, 11)
    end = rec[np.isclose(rec[:, 1], T), 2]
    assert len(end) == n
    assert abs(end.mean() - spec.mu * T) <= 3 * spec.sigma * np.sqrt(T / n)
    assert end.var(ddof=1) == pytest.approx(spec.sigma ** 2 * T, rel=0.1)


def test_wiener_paths_deterministic():
    a = wiener_sample_paths(WienerSpec(), 4, 0.1, 1.0, 5)
    b = wiener_sample_paths(WienerSpec(), 4, 0.1, 1.0, 5)
    assert np.array_equal(a, b)
    assert set(a[:, 0]) == {0, 1, 2, 3}


def _kde_l1(N, seed):
    spec = WienerSpec(0.0, 1.0, 0.0)
    horizon = 1.0
    rng = derive_rng(seed, "kde_consistency")
    paths = wiener_sample_paths(spec, N, horizon / 20, horizon, seed)
    rec = paths[rng.choice(len(paths), size=N, replace=False)]
    x = np.linspace(-3, 3, 61)
    t = np.linspace(0.2, 1.0, 17)
    return kde_l1_error(spec, rec, bandwidth_schedule(N), x, t, horizon)


@pytest.mark.slow
def test_kde_consistency_majority():
    wins = 0
    for seed in range(3):
        e = [_kde_l1(N, seed) for N in (100, 1000, 10_000)]
        wins += e[0] > e[1] > e[2]
    assert wins >= 2
