import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from equipart.domain import BoxDomain, GridField, PowerLaw, normalize_density
from equipart.misspec import (
    SQRT2,
    default_compact_domain,
    gaussian_rho_compact,
    gaussian_rho_curve,
    gaussian_rho_unbounded,
    misspec_report,
)

from conftest import density_1d, gaussian_2d


def test_same_density_costs_nothing():
    p = gaussian_2d(16, (0.3, 0.6), 0.2)
    rep = misspec_report(p, p)
    assert rep.opportunity == 0.0 and rep.rho == 0.0


def test_two_cell_symmetric_coincidence():
    p = density_1d([0.5, 0.5], upper=2.0)
    q = density_1d([0.8, 0.2], upper=2.0)
    rep = misspec_report(p, q)
    assert rep.cost_p_under_p == pytest.approx(2.0, rel=1e-15)
    assert rep.cost_p_under_q == pytest.approx(2.0, rel=1e-15)
    assert rep.opportunity == pytest.approx(0.0, abs=1e-15)


def test_three_cell_asymmetric():
    pv = np.array([0.5, 0.3, 0.2])
    qv = np.array([0.2, 0.3, 0.5])
    rep = misspec_report(density_1d(pv, upper=3.0), density_1d(qv, upper=3.0))
    # HOT optimum S = sqrt(p) / sum sqrt(p); cost 1/S
    S = np.sqrt(pv) / np.sqrt(pv).sum()
    assert rep.cost_p_under_p == pytest.approx(np.sum(pv / S), rel=1e-13)
    assert rep.cost_p_under_q == pytest.approx(np.sum(qv / S), rel=1e-13)
    assert rep.opportunity > 0


@given(st.lists(st.floats(0.05, 1), min_size=2, max_size=6).flatmap(
    lambda a: st.tuples(st.just(a), st.lists(st.floats(0.05, 1), min_size=len(a), max_size=len(a)))),
    st.sampled_from([0.5, 1.0, 2.0]))
def test_report_identities(pq, gamma):
    pv, qv = pq
    rep = misspec_report(density_1d(pv), density_1d(qv), PowerLaw(gamma))
    assert rep.opportunity == rep.cost_p_under_q - rep.cost_p_under_p
    assert rep.rho == 1.0 - rep.cost_p_under_p / rep.cost_p_under_q
    # the p-optimal allocation is the cheapest one under p
    assert rep.opportunity >= -1e-12 * rep.cost_p_under_p or rep.rho < 1


def test_mass_where_p_is_zero_diverges():
    rep = misspec_report(density_1d([1.0, 0.0]), density_1d([0.5, 0.5]))
    assert rep.divergent and np.isinf(rep.cost_p_under_q)


def test_lattice_mismatch_rejected():
    with pytest.raises(ValueError):
        misspec_report(density_1d([0.5, 0.5]), density_1d([0.2, 0.3, 0.5]))


def test_mc_matches_quadrature():
    p = gaussian_2d(20, (0.2, 0.3), 0.25, domain=default_compact_domain())
    q = gaussian_2d(20, (0.7, 0.5), 0.3, domain=default_compact_domain())
    exact = misspec_report(p, q)
    mc = misspec_report(p, q, method="mc", n=200_000, seed=4)
    assert abs(mc.cost_p_under_q - mc.cost_p_under_p - exact.opportunity) <= 3 * mc.stderr
    assert abs(mc.rho - exact.rho) <= 3 * mc.rho_stderr


@pytest.mark.slow
def test_mc_unbiased_over_seeds():
    p = gaussian_2d(20, (0.2, 0.3), 0.25, domain=default_compact_domain())
    q = gaussian_2d(20, (0.7, 0.5), 0.3, domain=default_compact_domain())
    exact = misspec_report(p, q).rho
    hits = sum(abs(r.rho - exact) <= 4 * r.rho_stderr
               for r in (misspec_report(p, q, method="mc", n=1_000_000, seed=s) for s in range(20)))
    assert hits >= 19


def test_ratio_one_is_zero():
    assert gaussian_rho_curve(1.0, [1.0])[0].rho == 0.0


def test_divergence_boundary():
    rows = gaussian_rho_curve(0.5, [SQRT2, 1.5, 3.0])
    assert all(r.divergent and r.rho == 1.0 for r in rows)
    assert not gaussian_rho_curve(0.5, [1.41])[0].divergent


def test_unbounded_closed_form_against_quadrature():
    sp, sq = 1.0, 1.2
    # radial integrals of sqrt(p) and q / sqrt(p) for centred isotropic Gaussians
    def log_g(r, s):
        return -r * r / (2 * s * s) - np.log(2 * np.pi * s * s)

    a = integrate.quad(lambda r: np.exp(0.5 * log_g(r, sp)) * 2 * np.pi * r, 0, 60)[0]
    b = integrate.quad(lambda r: np.exp(log_g(r, sq) - 0.5 * log_g(r, sp)) * 2 * np.pi * r, 0, 60)[0]
    assert gaussian_rho_unbounded(sp, sq) == pytest.approx(1 - a / b, rel=1e-10)


def test_ratio_1_2_analytic_vs_mc():
    row = gaussian_rho_curve(0.7, [1.2], n_mc=400_000, seed=2)[0]
    assert 0 < row.rho < 1
    assert row.rho == pytest.approx(1.2 ** 2 - 1)
    assert abs(row.rho_mc - row.rho) <= 3 * row.mc_stderr


def test_rho_monotone_unbounded():
    r = np.linspace(1.0, 1.414, 60)
    rho = [row.rho for row in gaussian_rho_curve(1.0, r)]
    assert np.all(np.diff(rho) >= 0)


def test_rho_monotone_compact():
    rows = gaussian_rho_curve(0.3, [1.0, 1.2, 1.5, 2.0, 3.0], domain=default_compact_domain(), n_mc=200_000)
    rho = np.array([r.rho for r in rows])
    assert np.all(np.diff(rho) >= 0)
    mc = np.array([r.rho_mc for r in rows])
    se = np.array([r.mc_stderr for r in rows])
    assert np.all(np.abs(mc - rho) <= 3 * np.maximum(se, 1e-15))
    # compact domain keeps every ratio finite
    assert not any(r.divergent for r in rows) and rho[-1] < 1


def test_compact_quadrature_against_scipy():
    dom = default_compact_domain()
    sp, sq = 0.3, 0.45
    rho, _, _ = gaussian_rho_compact(sp, sq, dom)

    def integral(f):
        return sum(integrate.dblquad(lambda y, x: f(x, y), lo[0], hi[0], lo[1], hi[1], epsabs=1e-12)[0]
                   for lo, hi in dom.boxes)

    g = lambda s: (lambda x, y: np.exp(-(x * x + y * y) / (2 * s * s)) / (2 * np.pi * s * s))
    zp, zq = integral(g(sp)), integral(g(sq))
    a = integral(lambda x, y: np.sqrt(g(sp)(x, y) / zp))
    b = integral(lambda x, y: g(sq)(x, y) / zq / np.sqrt(g(sp)(x, y) / zp))
    assert rho == pytest.approx(1 - a / b, rel=1e-8)


def test_bad_inputs():
    with pytest.raises(ValueError):
        gaussian_rho_curve(1.0, [0.9])
    with pytest.raises(ValueError):
        gaussian_rho_curve(0.0, [1.0])
