"""Envelope profiles, Gronwall integrals, and contraction constants."""

import math
import warnings

import numpy as np
import numpy.testing as npt
import pytest

import wienerlab as wl
from wienerlab import bounds


# --------------------------------------------------------------------------
# Regime selection and envelope values
# --------------------------------------------------------------------------

def test_regime_selection():
    assert wl.theta_profile(2.0).regime == "kappaS2_ge_1"
    assert wl.theta_profile(1.0).regime == "kappaS2_ge_1"
    assert wl.theta_profile(1.0, 1.0).regime == "kappaS2_ge_1"
    assert wl.theta_profile(0.5, 1.0).regime == "kappaS2_lt_1"
    assert wl.theta_profile(0.0, 1.0).regime == "kappaS2_lt_1"
    assert wl.theta_profile(-1.0, 0.5).regime == "kappaS2_lt_1"
    assert wl.theta_profile(0.0).regime == "trivial"
    assert wl.theta_profile(-2.0).regime == "trivial"
    assert wl.mixture_profile(1.0).regime == "mixture"


def test_theta_log_concave_branch():
    # kappa = 1: the envelope vanishes identically.
    p = wl.theta_profile(1.0)
    npt.assert_allclose(p.theta(np.linspace(0, 1, 11)), 0.0, atol=0.0)
    # kappa = 2: theta_t = -1/(2 - t).
    p = wl.theta_profile(2.0)
    t = np.linspace(0.0, 1.0, 21)
    npt.assert_allclose(p.theta(t), -1.0 / (2.0 - t), rtol=1e-15)
    assert isinstance(p.theta(0.5), float)


def test_theta_bounded_support_branch():
    # kappa = 0, S = 1: support branch t/(1-t)^2 up to t* = 1/2, then 1/t.
    p = wl.theta_profile(0.0, 1.0)
    assert p.switch_time == pytest.approx(0.5, abs=1e-15)
    t = np.array([0.1, 0.3, 0.5])
    npt.assert_allclose(p.theta(t), t / (1.0 - t) ** 2, rtol=1e-14)
    t = np.array([0.6, 0.9, 1.0])
    npt.assert_allclose(p.theta(t), 1.0 / t, rtol=1e-14)


@pytest.mark.parametrize("kappa,S", [(0.0, 1.0), (0.5, 1.0), (0.25, 1.5),
                                     (-1.0, 0.5), (0.9, 1.02)])
def test_theta_branches_meet_at_switch_time(kappa, S):
    p = wl.theta_profile(kappa, S)
    ts = p.switch_time
    below = (ts + S * S - 1.0) / (1.0 - ts) ** 2
    above = (1.0 - kappa) / ((1.0 - kappa) * ts + kappa)
    assert abs(below - above) <= 1e-9 * max(1.0, abs(above))


def test_mixture_envelope_is_constant():
    p = wl.mixture_profile(1.5)
    npt.assert_allclose(p.theta(np.linspace(0, 1, 7)), 2.25, rtol=0.0)


def test_trivial_profile_has_no_envelope():
    p = wl.theta_profile(0.0)
    assert p.constant_sq == math.inf
    with pytest.raises(ValueError):
        p.theta(0.5)
    with pytest.raises(ValueError):
        wl.gronwall_integral(p, 0.5)
    with pytest.raises(ValueError):
        wl.gronwall_quadrature(p, 0.5)


def test_profile_input_validation():
    with pytest.raises(ValueError):
        wl.theta_profile(1.0, 0.0)
    with pytest.raises(ValueError):
        wl.theta_profile(1.0, -2.0)
    with pytest.raises(ValueError):
        wl.mixture_profile(0.0)
    with pytest.raises(ValueError):
        wl.mixture_constant(-1.0)


# --------------------------------------------------------------------------
# Contraction constants
# --------------------------------------------------------------------------

def test_constant_kappa_regime():
    assert wl.theta_profile(2.0).constant_sq == pytest.approx(0.5, rel=1e-15)
    assert wl.theta_profile(1.5).constant_sq == pytest.approx(2.0 / 3.0,
                                                              rel=1e-15)


def test_constant_bounded_support_regime():
    # kappa = 0, S = 1: ((e + 1)/2) S^2.
    c = wl.theta_profile(0.0, 1.0).constant_sq
    assert c == pytest.approx((math.e + 1.0) / 2.0, rel=1e-15)
    # scaling in S at fixed kappa S^2: S = 2, kappa = 0.
    c = wl.theta_profile(0.0, 2.0).constant_sq
    assert c == pytest.approx((math.e + 1.0) * 2.0, rel=1e-15)


def test_constant_mixture():
    assert wl.mixture_constant(1.0) == pytest.approx(
        (math.e ** 2 - 1.0) / 2.0, rel=1e-15)
    assert wl.mixture_constant(0.0) == 1.0
    assert wl.mixture_constant(1e-12) == 1.0
    # small-R expansion: 1 + R^2 + O(R^4).
    assert wl.mixture_constant(1e-3) == pytest.approx(1.0 + 1e-6, rel=1e-9)


def test_constants_continuous_at_regime_boundary():
    S = 1.3
    lo = wl.theta_profile((1.0 - 1e-6) / S ** 2, S).constant_sq
    hi = wl.theta_profile((1.0 + 1e-6) / S ** 2, S).constant_sq
    # both sides approach S^2 = kappa^{-1} at kappa S^2 = 1
    assert abs(lo - hi) < 1e-5
    assert lo == pytest.approx(S ** 2, rel=1e-5)


def test_rescaled_constants():
    # isotropic Sigma = Id reduces to the mixture constant.
    assert wl.rescaled_constants(1.0, np.eye(3)) == pytest.approx(
        wl.mixture_constant(1.0), rel=1e-14)
    # lam_min = lam_max = 4, R = 1: 8 (sqrt(e) - 1).
    assert wl.rescaled_constants(1.0, 4.0 * np.eye(2)) == pytest.approx(
        8.0 * (math.exp(0.5) - 1.0), rel=1e-14)
    # tiny R limit: lam_max.
    sig = np.diag([0.5, 3.0])
    assert wl.rescaled_constants(0.0, sig) == 3.0
    # anisotropic value computed from the eigenvalue range directly.
    want = 0.5 * 3.0 / 2.0 * math.expm1(2.0 / 0.5)
    assert wl.rescaled_constants(1.0, sig) == pytest.approx(want, rel=1e-14)
    with pytest.raises(ValueError):
        wl.rescaled_constants(1.0, np.diag([1.0, -0.5]))


# --------------------------------------------------------------------------
# Gronwall integrals
# --------------------------------------------------------------------------

def test_gronwall_kappa_one_is_time():
    p = wl.theta_profile(1.0)
    for t in (0.0, 0.25, 0.5, 1.0):
        assert wl.gronwall_integral(p, t) == pytest.approx(t, abs=1e-15)


def test_gronwall_time_one_matches_constant_in_kappa_regime():
    for kappa in (1.0, 1.5, 2.0, 4.0):
        p = wl.theta_profile(kappa)
        assert wl.gronwall_integral(p, 1.0) == pytest.approx(
            1.0 / kappa, rel=1e-14)


def test_gronwall_mixture_closed_form():
    p = wl.mixture_profile(1.0)
    assert wl.gronwall_integral(p, 1.0) == pytest.approx(
        (math.e ** 2 - 1.0) / 2.0, rel=1e-15)
    # d/dt at 0 equals 1 (the integrand at s = t is 1)
    assert wl.gronwall_integral(p, 1e-8) == pytest.approx(1e-8, rel=1e-6)


def test_gronwall_uniform_time_one():
    # kappa = 0, S = 1: the closed integral at t = 1 is (e^2 + 1)/2, which
    # is strictly larger than the norm constant (e + 1)/2.
    p = wl.theta_profile(0.0, 1.0)
    val = wl.gronwall_integral(p, 1.0)
    assert val == pytest.approx((math.e ** 2 + 1.0) / 2.0, rel=1e-14)
    assert val > p.constant_sq


@pytest.mark.parametrize("profile", [
    wl.theta_profile(2.0),
    wl.theta_profile(1.5, 4.0),
    wl.theta_profile(1.0),
    wl.theta_profile(0.0, 1.0),
    wl.theta_profile(0.5, 1.0),
    wl.theta_profile(-1.0, 0.5),
    wl.mixture_profile(1.0),
    wl.mixture_profile(0.3),
], ids=lambda p: f"{p.regime}-k{p.kappa}-S{p.S}-R{p.radius}")
def test_gronwall_closed_matches_quadrature(profile):
    lo = profile.switch_time if profile.switch_time is not None else 0.0
    for t in np.linspace(max(lo, 1e-3), 1.0, 50):
        closed = wl.gronwall_integral(profile, float(t))
        quad = wl.gronwall_quadrature(profile, float(t))
        assert abs(closed - quad) <= 1e-8 * max(abs(quad), 1e-12)


def test_gronwall_quadrature_boundary_continuity():
    S = 1.3
    lo = wl.theta_profile((1.0 - 1e-7) / S ** 2, S)
    hi = wl.theta_profile((1.0 + 1e-7) / S ** 2, S)
    for t in np.linspace(0.05, 1.0, 20):
        a = wl.gronwall_quadrature(lo, float(t))
        b = wl.gronwall_quadrature(hi, float(t))
        assert abs(a - b) <= 1e-6


def test_gronwall_early_time_falls_back_with_warning():
    p = wl.theta_profile(0.0, 1.0)
    with pytest.warns(RuntimeWarning):
        val = wl.gronwall_integral(p, 0.25)
    assert val == pytest.approx(wl.gronwall_quadrature(p, 0.25), rel=1e-9)


def test_gronwall_rejects_bad_times():
    p = wl.theta_profile(2.0)
    with pytest.raises(ValueError):
        wl.gronwall_integral(p, -0.1)
    with pytest.raises(ValueError):
        wl.gronwall_integral(p, 1.1)
    assert wl.gronwall_quadrature(p, 0.0) == 0.0


def test_gronwall_monotone_in_time():
    for p in (wl.theta_profile(2.0), wl.theta_profile(0.0, 1.0),
              wl.mixture_profile(1.0)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals = [wl.gronwall_integral(p, float(t))
                    for t in np.linspace(0.0, 1.0, 21)]
    assert np.all(np.diff(vals) > 0.0)


# --------------------------------------------------------------------------
# Profiles from catalog targets
# --------------------------------------------------------------------------

def test_profile_for_measure():
    p = wl.profile_for_measure(wl.make_truncated_gaussian(1.0))
    assert p.regime == "kappaS2_ge_1"
    assert p.constant_sq == pytest.approx(0.5, rel=1e-14)
    p = wl.profile_for_measure(wl.make_truncated_gaussian(2.0))
    assert p.constant_sq == pytest.approx(2.0 / 3.0, rel=1e-14)
    p = wl.profile_for_measure(wl.make_uniform_interval(1.0))
    assert p.regime == "kappaS2_lt_1"
    assert p.constant_sq == pytest.approx((math.e + 1.0) / 2.0, rel=1e-14)
    p = wl.profile_for_measure(wl.make_gaussian(np.zeros(2), np.eye(2)))
    assert p.regime == "kappaS2_ge_1"
    assert p.constant_sq == pytest.approx(1.0, rel=1e-14)
    spec = wl.MixtureSpec(atoms=np.array([[1.0], [-1.0]]),
                          weights=np.array([0.5, 0.5]))
    p = wl.profile_for_measure(wl.make_gaussian_mixture(spec))
    assert p.regime == "mixture"
    assert p.radius == 1.0


# --------------------------------------------------------------------------
# Ensemble verification
# --------------------------------------------------------------------------

def test_verify_ensemble_identity_target():
    g = wl.make_standard_gaussian(1)
    grid = wl.geometric_grid(rho=0.8, eps_end=1e-3)
    ens = wl.simulate_ensemble(g, grid, n_paths=40, master_seed=1)
    flows = wl.ensemble_flow(g, ens)
    rep = wl.verify_ensemble(flows, wl.profile_for_measure(g))
    assert rep.passed
    assert rep.n_violations == 0
    assert rep.max_ratio == pytest.approx(1.0, abs=1e-6)
    assert rep.n_paths == 40


def test_verify_ensemble_accepts_flow_list():
    g = wl.make_standard_gaussian(1)
    grid = wl.geometric_grid(rho=0.8, eps_end=1e-3)
    flows = [wl.jacobian_flow(g, wl.simulate_path(g, grid, seed=s))
             for s in (1, 2, 3)]
    rep = wl.verify_ensemble(flows, wl.theta_profile(1.0))
    assert rep.passed and rep.n_paths == 3


def test_verify_ensemble_trivial_profile_never_flags():
    g = wl.make_standard_gaussian(1)
    grid = wl.geometric_grid(rho=0.8, eps_end=1e-3)
    ens = wl.simulate_ensemble(g, grid, n_paths=10, master_seed=1)
    flows = wl.ensemble_flow(g, ens)
    rep = wl.verify_ensemble(flows, wl.theta_profile(0.0))
    assert rep.passed and rep.max_ratio == 0.0


def test_verify_ensemble_flags_violations():
    g = wl.make_standard_gaussian(1)
    grid = wl.geometric_grid(rho=0.8, eps_end=1e-3)
    ens = wl.simulate_ensemble(g, grid, n_paths=10, master_seed=1)
    flows = wl.ensemble_flow(g, ens)
    tight = bounds.BoundProfile(regime="kappaS2_ge_1", kappa=2.0,
                                constant_sq=0.5)
    rep = wl.verify_ensemble(flows, tight)
    assert not rep.passed
    assert rep.n_violations == 10
    assert rep.max_ratio == pytest.approx(2.0, abs=1e-5)


def test_theta_dominance_on_truncated_target():
    m = wl.make_truncated_gaussian(1.0)
    grid = wl.geometric_grid(rho=0.85, eps_end=1e-3)
    ens = wl.simulate_ensemble(m, grid, n_paths=60, master_seed=17)
    rep = wl.theta_dominance_check(m, ens, max_paths=60, node_stride=2)
    assert rep.passed
    assert rep.max_excess <= 1e-6


def test_theta_dominance_on_mixture_target():
    spec = wl.MixtureSpec(atoms=np.array([[1.0, 0.0], [-1.0, 0.0]]),
                          weights=np.array([0.5, 0.5]))
    m = wl.make_gaussian_mixture(spec)
    grid = wl.geometric_grid(rho=0.85, eps_end=1e-3)
    ens = wl.simulate_ensemble(m, grid, n_paths=40, master_seed=23)
    rep = wl.theta_dominance_check(m, ens, max_paths=40, node_stride=3)
    assert rep.passed


def test_theta_dominance_catches_wrong_profile():
    m = wl.make_truncated_gaussian(1.0)
    grid = wl.geometric_grid(rho=0.85, eps_end=1e-3)
    ens = wl.simulate_ensemble(m, grid, n_paths=30, master_seed=17)
    # an envelope below the true drift Jacobian must be exceeded somewhere:
    # the sigma = 1 Jacobian starts at -1/2 while kappa = 4 starts at -3/4
    too_low = wl.theta_profile(4.0)
    rep = wl.theta_dominance_check(m, ens, profile=too_low, max_paths=30,
                                   node_stride=4)
    assert not rep.passed
    assert rep.max_excess > 0.2
