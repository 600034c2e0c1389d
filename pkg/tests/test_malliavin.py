"""Derivative flow along paths: factors, Gram matrices, and moments.

Checked here:

* for constant-drift targets (f constant or a pure mean shift) every
  per-step factor is exactly the identity, the Gram diagonal is exactly the
  running sum of step lengths, the time-one operator norm is exactly one,
  and all endpoint moments are exactly one with zero standard error;
* Gram matrices start at zero, stay exactly symmetric, and stay positive
  semidefinite, and the flow time axis is the grid nodes plus the endpoint;
* the one-dimensional propagator matches the closed form exp(sum of
  midpoint slopes times step lengths) to 1e-12, and an independent
  three-point Gauss-Legendre integration of the slope along the linear
  state interpolant confirms it to quadrature-limited accuracy;
* unrolling the Gram recurrence reproduces the weighted sum of outer
  products of propagators with left-endpoint time weights;
* propagators compose: J(s, u) = J(t, u) J(s, t) at node triples, and
  J(t, t) is exactly the identity;
* a one-sided finite-difference probe of the flow map (bump one Brownian
  increment, re-integrate, divide) matches the assembled propagator to
  1e-3 on a fine geometric grid;
* steps violating the stiffness threshold are bisected, and the bisected
  ensemble sweep agrees bit for bit with the per-path flow while keeping
  the endpoint norm under the mixture envelope constant;
* shrinking the endpoint gap tenfold moves the mean endpoint norm by well
  under two percent;
* the truncated-Gaussian second moment sits under the contraction bound
  1/kappa, and product-cube moments at ten thousand paths resolve to a
  relative standard error below five percent;
* argument validation: flows reject failed trajectories, norms and
  propagators reject off-node times, moment orders must be positive
  integers, and an all-failed ensemble raises.
"""

import dataclasses

import numpy as np
import numpy.testing as npt
import pytest

import wienerlab as wl
from wienerlab.malliavin import MAX_BISECTION_DEPTH, STIFF_STEP_LIMIT

from oracles import gl3_flow_exponents, scalar_flow_exponents


# --------------------------------------------------------------------------
# Shared measures and grids
# --------------------------------------------------------------------------

GRID9 = wl.geometric_grid(rho=0.9, eps_end=1e-4)
GRID_FINE = wl.geometric_grid(rho=0.99, eps_end=1e-3)


def two_atom_mixture(radius=1.0, dim=1):
    atoms = np.zeros((2, dim))
    atoms[0, 0] = radius
    atoms[1, 0] = -radius
    return wl.make_gaussian_mixture(
        wl.MixtureSpec(atoms=atoms, weights=np.array([0.5, 0.5])))


def flow_for(measure, grid, seed):
    tr = wl.simulate_path(measure, grid, seed)
    assert not tr.failed
    return tr, wl.jacobian_flow(measure, tr)


# --------------------------------------------------------------------------
# Constant drift: everything is exact
# --------------------------------------------------------------------------

@pytest.mark.parametrize("measure", [
    wl.make_standard_gaussian(1),
    wl.make_gaussian(np.array([2.0]), np.eye(1)),
], ids=["flat", "mean_shift"])
def test_constant_drift_flow_is_exact(measure):
    _, fl = flow_for(measure, GRID9, wl.path_seed(1, 0))
    assert all(np.array_equal(A, np.eye(1)) for A in fl.factors)
    running = np.concatenate([[0.0], np.cumsum(np.diff(fl.times))])
    npt.assert_array_equal(fl.gram[:, 0, 0], running)
    assert wl.malliavin_norm(fl, 1.0) == 1.0
    assert np.array_equal(wl.propagator(fl, 0.0, 1.0), np.eye(1))
    mid = float(fl.times[GRID9.n_steps // 2])
    assert np.array_equal(wl.propagator(fl, mid, 1.0), np.eye(1))


def test_constant_drift_moments_are_exactly_one():
    measure = wl.make_standard_gaussian(1)
    ens = wl.simulate_ensemble(measure, GRID9, n_paths=64, master_seed=5)
    fe = wl.ensemble_flow(measure, ens)
    npt.assert_array_equal(fe.norms_final, np.ones(64))
    for m in (1, 2, 3):
        est = wl.moment_estimate(fe, m)
        assert est.value == 1.0
        assert est.standard_error == 0.0
        assert est.n_paths == 64
        assert est.order == m
        assert float(est) == 1.0


# --------------------------------------------------------------------------
# Flow structure
# --------------------------------------------------------------------------

def test_flow_axes_and_gram_invariants():
    measure = two_atom_mixture(radius=1.0, dim=2)
    tr, fl = flow_for(measure, GRID9, wl.path_seed(2, 0))
    K = GRID9.n_steps
    npt.assert_array_equal(fl.times, np.append(GRID9.nodes, 1.0))
    assert fl.factors.shape == (K + 1, 2, 2)
    assert fl.gram.shape == (K + 2, 2, 2)
    npt.assert_array_equal(fl.gram[0], np.zeros((2, 2)))
    assert np.array_equal(fl.gram, np.swapaxes(fl.gram, 1, 2))
    assert float(np.min(np.linalg.eigvalsh(fl.gram))) >= 0.0
    assert not fl.failed and fl.failure_time is None


def test_gram_unrolls_to_weighted_propagator_sum():
    measure = wl.make_truncated_gaussian(1.0)
    grid = wl.uniform_grid(12, eps_end=1e-2)
    _, fl = flow_for(measure, grid, wl.path_seed(3, 0))
    dts = np.diff(fl.times)
    for k in (4, 9, fl.times.size - 1):
        t = float(fl.times[k])
        direct = sum(dts[j] * wl.propagator(fl, float(fl.times[j]), t) ** 2
                     for j in range(k))
        npt.assert_allclose(fl.gram[k], direct, rtol=1e-12, atol=1e-15)


def test_propagators_compose_across_nodes():
    measure = two_atom_mixture(radius=1.0, dim=2)
    _, fl = flow_for(measure, GRID9, wl.path_seed(66, 0))
    nodes = fl.times
    for i, j, k in [(5, 40, nodes.size - 1), (0, 30, 60), (10, 11, 12)]:
        s, t, u = float(nodes[i]), float(nodes[j]), float(nodes[k])
        lhs = wl.propagator(fl, s, u)
        rhs = wl.propagator(fl, t, u) @ wl.propagator(fl, s, t)
        npt.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-14)
    t = float(nodes[17])
    assert np.array_equal(wl.propagator(fl, t, t), np.eye(2))


# --------------------------------------------------------------------------
# One-dimensional closed form and an independent quadrature
# --------------------------------------------------------------------------

@pytest.mark.parametrize("measure", [
    wl.make_truncated_gaussian(1.0),
    two_atom_mixture(radius=1.0),
], ids=["truncated", "mixture"])
def test_scalar_propagator_matches_closed_form(measure):
    # Same midpoint samples, single exponential of the accumulated sum; any
    # disagreement is pure float noise (measured below 5e-15).
    worst = 0.0
    for s in range(2):
        tr, fl = flow_for(measure, GRID_FINE, wl.path_seed(404, s))
        acc = scalar_flow_exponents(measure, tr, wl.drift_jacobian)
        for k in list(range(0, fl.times.size, 40)) + [fl.times.size - 1]:
            J = wl.propagator(fl, 0.0, float(fl.times[k]))[0, 0]
            worst = max(worst, abs(J - np.exp(acc[k])))
    assert worst < 1e-12


@pytest.mark.parametrize("measure, tol", [
    (wl.make_truncated_gaussian(1.0), 5e-5),
    (two_atom_mixture(radius=1.0), 2e-3),
], ids=["truncated", "mixture"])
def test_scalar_propagator_against_gauss_legendre(measure, tol):
    # Independent rule: three-point Gauss-Legendre along the linear state
    # interpolant.  Agreement is limited by the interpolant (the slope is
    # rough along a Brownian path), hence the looser, target-dependent
    # tolerances (measured 1.5e-5 and 4.4e-4).
    worst = 0.0
    for s in range(2):
        tr, fl = flow_for(measure, GRID_FINE, wl.path_seed(404, s))
        acc = gl3_flow_exponents(measure, tr, wl.drift_jacobian)
        for k in list(range(0, fl.times.size, 40)) + [fl.times.size - 1]:
            if fl.times[k] > 0.9:
                continue
            J = wl.propagator(fl, 0.0, float(fl.times[k]))[0, 0]
            worst = max(worst, abs(J - np.exp(acc[k])))
    assert worst < tol


def test_propagator_matches_finite_difference_probes():
    # Bump one Brownian increment by eps, re-integrate the Euler recursion,
    # and difference the states; the increment lands after the drift
    # evaluation of its step, so the probe measures J from the next node on.
    # The discrepancy is the first-order gap between the discrete map's
    # derivative and the midpoint-exponential factors, about 5.3e-4 on this
    # grid and shrinking linearly with the first step length.
    measure = wl.make_truncated_gaussian(1.0)
    grid = wl.geometric_grid(rho=0.995, eps_end=1e-3)
    K = grid.n_steps
    rng = np.random.default_rng(7)
    eps = 1e-5
    worst = 0.0
    for s in range(2):
        tr, fl = flow_for(measure, grid, wl.path_seed(505, s))
        for _ in range(10):
            k = int(rng.integers(0, int(0.5 * K)))
            jt = int(rng.integers(k + 50, int(0.92 * K)))
            bumped = tr.brownian_increments.copy()
            bumped[k, 0] += eps
            xs = wl.integrate_increments(measure, grid, bumped)
            fd = (xs[jt, 0] - tr.states[jt, 0]) / eps
            J = wl.propagator(fl, float(grid.nodes[k + 1]),
                              float(grid.nodes[jt]))[0, 0]
            worst = max(worst, abs(fd - J))
    assert worst < 1e-3


# --------------------------------------------------------------------------
# Stiff steps and bisection
# --------------------------------------------------------------------------

def test_wide_mixture_bisects_and_stays_consistent():
    measure = two_atom_mixture(radius=2.5)
    ens = wl.simulate_ensemble(measure, GRID9, n_paths=200, master_seed=31)
    # The first step really is stiff for most paths: the midpoint Jacobian
    # eigenvalue times the step length crosses the bisection threshold.
    dt0 = float(GRID9.nodes[1] - GRID9.nodes[0])
    t_mid = 0.5 * float(GRID9.nodes[0] + GRID9.nodes[1])
    X_mid = 0.5 * (ens.states[:, 0, :] + ens.states[:, 1, :])
    lam = wl.drift_jacobian(measure, t_mid, X_mid)[:, 0, 0]
    assert int(np.sum(lam * dt0 > STIFF_STEP_LIMIT)) > 50
    assert MAX_BISECTION_DEPTH >= 4

    fe = wl.ensemble_flow(measure, ens)
    assert int(fe.failed.sum()) == 0
    for i in (0, 7, 93, 199):
        fl = wl.jacobian_flow(measure, ens[i])
        assert np.array_equal(fl.gram[-1], fe.gram_final[i])
        assert wl.malliavin_norm(fl, 1.0) == fe.norms_final[i]
        assert wl.malliavin_norm(fl, float(GRID9.nodes[-1])) == \
            fe.norms_last_node[i]
    assert float(np.max(fe.norms_final ** 2)) <= wl.mixture_constant(2.5)


def test_endpoint_gap_refinement_moves_norms_little():
    fine = wl.geometric_grid(rho=0.9, eps_end=1e-5)
    for measure in (wl.make_truncated_gaussian(1.0),
                    wl.make_uniform_interval(1.0)):
        coarse_ens = wl.simulate_ensemble(measure, GRID9, n_paths=400,
                                          master_seed=707)
        fine_ens = wl.simulate_ensemble(measure, fine, n_paths=400,
                                        master_seed=707)
        a = float(np.mean(wl.ensemble_flow(measure, coarse_ens).norms_final))
        b = float(np.mean(wl.ensemble_flow(measure, fine_ens).norms_final))
        assert abs(b - a) / a < 0.02


# --------------------------------------------------------------------------
# Endpoint moments
# --------------------------------------------------------------------------

def test_truncated_moment_respects_contraction_bound():
    measure = wl.make_truncated_gaussian(1.0)
    ens = wl.simulate_ensemble(measure, GRID9, n_paths=2000, master_seed=909)
    fe = wl.ensemble_flow(measure, ens)
    est = wl.moment_estimate(fe, 1)
    assert est.value <= 0.5 + 3.0 * est.standard_error
    assert float(np.max(fe.norms_final)) > 0.0


def test_product_cube_moment_resolves_at_scale():
    measure = wl.make_uniform_cube(1.0, 4)
    ens = wl.simulate_ensemble(measure, GRID9, n_paths=10_000,
                               master_seed=808)
    fe = wl.ensemble_flow(measure, ens)
    est = wl.moment_estimate(fe, 2)
    assert est.n_paths == 10_000
    assert 0.0 < est.value < 1.0
    assert est.standard_error / est.value < 0.05


def test_moment_estimate_accepts_flow_lists_and_skips_failed():
    measure = wl.make_truncated_gaussian(1.0)
    flows = [flow_for(measure, GRID9, wl.path_seed(44, s))[1]
             for s in range(6)]
    est = wl.moment_estimate(flows, 1)
    assert est.n_paths == 6
    broken = dataclasses.replace(flows[0], failed=True)
    est2 = wl.moment_estimate([broken] + flows[1:], 1)
    assert est2.n_paths == 5
    with pytest.raises(ValueError, match="no surviving flows"):
        wl.moment_estimate([broken], 1)


def test_prefailed_ensemble_rows_are_excluded():
    measure = wl.make_truncated_gaussian(1.0)
    ens = wl.simulate_ensemble(measure, GRID9, n_paths=8, master_seed=55)
    failed = ens.failed.copy()
    failed[0] = True
    fe = wl.ensemble_flow(measure, dataclasses.replace(ens, failed=failed))
    assert bool(fe.failed[0]) and int(fe.failed.sum()) == 1
    assert fe.norms_final[0] == 0.0
    assert wl.moment_estimate(fe, 1).n_paths == 7
    assert fe.n_paths == 8


# --------------------------------------------------------------------------
# Argument validation
# --------------------------------------------------------------------------

def test_flow_rejects_failed_trajectory():
    measure = wl.make_truncated_gaussian(1.0)
    tr = wl.simulate_path(measure, GRID9, wl.path_seed(9, 0))
    with pytest.raises(ValueError, match="trajectory failed"):
        wl.jacobian_flow(measure, dataclasses.replace(tr, failed=True))


def test_norm_and_propagator_reject_off_node_times():
    measure = wl.make_truncated_gaussian(1.0)
    _, fl = flow_for(measure, GRID9, wl.path_seed(9, 1))
    with pytest.raises(ValueError, match="not a node"):
        wl.malliavin_norm(fl, 0.1234)
    with pytest.raises(ValueError):
        wl.propagator(fl, 0.1234, 1.0)
    with pytest.raises(ValueError):
        wl.propagator(fl, float(fl.times[10]), float(fl.times[5]))


def test_moment_order_must_be_positive_integer():
    measure = wl.make_standard_gaussian(1)
    ens = wl.simulate_ensemble(measure, GRID9, n_paths=4, master_seed=5)
    fe = wl.ensemble_flow(measure, ens)
    with pytest.raises(ValueError, match="positive integer"):
        wl.moment_estimate(fe, 0)
    with pytest.raises(ValueError, match="positive integer"):
        wl.moment_estimate(fe, 1.5)
