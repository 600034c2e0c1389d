"""Calibration sweep for the transport, flow, and bound test tolerances.

Prints measured statistics at the acceptance-scale configurations so test
tolerances can be frozen with evidence rather than guesses.
"""

import time

import numpy as np
from scipy import integrate

import wienerlab as wl


def banner(s):
    print(f"\n=== {s} ===", flush=True)


grid9 = wl.geometric_grid(rho=0.9, eps_end=1e-4)
grid95 = wl.geometric_grid(rho=0.95, eps_end=1e-4)

banner("A: KS + entropy at 1e5 paths (criterion-6/7 scale)")
targets = {
    "gaussian_mean1": wl.make_gaussian(np.array([1.0]), np.eye(1)),
    "uniform01": wl.make_uniform_interval(1.0),
    "truncated_s1": wl.make_truncated_gaussian(1.0),
}
for name, m in targets.items():
    t0 = time.time()
    e = wl.simulate_ensemble(m, grid9, n_paths=100_000, master_seed=101)
    ks = wl.endpoint_distribution_check(e)
    er = wl.entropy_identity_check(e)
    print(f"{name}: KS={ks.statistic:.5f} failed={e.failed.sum()} "
          f"H_quad={er.h_quadrature:.6f} H_mc={er.h_montecarlo:.6f} "
          f"rel={er.relative_error:.5f} ({time.time()-t0:.0f}s)", flush=True)

banner("B: contraction at 1e4 paths")
cases = [
    ("truncated_s1", wl.make_truncated_gaussian(1.0), grid9),
    ("truncated_s2", wl.make_truncated_gaussian(2.0), grid9),
    ("uniform01", wl.make_uniform_interval(1.0), grid9),
    ("mixture_R1_d1", wl.make_gaussian_mixture(wl.MixtureSpec(
        atoms=np.array([[1.0], [-1.0]]), weights=np.array([0.5, 0.5]))),
     grid95),
]
for name, m, g in cases:
    t0 = time.time()
    e = wl.simulate_ensemble(m, g, n_paths=10_000, master_seed=202)
    f = wl.ensemble_flow(m, e)
    prof = wl.profile_for_measure(m)
    rep = wl.verify_ensemble(f, prof)
    print(f"{name}: const={prof.constant_sq:.4f} max_ratio={rep.max_ratio:.5f} "
          f"viol={rep.n_violations} failed={e.failed.sum()} "
          f"({time.time()-t0:.0f}s)", flush=True)
    if name == "truncated_s1":
        mart = wl.barycenter_martingale_check(e)
        print(f"  martingale max z = {mart.max_z:.3f}")
        me = wl.moment_estimate(f, 1)
        print(f"  E|DX1|^2 = {me.value:.5f} +- {me.standard_error:.5f}")

banner("C: grid-refinement KS invariant (multi-seed means)")
m = wl.make_truncated_gaussian(1.0)
gridf = wl.geometric_grid(rho=np.sqrt(0.9), eps_end=1e-4)
ks_c, ks_f = [], []
for s in range(8):
    ec = wl.simulate_ensemble(m, grid9, n_paths=5000, master_seed=300 + s)
    ef = wl.simulate_ensemble(m, gridf, n_paths=5000, master_seed=300 + s)
    ks_c.append(wl.endpoint_distribution_check(ec).statistic)
    ks_f.append(wl.endpoint_distribution_check(ef).statistic)
kc, kf = np.mean(ks_c), np.mean(ks_f)
print(f"coarse mean KS={kc:.5f} fine mean KS={kf:.5f} "
      f"|delta|/coarse={abs(kf-kc)/kc:.3f}", flush=True)
print("coarse list:", np.round(ks_c, 5))
print("fine list:", np.round(ks_f, 5))

banner("D: 1D propagator vs per-step GL3 quadrature of v' (fine grid)")
gridfine = wl.geometric_grid(rho=0.99, eps_end=1e-3)
gl_x, gl_w = np.polynomial.legendre.leggauss(3)
for name, m in [("truncated_s1", wl.make_truncated_gaussian(1.0)),
                ("mixture_R1_d1", wl.make_gaussian_mixture(wl.MixtureSpec(
                    atoms=np.array([[1.0], [-1.0]]),
                    weights=np.array([0.5, 0.5]))))]:
    worst = 0.0
    for s in range(5):
        tr = wl.simulate_path(m, gridfine, seed=wl.path_seed(404, s))
        fl = wl.jacobian_flow(m, tr)
        nodes = gridfine.nodes
        # integral of v'(r, X_r) over each step on the linear interpolant
        acc = 0.0
        kmax = int(np.searchsorted(nodes, 0.9))
        for k in range(kmax):
            t0k, t1k = nodes[k], nodes[k + 1]
            x0, x1 = tr.states[k, 0], tr.states[k + 1, 0]
            tm = 0.5 * (t0k + t1k) + 0.5 * (t1k - t0k) * gl_x
            xm = x0 + (tm - t0k) / (t1k - t0k) * (x1 - x0)
            vals = [float(wl.drift_jacobian(m, t, np.array([[x]]))[0, 0, 0])
                    for t, x in zip(tm, xm)]
            acc += 0.5 * (t1k - t0k) * float(np.dot(gl_w, vals))
            J = wl.propagator(fl, 0.0, nodes[k + 1])[0, 0]
            worst = max(worst, abs(J - np.exp(acc)))
    print(f"{name}: max |J(0,t) - exp(GL3 int v')| over t<=0.9 = {worst:.3e}",
          flush=True)

banner("E: finite-difference probes of the propagator")
m = wl.make_truncated_gaussian(1.0)
rng = np.random.default_rng(7)
worst = 0.0
for s in range(3):
    tr = wl.simulate_path(m, gridfine, seed=wl.path_seed(505, s))
    fl = wl.jacobian_flow(m, tr)
    incr = np.diff(tr.states, axis=0) - wl.drift(
        m, gridfine.nodes[:-1, None].repeat(1, 1), tr.states[:-1]) * 0
    # reconstruct increments: states satisfy X_{k+1} = X_k + v dt + dW
    dt = gridfine.dt
    v = np.stack([np.atleast_2d(wl.drift(m, t, x[None, :]))[0]
                  for t, x in zip(gridfine.nodes[:-1], tr.states[:-1])])
    dW = np.diff(tr.states, axis=0) - v * dt[:, None]
    for _ in range(4):
        k = int(rng.integers(0, int(0.5 * gridfine.n_steps)))
        jt = int(rng.integers(k + 50, int(0.92 * gridfine.n_steps)))
        eps = 1e-5
        bumped = dW.copy()
        bumped[k, 0] += eps
        xs = wl.integrate_increments(m, gridfine, bumped)
        fd = (xs[jt, 0] - tr.states[jt, 0]) / eps
        J = wl.propagator(fl, gridfine.nodes[k + 1], gridfine.nodes[jt])[0, 0]
        worst = max(worst, abs(fd - J))
print(f"max |FD - J| = {worst:.3e}", flush=True)

banner("F: density identity per 1D catalog target")
for name, m in [("gaussian_m1", wl.make_gaussian(np.array([1.0]), np.eye(1))),
                ("truncated_s1", wl.make_truncated_gaussian(1.0)),
                ("truncated_s2", wl.make_truncated_gaussian(2.0)),
                ("uniform01", wl.make_uniform_interval(1.0)),
                ("mixture_R1", wl.make_gaussian_mixture(wl.MixtureSpec(
                    atoms=np.array([[1.0], [-1.0]]),
                    weights=np.array([0.5, 0.5]))))]:
    tr = wl.simulate_path(m, grid9, seed=wl.path_seed(606, 0))
    diag = wl.localization_diagnostics(m, tr)
    print(f"{name}: density identity sup err = "
          f"{diag.density_identity_error:.3e}", flush=True)

banner("G: endpoint eps -> eps/10 reported-norm stability")
for name, m, g in cases[:3]:
    ge = wl.geometric_grid(rho=0.9, eps_end=1e-5)
    e1 = wl.simulate_ensemble(m, grid9, n_paths=400, master_seed=707)
    e2 = wl.simulate_ensemble(m, ge, n_paths=400, master_seed=707)
    f1 = wl.ensemble_flow(m, e1)
    f2 = wl.ensemble_flow(m, e2)
    a, b = np.mean(f1.norms_final), np.mean(f2.norms_final)
    print(f"{name}: mean|DX1| {a:.6f} -> {b:.6f} rel change "
          f"{abs(b-a)/a:.2e}", flush=True)

banner("H: cube products d in {1,2,4,8} moment estimates at 1e4")
for d in (1, 2, 4, 8):
    m = wl.make_uniform_cube(1.0, d)
    e = wl.simulate_ensemble(m, grid9, n_paths=10_000, master_seed=808)
    f = wl.ensemble_flow(m, e)
    me = wl.moment_estimate(f, 1)
    print(f"d={d}: E|DX1|^2={me.value:.5f} relSE={me.standard_error/me.value:.4f} "
          f"max={np.max(f.norms_final**2):.4f}", flush=True)

banner("I: Gronwall boundary continuity kappa S^2 -> 1")
S = 1.3
worst = 0.0
for t in np.linspace(0.0, 1.0, 50):
    lo = wl.theta_profile((1.0 - 1e-6) / S**2, S)
    hi = wl.theta_profile((1.0 + 1e-6) / S**2, S)
    a = wl.gronwall_quadrature(lo, float(t))
    b = wl.gronwall_quadrature(hi, float(t))
    worst = max(worst, abs(a - b))
print(f"max |F_lt - F_ge| across boundary: {worst:.3e}")
print("constant_sq jump:",
      abs(wl.theta_profile((1.0 - 1e-6) / S**2, S).constant_sq
          - wl.theta_profile((1.0 + 1e-6) / S**2, S).constant_sq), flush=True)

banner("J: closed vs quadrature, 50 times per regime")
profiles = [wl.theta_profile(2.0), wl.theta_profile(1.5, 4.0),
            wl.theta_profile(0.0, 1.0), wl.theta_profile(0.5, 1.0),
            wl.mixture_profile(1.0), wl.mixture_profile(0.3)]
import warnings
for p in profiles:
    worst = 0.0
    lo_t = p.switch_time if p.switch_time else 0.0
    for t in np.linspace(max(lo_t, 1e-3), 1.0, 50):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            c = wl.gronwall_integral(p, float(t))
        q = wl.gronwall_quadrature(p, float(t))
        worst = max(worst, abs(c - q) / max(abs(q), 1e-300))
    tag = f"{p.regime}(k={p.kappa},S={p.S},R={p.radius})"
    print(f"{tag}: max rel diff = {worst:.3e}", flush=True)

print("\nDONE", flush=True)
