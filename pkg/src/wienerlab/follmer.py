"""Simulation of the entropic drift process carrying gamma_d to the target.

The process solves dX_t = v(t, X_t) dt + dB_t with X_0 = 0, where v is the
pinned-posterior drift from :mod:`wienerlab.posterior`; at time one its law
is the target measure.  Discretization uses Euler steps on a grid refined
toward t = 1 (the drift Lipschitz constant grows like 1/(1-t)), and the
final hop from the last interior node t_K = 1 - eps to t = 1 is not an Euler
step at all: the endpoint is drawn exactly from the pinned posterior at
(t_K, X_{t_K}) whenever the target admits a transform of standard normals
(all closed-form targets), by rejection from the pin Gaussian for uniform
balls, and by a deterministic drift step otherwise.

Every path owns a counter-derived RNG stream, and each path consumes its
stream in a fixed order (step increments, then the endpoint block, then any
rejection draws), so ensembles are reproducible bit for bit regardless of
how the paths are chunked into batches.

Diagnostics cover the three identities the construction rests on: the
endpoint law equals the target (KS / moment checks), the relative entropy
of the target equals the expected time-integral of |v|^2/2, and the
conditional law of the endpoint given the path up to t is the pinned
posterior at (t, X_t), whose barycenter is a martingale.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .measures import TargetMeasure
from .posterior import (
    batched_moments,
    drift,
    log_heat_semigroup,
    posterior_moments,
    posterior_normal_columns,
    sample_posterior,
)

__all__ = [
    "TimeGrid",
    "Trajectory",
    "EnsembleResult",
    "EndpointReport",
    "EntropyReport",
    "LocalizationDiagnostics",
    "MartingaleReport",
    "geometric_grid",
    "uniform_grid",
    "path_seed",
    "simulate_path",
    "simulate_ensemble",
    "integrate_increments",
    "endpoint_distribution_check",
    "relative_entropy",
    "entropy_identity_check",
    "localization_diagnostics",
    "barycenter_martingale_check",
]

_EXACT_ENDPOINT_KINDS = frozenset(
    {"gaussian", "gaussian_mixture", "truncated_gaussian",
     "uniform_interval", "uniform_cube"})
_REJECTION_CAP = 1000
MAX_FAILED_FRACTION = 1e-3


# ---------------------------------------------------------------------------
# Time grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing nodes t_0 = 0 < ... < t_K = 1 - endpoint_eps."""

    nodes: np.ndarray
    endpoint_eps: float
    refinement: str

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at t = 0")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must increase strictly")
        if not 0.0 < self.endpoint_eps < 1.0:
            raise ValueError("endpoint_eps must lie in (0, 1)")
        if abs((1.0 - nodes[-1]) - self.endpoint_eps) > 1e-12:
            raise ValueError("last node must equal 1 - endpoint_eps")
        if self.refinement not in ("uniform", "geometric"):
            raise ValueError(f"unknown refinement {self.refinement!r}")
        if self.refinement == "geometric":
            ratios = (1.0 - nodes[1:]) / (1.0 - nodes[:-1])
            if np.max(np.abs(ratios - ratios[0])) > 1e-9:
                raise ValueError("geometric grid has non-constant ratio")

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)


def geometric_grid(rho: float = 0.9, eps_end: float = 1e-4) -> TimeGrid:
    """Grid with 1 - t_{k+1} = rho_eff (1 - t_k) and t_K = 1 - eps_end.

    The ratio is adjusted to the nearest value for which an integer number
    of steps lands exactly on 1 - eps_end; it differs from the requested
    rho by less than one percent for the default parameters.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if not 0.0 < eps_end < 1.0:
        raise ValueError("eps_end must lie in (0, 1)")
    K = max(1, math.ceil(math.log(eps_end) / math.log(rho)))
    rho_eff = eps_end ** (1.0 / K)
    taus = rho_eff ** np.arange(K + 1)
    taus[-1] = eps_end
    nodes = 1.0 - taus
    nodes[0] = 0.0
    return TimeGrid(nodes=nodes, endpoint_eps=eps_end, refinement="geometric")


def uniform_grid(n_steps: int, eps_end: float = 1e-4) -> TimeGrid:
    """Equispaced grid on [0, 1 - eps_end]."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    nodes = np.linspace(0.0, 1.0 - eps_end, n_steps + 1)
    return TimeGrid(nodes=nodes, endpoint_eps=eps_end, refinement="uniform")


# ---------------------------------------------------------------------------
# Trajectories and ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray
    endpoint: np.ndarray
    brownian_increments: np.ndarray
    seed: int
    failed: bool = False
    failure_time: float | None = None


def path_seed(master_seed: int, index: int) -> int:
    """64-bit stream seed for path `index`, derived from the master seed."""
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class EnsembleResult:
    """Simulated paths, stored columnwise; indexable as a trajectory sequence."""

    measure: TargetMeasure
    grid: TimeGrid
    master_seed: int
    seeds: np.ndarray
    states: np.ndarray
    endpoints: np.ndarray
    failed: np.ndarray
    failure_times: np.ndarray
    speed_sq_mean: np.ndarray
    path_entropy: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.endpoints.shape[0]

    @property
    def failed_fraction(self) -> float:
        return float(np.mean(self.failed))

    def __len__(self) -> int:
        return self.n_paths

    def __getitem__(self, i: int) -> Trajectory:
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i = int(i) % len(self)
        seed = int(self.seeds[i])
        K, d = self.grid.n_steps, self.measure.dim
        # increments are a pure function of the path seed; re-derive them
        gen = np.random.Generator(np.random.PCG64(seed))
        incr = np.sqrt(self.grid.dt)[:, None] * gen.standard_normal((K, d))
        ft = float(self.failure_times[i])
        return Trajectory(
            grid=self.grid, states=self.states[i].copy(),
            endpoint=self.endpoints[i].copy(), brownian_increments=incr,
            seed=seed, failed=bool(self.failed[i]),
            failure_time=None if math.isnan(ft) else ft)


def _entropy_weights(grid: TimeGrid) -> np.ndarray:
    """Node weights whose dot with |v|^2/2 integrates the speed over [0, 1]:
    trapezoid on the interior nodes plus a rectangle on [t_K, 1]."""
    dt = grid.dt
    w = np.zeros(grid.nodes.size)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    w[-1] += grid.endpoint_eps
    return w


def _integrate(measure, grid, increments):
    """Euler integration driven by given increments (n, K, d); returns the
    states (n, K+1, d), squared drift speeds at all nodes (n, K+1), the
    survival mask, and per-path failure times."""
    n, K, d = increments.shape
    nodes = grid.nodes
    dt = grid.dt
    states = np.empty((n, K + 1, d))
    speed_sq = np.full((n, K + 1), np.nan)
    alive = np.ones(n, dtype=bool)
    failure_times = np.full(n, np.nan)
    X = np.zeros((n, d))
    states[:, 0] = X
    for k in range(K + 1):
        V = np.atleast_2d(drift(measure, nodes[k], X))
        bad = alive & ~np.isfinite(V).all(axis=1)
        if bad.any():
            failure_times[bad] = nodes[k]
            alive &= ~bad
        V = np.where(alive[:, None], V, 0.0)
        speed_sq[:, k] = np.einsum("ij,ij->i", V, V)
        if k == K:
            break
        step = V * dt[k] + increments[:, k, :]
        X = np.where(alive[:, None], X + step, X)
        states[:, k + 1] = X
    return states, speed_sq, alive, failure_times, V


def _draw_endpoints(measure, grid, X, V_last, alive, gens, end_normals):
    tK = grid.nodes[-1]
    eps = grid.endpoint_eps
    endpoints = X.copy()
    if measure.kind in _EXACT_ENDPOINT_KINDS:
        Y = sample_posterior(measure, tK, X, end_normals)
        endpoints[alive] = Y[alive]
    elif measure.kind == "uniform_ball":
        root = math.sqrt(eps)
        for i in np.flatnonzero(alive):
            y = None
            for _ in range(_REJECTION_CAP):
                cand = X[i] + root * gens[i].standard_normal(X.shape[1])
                if measure.support_contains(cand):
                    y = cand
                    break
            endpoints[i] = y if y is not None else X[i] + V_last[i] * eps
    else:
        endpoints[alive] = (X + V_last * eps)[alive]
    return endpoints


def _simulate_block(measure, grid, seeds):
    K, d = grid.n_steps, measure.dim
    n = len(seeds)
    gens = [np.random.Generator(np.random.PCG64(int(s))) for s in seeds]
    cols = (posterior_normal_columns(measure)
            if measure.kind in _EXACT_ENDPOINT_KINDS else 0)
    units = np.empty((n, K, d))
    end_normals = np.empty((n, cols)) if cols else None
    for i, gen in enumerate(gens):
        units[i] = gen.standard_normal((K, d))
        if cols:
            end_normals[i] = gen.standard_normal(cols)
    increments = np.sqrt(grid.dt)[None, :, None] * units
    states, speed_sq, alive, failure_times, V_last = _integrate(
        measure, grid, increments)
    X = states[:, -1, :]
    endpoints = _draw_endpoints(measure, grid, X, V_last, alive, gens,
                                end_normals)
    return states, endpoints, speed_sq, alive, failure_times, increments


def simulate_path(measure: TargetMeasure, grid: TimeGrid,
                  seed: int) -> Trajectory:
    """One Euler path of the drift SDE from the given 64-bit stream seed."""
    states, endpoints, _, alive, ftimes, incr = _simulate_block(
        measure, grid, [seed])
    ft = float(ftimes[0])
    return Trajectory(
        grid=grid, states=states[0], endpoint=endpoints[0],
        brownian_increments=incr[0], seed=int(seed), failed=not alive[0],
        failure_time=None if math.isnan(ft) else ft)


def integrate_increments(measure: TargetMeasure, grid: TimeGrid,
                         increments: np.ndarray) -> np.ndarray:
    """States (K+1, d) of the Euler recursion driven by given increments
    (K, d); the endpoint hop is not taken.  Used by perturbation probes."""
    incr = np.asarray(increments, dtype=float)
    if incr.ndim == 1:
        incr = incr[:, None]
    states, _, alive, _, _ = _integrate(measure, grid, incr[None])
    if not alive[0]:
        raise ValueError("drift evaluation failed along the probe path")
    return states[0]


def _resolve_workers(workers) -> int:
    if workers is None:
        workers = os.environ.get("WIENERLAB_WORKERS", "1")
    workers = int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def simulate_ensemble(measure: TargetMeasure, grid: TimeGrid, n_paths: int,
                      master_seed: int, workers=None) -> EnsembleResult:
    """n_paths independent trajectories with per-path derived stream seeds.

    The worker count only sets the batch size of the vectorized sweep (a
    memory knob); results are identical bit for bit for any value.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    workers = _resolve_workers(workers)
    seeds = np.array([path_seed(master_seed, i) for i in range(n_paths)],
                     dtype=np.uint64)
    K, d = grid.n_steps, measure.dim
    states = np.empty((n_paths, K + 1, d))
    endpoints = np.empty((n_paths, d))
    speed_sq = np.empty((n_paths, K + 1))
    alive = np.empty(n_paths, dtype=bool)
    failure_times = np.empty(n_paths)
    chunk = -(-n_paths // workers)
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        (states[lo:hi], endpoints[lo:hi], speed_sq[lo:hi], alive[lo:hi],
         failure_times[lo:hi], _) = _simulate_block(measure, grid,
                                                    seeds[lo:hi])
    # statistics are reduced over the fully assembled arrays so that the
    # chunking above cannot influence a single bit of the output
    w = _entropy_weights(grid)
    path_entropy = 0.5 * np.einsum("nk,k->n", speed_sq, w)
    ok = alive
    profile = (np.mean(speed_sq[ok], axis=0) if ok.any()
               else np.full(K + 1, np.nan))
    return EnsembleResult(
        measure=measure, grid=grid, master_seed=int(master_seed),
        seeds=seeds, states=states, endpoints=endpoints, failed=~alive,
        failure_times=failure_times, speed_sq_mean=profile,
        path_entropy=path_entropy)


# ---------------------------------------------------------------------------
# Endpoint law
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EndpointReport:
    statistic: float
    threshold: float
    kind: str
    n_paths: int
    failed_fraction: float
    passed: bool
    detail: str = ""


def endpoint_distribution_check(ensemble: EnsembleResult,
                                threshold: float = 0.02,
                                z_threshold: float = 4.0) -> EndpointReport:
    """Compare the simulated endpoint law with the target: KS statistic
    against the analytic CDF in 1D, first two moments against the exact
    sampler otherwise."""
    measure = ensemble.measure
    ok = ~ensemble.failed
    pts = ensemble.endpoints[ok]
    frac = ensemble.failed_fraction
    if measure.dim == 1 and measure.cdf is not None:
        stat = float(stats.kstest(pts[:, 0], measure.cdf).statistic)
        passed = stat < threshold and frac <= MAX_FAILED_FRACTION
        return EndpointReport(statistic=stat, threshold=threshold, kind="ks",
                              n_paths=int(ok.sum()), failed_fraction=frac,
                              passed=passed)
    if measure.sampler is None:
        raise ValueError("target has neither a 1D CDF nor an exact sampler")
    rng = np.random.default_rng(path_seed(ensemble.master_seed, len(ensemble)))
    ref = measure.sampler(len(pts), rng)
    n = pts.shape[0]
    se_mean = np.sqrt((pts.var(axis=0) + ref.var(axis=0)) / n)
    z_mean = np.abs(pts.mean(axis=0) - ref.mean(axis=0)) / se_mean
    se_var = np.sqrt(2.0 / (n - 1)) * (pts.var(axis=0) + ref.var(axis=0)) / 2
    z_var = np.abs(pts.var(axis=0) - ref.var(axis=0)) / se_var
    stat = float(max(z_mean.max(), z_var.max()))
    passed = stat < z_threshold and frac <= MAX_FAILED_FRACTION
    return EndpointReport(statistic=stat, threshold=z_threshold,
                          kind="moment_z", n_paths=n, failed_fraction=frac,
                          passed=passed,
                          detail="max z-score over means and variances")


# ---------------------------------------------------------------------------
# Entropy identity
# ---------------------------------------------------------------------------

def _gaussian_relative_entropy(measure: TargetMeasure) -> float:
    a = np.asarray(measure.params["mean"], dtype=float)
    cov = np.asarray(measure.params["cov"], dtype=float)
    d = measure.dim
    sign, logdet = np.linalg.slogdet(cov)
    return 0.5 * (np.trace(cov) - d - logdet + float(a @ a))


def _quad_relative_entropy_1d(measure: TargetMeasure, lo, hi) -> float:
    def integrand(y):
        arr = np.array([y])
        lf = float(measure.log_f(arr))
        if not np.isfinite(lf):
            return 0.0
        dens = math.exp(lf - 0.5 * y * y - 0.5 * math.log(2.0 * math.pi))
        return dens * lf

    val, _ = integrate.quad(integrand, lo, hi, limit=400,
                            epsabs=1e-12, epsrel=1e-11)
    return val


def relative_entropy(measure: TargetMeasure) -> float:
    """H(p | gamma_d) = E_p[log f], by closed form or quadrature."""
    kind = measure.kind
    if kind == "gaussian":
        return _gaussian_relative_entropy(measure)
    if kind == "uniform_cube":
        side = measure.params["side"]
        one_d = _quad_relative_entropy_1d_uniform(side)
        return measure.dim * one_d
    if measure.dim == 1:
        if kind == "uniform_interval":
            return _quad_relative_entropy_1d(measure, measure.params["lo"],
                                             measure.params["hi"])
        if kind == "truncated_gaussian":
            return _quad_relative_entropy_1d(measure, 0.0, 40.0)
        return _quad_relative_entropy_1d(measure, -40.0, 40.0)
    if kind == "gaussian_mixture" and measure.dim == 2:
        span = measure.params["spec"].radius + 12.0

        def integrand(y1, y0):
            arr = np.array([[y0, y1]])
            lf = float(measure.log_f(arr)[0])
            dens = math.exp(lf - 0.5 * (y0 * y0 + y1 * y1)
                            - math.log(2.0 * math.pi))
            return dens * lf

        val, _ = integrate.dblquad(integrand, -span, span, -span, span,
                                   epsabs=1e-10, epsrel=1e-9)
        return val
    raise ValueError(
        f"relative entropy of kind {kind!r} in dimension {measure.dim} "
        "is not quadrature-computable here")


def _quad_relative_entropy_1d_uniform(side: float) -> float:
    # per-axis uniform factor on [-side/2, side/2]: log f is quadratic there
    lo, hi = -0.5 * side, 0.5 * side

    def integrand(y):
        lf = 0.5 * y * y + 0.5 * math.log(2.0 * math.pi) - math.log(side)
        return lf / side

    val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12)
    return val


@dataclass(frozen=True)
class EntropyReport:
    h_quadrature: float
    h_montecarlo: float
    mc_standard_error: float
    relative_error: float


def entropy_identity_check(ensemble: EnsembleResult) -> EntropyReport:
    """Relative entropy vs the path integral of |v|^2/2 along the ensemble."""
    h_quad = relative_entropy(ensemble.measure)
    ok = ~ensemble.failed
    pe = ensemble.path_entropy[ok]
    h_mc = float(np.mean(pe))
    se = float(np.std(pe) / math.sqrt(pe.size))
    scale = max(abs(h_quad), 1e-15)
    rel = abs(h_mc - h_quad) / scale if h_quad != 0.0 or h_mc != 0.0 else 0.0
    return EntropyReport(h_quadrature=h_quad, h_montecarlo=h_mc,
                         mc_standard_error=se, relative_error=rel)


# ---------------------------------------------------------------------------
# Localization diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalizationDiagnostics:
    times: np.ndarray
    barycenters: np.ndarray
    covariances: np.ndarray
    gamma_q: np.ndarray
    q: float
    density_identity_error: float | None
    semigroup_positive: bool


def _default_diag_indices(grid: TimeGrid, count: int = 12) -> np.ndarray:
    return np.unique(np.linspace(0, grid.n_steps, count).round().astype(int))


def _density_identity_error(measure, t, x, mean, cov, log_mass,
                            n_grid=8193) -> float:
    """Sup distance, relative to the density peak, between the conditional
    endpoint density normalized two ways: by the closed-form pinned mass and
    by direct quadrature of the unnormalized values on the grid."""
    tau = 1.0 - t
    sd = math.sqrt(max(float(cov[0, 0]), 1e-300))
    lo = mean[0] - 16.0 * sd
    hi = mean[0] + 16.0 * sd
    p_lo = measure.params.get("lo")
    p_hi = measure.params.get("hi")
    if measure.kind == "truncated_gaussian":
        p_lo = 0.0
    if p_lo is not None:
        lo = max(lo, p_lo)
    if p_hi is not None:
        hi = min(hi, p_hi)
    y = np.linspace(lo, hi, n_grid)
    log_num = (np.asarray(measure.log_f(y), dtype=float)
               - 0.5 * (y - x[0]) ** 2 / tau
               - 0.5 * math.log(2.0 * math.pi * tau))
    shift = np.max(log_num)
    vals = np.exp(log_num - shift)
    log_mass_grid = shift + math.log(
        integrate.simpson(vals, x=y))
    side_closed = np.exp(log_num - log_mass)
    side_grid = np.exp(log_num - log_mass_grid)
    return float(np.max(np.abs(side_closed - side_grid))
                 / np.max(side_closed))


def localization_diagnostics(measure: TargetMeasure, trajectory: Trajectory,
                             q: float = 2.0,
                             times=None) -> LocalizationDiagnostics:
    """Conditional-law barycenter a_t, covariance K_t, and Gamma_t =
    Tr[K_t^q] along one path, with the 1D density-identity cross-check."""
    if trajectory.failed:
        raise ValueError("trajectory failed; diagnostics need a full path")
    grid = trajectory.grid
    if times is None:
        idx = _default_diag_indices(grid)
    else:
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(grid.nodes, times)
        if np.max(np.abs(grid.nodes[idx] - times)) > 1e-12:
            raise ValueError("times must be grid nodes")
    sel_t = grid.nodes[idx]
    X = trajectory.states[idx]
    d = measure.dim
    bary = np.empty((idx.size, d))
    covs = np.empty((idx.size, d, d))
    gam = np.empty(idx.size)
    dens_err = 0.0 if d == 1 else None
    positive = True
    for j, (t, x) in enumerate(zip(sel_t, X)):
        mean, cov, log_mass, _ = batched_moments(measure, t, x[None, :])
        bary[j] = mean[0]
        covs[j] = cov[0]
        eig = np.clip(np.linalg.eigvalsh(covs[j]), 0.0, None)
        gam[j] = float(np.sum(eig ** q))
        lp = float(np.atleast_1d(
            log_heat_semigroup(measure, 1.0 - t, x[None, :]))[0])
        positive = positive and np.isfinite(lp)
        if d == 1:
            err = _density_identity_error(measure, t, x, mean[0], cov[0],
                                          float(log_mass[0]))
            dens_err = max(dens_err, err)
    return LocalizationDiagnostics(
        times=sel_t, barycenters=bary, covariances=covs, gamma_q=gam,
        q=float(q), density_identity_error=dens_err,
        semigroup_positive=positive)


@dataclass(frozen=True)
class MartingaleReport:
    times: np.ndarray
    barycenter_means: np.ndarray
    standard_errors: np.ndarray
    reference: np.ndarray
    max_z: float
    passed: bool


def barycenter_martingale_check(ensemble: EnsembleResult, times=None,
                                max_paths=None) -> MartingaleReport:
    """E[a_t] must be constant in t: compare the ensemble average of the
    conditional barycenter at each node against its exact t=0 value."""
    measure = ensemble.measure
    grid = ensemble.grid
    if times is None:
        idx = _default_diag_indices(grid, count=8)
    else:
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(grid.nodes, times)
        if np.max(np.abs(grid.nodes[idx] - times)) > 1e-12:
            raise ValueError("times must be grid nodes")
    ok = np.flatnonzero(~ensemble.failed)
    if max_paths is not None:
        ok = ok[:max_paths]
    d = measure.dim
    ref = posterior_moments(measure, 0.0, np.zeros(d)).mean
    means = np.empty((idx.size, d))
    ses = np.empty((idx.size, d))
    for j, k in enumerate(idx):
        t = grid.nodes[k]
        mean, _, _, _ = batched_moments(measure, t, ensemble.states[ok, k, :],
                                        need_cov=False)
        means[j] = mean.mean(axis=0)
        ses[j] = mean.std(axis=0) / math.sqrt(ok.size)
    z = np.abs(means - ref[None, :]) / np.maximum(ses, 1e-300)
    # the t=0 row is deterministic (every path starts at the origin)
    z[idx == 0] = 0.0
    max_z = float(z.max())
    return MartingaleReport(times=grid.nodes[idx], barycenter_means=means,
                            standard_errors=ses, reference=ref,
                            max_z=max_z, passed=max_z <= 3.0)
