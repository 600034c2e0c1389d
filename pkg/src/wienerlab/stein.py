"""Stein kernels built from the derivative of the transport map.

For a centered observable F = chi(X_1) of the drift process endpoint, the
matrix-valued map

    tau(y) = E[(DF, -DL^{-1}F)_H | F = y]

is a Stein kernel for the law q of F: E[<grad eta(Y), tau(Y)>_HS] =
E[<eta(Y), Y>] for smooth eta.  Here D is the derivative with respect to
the driving noise, L the Ornstein-Uhlenbeck operator on noise space, and
(.,.)_H the time-integrated inner product of derivative rows.

Estimation is nested Monte Carlo:

* outer paths give F and the derivative rows D_rF = Dchi(X_1) J(r, 1),
  with J the propagators of the pathwise derivative flow;
* -DL^{-1}F = int_0^inf e^{-s} P_s(DF) ds, with P_s the noise-space
  Ornstein-Uhlenbeck semigroup; each P_s(D_rF) is a Mehler average, the
  mean of D_rF over re-simulated paths driven by e^{-s} times the outer
  noise plus sqrt(1-e^{-2s}) fresh noise (every standard-normal input of
  the simulation is mixed, step units and endpoint columns alike);
* the s-integral uses Gauss-Legendre in u = e^{-s} on [e^{-cutoff}, 1]
  plus the s = infinity limit (pure fresh noise) carrying the remaining
  weight e^{-cutoff}, so constants integrate exactly;
* the conditioning on F is quantile binning with an occupancy floor.

The Stein discrepancy E|tau - Id|^2_HS bounds the squared Wasserstein
distance of q from the standard Gaussian, and for isotropic q it yields a
central limit theorem rate: W_2^2(q_n, gamma_k) <= 2(E|tau|^2_HS + k)/n
for standardized sums of n i.i.d. draws.  ``clt_rate_check`` verifies the
bound and the 1/n trend by quantile coupling, growing the Monte Carlo
budget proportionally with n so the coupling resolution keeps pace with
the shrinking distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .follmer import (
    TimeGrid,
    _EXACT_ENDPOINT_KINDS,
    _integrate,
    geometric_grid,
    path_seed,
    simulate_ensemble,
)
from .inequalities import TestFunctionFamily, _bootstrap_chunks
from .malliavin import MAX_BISECTION_DEPTH, STIFF_STEP_LIMIT, _expm_sym
from .measures import TargetMeasure
from .posterior import (
    drift_jacobian,
    posterior_normal_columns,
    sample_posterior,
)

__all__ = [
    "ChiMap",
    "OUQuadrature",
    "SteinKernelEstimate",
    "SteinIdentityRow",
    "SteinIdentityReport",
    "CLTRateRow",
    "CLTRateReport",
    "chi_coordinates",
    "chi_square_first",
    "ou_integration_rule",
    "stein_kernel_estimate",
    "stein_identity_check",
    "stein_discrepancy",
    "clt_rate_check",
    "w2_sq_to_standard_gaussian",
]

MAX_INNER_FAILURE_RATE = 0.01
MIN_BIN_OCCUPANCY = 200


# ---------------------------------------------------------------------------
# Observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChiMap:
    """Continuously differentiable observable R^d -> R^k with its Jacobian.

    ``value`` maps points (n, d) to (n, k); ``jacobian`` maps (n, d) to
    (n, k, d).  The kernel estimator centers the values empirically, so the
    observable itself need not be exactly centered under the target.
    """

    label: str
    out_dim: int
    value: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]


def chi_coordinates(d: int) -> ChiMap:
    """The identity observable x -> x (k = d)."""

    def value(X):
        return np.asarray(X, dtype=float).copy()

    def jacobian(X):
        X = np.asarray(X, dtype=float)
        return np.broadcast_to(np.eye(d), (X.shape[0], d, d)).copy()

    return ChiMap(label="coordinates", out_dim=d, value=value,
                  jacobian=jacobian)


def chi_square_first(d: int = 1) -> ChiMap:
    """The scalar observable x -> x_1^2 - 1 (a diagonal quadratic slice)."""

    def value(X):
        X = np.asarray(X, dtype=float)
        return (X[:, 0] ** 2 - 1.0)[:, None]

    def jacobian(X):
        X = np.asarray(X, dtype=float)
        J = np.zeros((X.shape[0], 1, d))
        J[:, 0, 0] = 2.0 * X[:, 0]
        return J

    return ChiMap(label="square_first", out_dim=1, value=value,
                  jacobian=jacobian)


# ---------------------------------------------------------------------------
# Quadrature over the semigroup time
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OUQuadrature:
    """Rule for int_0^inf e^{-s} P_s ds after substituting u = e^{-s}.

    ``mix`` holds the Mehler mixing coefficients e^{-s} at the nodes, with
    a final entry 0.0 for the s = infinity limit; ``weights`` are the
    matching quadrature weights, whose total is exactly the full mass 1.
    ``tail_weight`` records how much of that mass sits on the limit node.
    """

    s_values: np.ndarray
    mix: np.ndarray
    weights: np.ndarray
    tail_weight: float

    @property
    def n_nodes(self) -> int:
        return self.mix.size


def ou_integration_rule(n_nodes: int = 16,
                        cutoff: float = 8.0) -> OUQuadrature:
    """Gauss-Legendre in u = e^{-s} on [e^{-cutoff}, 1], plus the limit node.

    Replacing the tail beyond the cutoff with the fully mixed limit leaves
    an error of order e^{-2 cutoff}, far below the Monte Carlo noise, and
    makes the rule integrate constants exactly.
    """
    if n_nodes < 2:
        raise ValueError("n_nodes must be >= 2")
    if cutoff <= 0.0:
        raise ValueError("cutoff must be positive")
    offs, wts = np.polynomial.legendre.leggauss(int(n_nodes))
    lo = math.exp(-cutoff)
    half = 0.5 * (1.0 - lo)
    u = 0.5 * (1.0 + lo) + half * offs
    w = half * wts
    mix = np.append(u, 0.0)
    weights = np.append(w, lo)
    s_values = np.append(-np.log(u), np.inf)
    return OUQuadrature(s_values=s_values, mix=mix, weights=weights,
                        tail_weight=lo)


# ---------------------------------------------------------------------------
# Derivative rows along batches of paths
# ---------------------------------------------------------------------------

def _factor_step(measure, t0, t1, X0, X1, depth):
    """Per-step transition factors of the derivative flow on a batch.

    Mirrors the Gram recursion step exactly (midpoint exponential, the
    same stiffness threshold, bisection on interpolated states), so the
    factors agree bit for bit with the stored flow factors.
    """
    dt = t1 - t0
    t_mid = 0.5 * (t0 + t1)
    X_mid = 0.5 * (X0 + X1)
    M = drift_jacobian(measure, t_mid, X_mid)
    ok = np.isfinite(M).all(axis=(1, 2))
    M = np.where(ok[:, None, None], M, 0.0)
    A, lam_top = _expm_sym(M, dt)
    if depth < MAX_BISECTION_DEPTH:
        stiff = ok & (lam_top * dt > STIFF_STEP_LIMIT)
        if stiff.any():
            idx = np.flatnonzero(stiff)
            A1, ok1 = _factor_step(measure, t0, t_mid, X0[idx], X_mid[idx],
                                   depth + 1)
            A2, ok2 = _factor_step(measure, t_mid, t1, X_mid[idx], X1[idx],
                                   depth + 1)
            A[idx] = A2 @ A1
            ok[idx] &= ok1 & ok2
    return A, ok


def _derivative_rows(measure, times, pts, jac_end):
    """D_rF = Dchi(X_1) J(r, 1) at every node r, for a batch of paths.

    ``pts`` stacks the node states and the endpoint, (B, K+2, d);
    ``jac_end`` is the observable Jacobian at the endpoints, (B, k, d).
    Returns the rows (B, K+1, k, d) and the per-path success mask.
    """
    B, n_pts, d = pts.shape
    n_steps = n_pts - 1
    factors = np.empty((B, n_steps, d, d))
    alive = np.ones(B, dtype=bool)
    for j in range(n_steps):
        A, ok = _factor_step(measure, times[j], times[j + 1],
                             pts[:, j], pts[:, j + 1], 0)
        factors[:, j] = A
        alive &= ok
    rows = np.empty((B, n_steps, jac_end.shape[1], d))
    a = jac_end
    for j in range(n_steps - 1, -1, -1):
        a = a @ factors[:, j]
        rows[:, j] = a
    return rows, alive


def _fresh_seed(master_seed: int, outer_index: int) -> int:
    """Stream seed for the fresh inner noise of one outer path; the second
    spawn-key slot keeps it disjoint from the outer path streams."""
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(outer_index), 1))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Quantile binning with an occupancy floor
# ---------------------------------------------------------------------------

def _quantile_partition(points, n_bins, min_occupancy):
    """Quantile cells (marginal products for k = 2) merged in raveled order
    until every bin holds at least ``min_occupancy`` points.

    Returns the per-axis inner edges, the raveled-cell-to-bin map, and the
    bin index of every point.
    """
    N, k = points.shape
    if N < 2 * min_occupancy:
        raise ValueError("not enough surviving outer paths for the "
                         "occupancy floor")
    if k == 1:
        per_axis = [int(n_bins)]
    else:
        side = max(1, int(round(math.sqrt(n_bins))))
        per_axis = [side, side]
    axis_edges = []
    cell = np.zeros(N, dtype=int)
    for a, nb in enumerate(per_axis):
        qs = np.linspace(0.0, 1.0, nb + 1)[1:-1]
        edges = np.quantile(points[:, a], qs)
        axis_edges.append(edges)
        cell = cell * nb + np.searchsorted(edges, points[:, a], side="right")
    n_cells = int(np.prod(per_axis))
    counts = np.bincount(cell, minlength=n_cells)
    cell_map = np.empty(n_cells, dtype=int)
    bin_id = 0
    acc = 0
    for c in range(n_cells):
        cell_map[c] = bin_id
        acc += counts[c]
        if acc >= min_occupancy:
            bin_id += 1
            acc = 0
    if acc > 0:
        # the trailing cells came up short; fold them into the last bin
        if bin_id == 0:
            bin_id = 1
        else:
            cell_map[cell_map == bin_id] = bin_id - 1
    return tuple(axis_edges), cell_map, cell_map[cell]


def _cells_of(axis_edges, points):
    cell = np.zeros(points.shape[0], dtype=int)
    for a, edges in enumerate(axis_edges):
        nb = edges.size + 1
        cell = cell * nb + np.searchsorted(edges, points[:, a], side="right")
    return cell


def _reduce_bins(bin_of, points, values, n_bins):
    k = points.shape[1]
    counts = np.bincount(bin_of, minlength=n_bins)
    tau = np.empty((n_bins, k, k))
    se = np.empty((n_bins, k, k))
    centers = np.empty((n_bins, k))
    for b in range(n_bins):
        sel = bin_of == b
        v = values[sel]
        tau[b] = v.mean(axis=0)
        se[b] = v.std(axis=0, ddof=1) / math.sqrt(v.shape[0])
        centers[b] = points[sel].mean(axis=0)
    return counts, tau, se, centers


# ---------------------------------------------------------------------------
# The kernel estimate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SteinKernelEstimate:
    """Binned conditional expectation of the kernel values.

    ``outer_points`` (centered observable values) and ``outer_values`` are
    kept so that reports can re-bin the same run when probing sensitivity
    to the bin count.
    """

    out_dim: int
    dim: int
    axis_edges: tuple
    cell_map: np.ndarray
    counts: np.ndarray
    tau_values: np.ndarray
    tau_se: np.ndarray
    bin_centers: np.ndarray
    discrepancy_sq: float
    hs_sq_moment: float
    center_shift: np.ndarray
    tail_weight: float
    n_outer: int
    n_inner: int
    failed_fraction: float
    outer_points: np.ndarray
    outer_values: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.counts.size

    def evaluate(self, points) -> np.ndarray:
        """Kernel matrix of the bin containing each point (m, k, k); the
        points are in centered coordinates (raw values minus
        ``center_shift``)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[1] != self.out_dim:
            raise ValueError(f"points must have {self.out_dim} columns")
        bins = self.cell_map[_cells_of(self.axis_edges, pts)]
        return self.tau_values[bins]


def _weighted_hs_sq(tau, counts, shift_identity):
    w = counts / counts.sum()
    dev = tau - np.eye(tau.shape[1]) if shift_identity else tau
    return float(np.sum(w * np.sum(dev * dev, axis=(1, 2))))


def stein_kernel_estimate(measure: TargetMeasure, chi: ChiMap,
                          n_outer: int = 5000, n_inner: int = 64,
                          s_grid: Optional[OUQuadrature] = None, *,
                          grid: Optional[TimeGrid] = None,
                          master_seed: int = 0, n_bins: int = 25,
                          min_occupancy: int = MIN_BIN_OCCUPANCY,
                          workers=None,
                          outer_block: Optional[int] = None
                          ) -> SteinKernelEstimate:
    """Nested Monte Carlo estimate of the kernel of q = chi(X_1).

    Outer paths supply the observable value and its derivative rows; for
    each semigroup node the rows are re-computed on mixed noise and
    averaged over ``n_inner`` re-simulations.  The pairing value of each
    outer path is binned by the (empirically centered) observable value.
    ``outer_block`` is a memory knob only: every reduction is per outer
    path, so the result is identical bit for bit for any block size.
    """
    d = measure.dim
    k = chi.out_dim
    if d > 2 or k > 2:
        raise ValueError("kernel estimation is limited to d <= 2 and k <= 2")
    if measure.kind not in _EXACT_ENDPOINT_KINDS:
        raise ValueError("kernel estimation needs a target whose endpoint "
                         "is a fixed transform of standard normals")
    if n_inner < 2:
        raise ValueError("n_inner must be >= 2")
    if grid is None:
        grid = geometric_grid()
    rule = s_grid if s_grid is not None else ou_integration_rule()
    if outer_block is None:
        outer_block = max(4, 32 // (d * k))

    ens = simulate_ensemble(measure, grid, n_outer, master_seed,
                            workers=workers)
    K = grid.n_steps
    nodes = grid.nodes
    times = np.append(nodes, 1.0)
    dts = np.append(grid.dt, grid.endpoint_eps)
    t_last = float(nodes[-1])
    cols = posterior_normal_columns(measure)
    S1 = rule.n_nodes
    coef = rule.mix
    msq = np.sqrt(1.0 - coef ** 2)

    endpoints = ens.endpoints
    outer_pts = np.concatenate([ens.states, endpoints[:, None, :]], axis=1)
    alive = ~ens.failed
    values = np.full((n_outer, k, k), np.nan)
    inner_failed = 0
    inner_total = 0

    for lo in range(0, n_outer, outer_block):
        hi = min(lo + outer_block, n_outer)
        B = hi - lo
        df_out, ok_out = _derivative_rows(measure, times, outer_pts[lo:hi],
                                          chi.jacobian(endpoints[lo:hi]))
        alive[lo:hi] &= ok_out

        units = np.empty((B, K, d))
        endn = np.empty((B, cols))
        fresh_units = np.empty((B, S1, n_inner, K, d))
        fresh_end = np.empty((B, S1, n_inner, cols))
        for bi, i in enumerate(range(lo, hi)):
            # the outer stream is re-read in simulation order; the fresh
            # stream is disjoint and belongs to this outer path alone, so
            # chunking cannot move a single draw
            g = np.random.Generator(np.random.PCG64(int(ens.seeds[i])))
            units[bi] = g.standard_normal((K, d))
            endn[bi] = g.standard_normal(cols)
            gf = np.random.Generator(
                np.random.PCG64(_fresh_seed(master_seed, i)))
            fresh_units[bi] = gf.standard_normal((S1, n_inner, K, d))
            fresh_end[bi] = gf.standard_normal((S1, n_inner, cols))

        c4 = coef[None, :, None, None, None]
        m4 = msq[None, :, None, None, None]
        mixed_units = c4 * units[:, None, None] + m4 * fresh_units
        mixed_end = (coef[None, :, None, None] * endn[:, None, None]
                     + msq[None, :, None, None] * fresh_end)
        R = B * S1 * n_inner
        incr = np.sqrt(grid.dt)[None, :, None] * mixed_units.reshape(R, K, d)
        states, _, ok_rows, _, _ = _integrate(measure, grid, incr)
        X_last = states[:, -1, :]
        ends = sample_posterior(measure, t_last, X_last,
                                mixed_end.reshape(R, cols))
        pts = np.concatenate([states, ends[:, None, :]], axis=1)
        df_in, ok_flow = _derivative_rows(measure, times, pts,
                                          chi.jacobian(ends))
        ok_rows &= ok_flow
        inner_failed += int((~ok_rows).sum())
        inner_total += int(ok_rows.size)

        df_in = df_in.reshape(B, S1, n_inner, K + 1, k, d)
        mask = ok_rows.reshape(B, S1, n_inner).astype(float)
        cnt = mask.sum(axis=2)
        sums = np.einsum("bsjrkd,bsj->bsrkd", df_in, mask)
        means = sums / np.maximum(cnt, 1.0)[..., None, None, None]
        semigroup = np.einsum("bsrkd,s->brkd", means, rule.weights)
        values[lo:hi] = np.einsum("brkd,brld,r->bkl", df_out, semigroup, dts)
        alive[lo:hi] &= (cnt > 0).all(axis=1)

    failure_rate = inner_failed / max(inner_total, 1)
    if failure_rate > MAX_INNER_FAILURE_RATE:
        raise RuntimeError(
            f"inner simulation failure rate {failure_rate:.2%} exceeds "
            f"{MAX_INNER_FAILURE_RATE:.0%}")

    ok = alive & np.isfinite(values).all(axis=(1, 2))
    F = chi.value(endpoints)[ok]
    vals = values[ok]
    shift = F.mean(axis=0)
    centered = F - shift
    axis_edges, cell_map, bin_of = _quantile_partition(
        centered, n_bins, min_occupancy)
    n_eff = int(cell_map.max()) + 1
    counts, tau, se, centers = _reduce_bins(bin_of, centered, vals, n_eff)
    return SteinKernelEstimate(
        out_dim=k, dim=d, axis_edges=axis_edges, cell_map=cell_map,
        counts=counts, tau_values=tau, tau_se=se, bin_centers=centers,
        discrepancy_sq=_weighted_hs_sq(tau, counts, shift_identity=True),
        hs_sq_moment=_weighted_hs_sq(tau, counts, shift_identity=False),
        center_shift=shift, tail_weight=rule.tail_weight,
        n_outer=n_outer, n_inner=n_inner,
        failed_fraction=float(1.0 - ok.mean()),
        outer_points=centered, outer_values=vals)


def stein_discrepancy(estimate: SteinKernelEstimate) -> float:
    """Occupancy-weighted E|tau - Id|^2_HS over the bins."""
    return _weighted_hs_sq(estimate.tau_values, estimate.counts,
                           shift_identity=True)


# ---------------------------------------------------------------------------
# The defining identity on fresh samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SteinIdentityRow:
    function_label: str
    lhs: float
    rhs: float
    residual: float
    boot_sd: float
    bias_allowance: float
    passed: bool


@dataclass(frozen=True)
class SteinIdentityReport:
    rows: tuple

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.passed for r in self.rows)

    def row(self, function_label: str) -> SteinIdentityRow:
        for r in self.rows:
            if r.function_label == function_label:
                return r
        raise KeyError(function_label)


def stein_identity_check(estimate: SteinKernelEstimate, samples,
                         eta_family: TestFunctionFamily, n_boot: int = 200,
                         seed: int = 0) -> SteinIdentityReport:
    """Residuals |E[eta(Y) Y] - E[eta'(Y) tau(Y)]| on fresh draws of q.

    ``samples`` are raw observable values; they are centered with the
    estimate's shift.  Each row passes when the residual is below three
    bootstrap standard deviations plus a binning allowance, the change of
    the right side under half as many bins.  The allowance also absorbs
    the O(1/sqrt(n_outer)) error of the empirical centering.
    """
    if estimate.out_dim != 1:
        raise ValueError("the identity check supports scalar observables "
                         "only")
    Y = np.asarray(samples, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    Yc = Y - estimate.center_shift
    n = Yc.shape[0]
    tau_full = estimate.evaluate(Yc)[:, 0, 0]
    half = _rebin(estimate, max(2, estimate.n_bins // 2))
    tau_half = half(Yc)
    y = Yc[:, 0]
    rows = []
    for fn in eta_family.functions:
        eta = np.asarray(fn.value(Yc), dtype=float)
        grad = np.asarray(fn.gradient(Yc), dtype=float)[:, 0]
        lhs = float(np.mean(eta * y))
        rhs = float(np.mean(grad * tau_full))
        gap = eta * y - grad * tau_full
        reps = []
        for idx in _bootstrap_chunks(n, n_boot, seed):
            reps.append(np.mean(gap[idx], axis=1))
        sd = float(np.std(np.concatenate(reps), ddof=1))
        allowance = abs(float(np.mean(grad * tau_half)) - rhs)
        residual = abs(lhs - rhs)
        rows.append(SteinIdentityRow(
            function_label=fn.label, lhs=lhs, rhs=rhs, residual=residual,
            boot_sd=sd, bias_allowance=allowance,
            passed=residual <= 3.0 * sd + allowance))
    return SteinIdentityReport(rows=tuple(rows))


def _rebin(estimate: SteinKernelEstimate, n_bins: int):
    """Evaluator of the same run re-binned at a different bin count."""
    axis_edges, cell_map, bin_of = _quantile_partition(
        estimate.outer_points, n_bins,
        min_occupancy=min(MIN_BIN_OCCUPANCY,
                          estimate.outer_points.shape[0] // 2))
    n_eff = int(cell_map.max()) + 1
    _, tau, _, _ = _reduce_bins(bin_of, estimate.outer_points,
                                estimate.outer_values, n_eff)

    def evaluate(points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        return tau[cell_map[_cells_of(axis_edges, pts)]][:, 0, 0]

    return evaluate


# ---------------------------------------------------------------------------
# Central limit theorem rate
# ---------------------------------------------------------------------------

def w2_sq_to_standard_gaussian(samples) -> float:
    """Squared Wasserstein-2 distance of an empirical 1D sample from the
    standard Gaussian, by coupling order statistics to mid-rank quantiles."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = x.size
    if m < 2:
        raise ValueError("need at least two samples")
    q = ndtri((np.arange(m) + 0.5) / m)
    return float(np.mean((x - q) ** 2))


@dataclass(frozen=True)
class CLTRateRow:
    n: int
    n_sums: int
    w2_sq: float
    bound: float
    floor: float
    floor_sd: float
    passed: bool


@dataclass(frozen=True)
class CLTRateReport:
    rows: tuple
    tau_hs_sq: float

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.passed for r in self.rows)

    @property
    def trend_ratio(self) -> float:
        """Spread of n * W2^2 across the rows (max over min)."""
        scaled = [r.n * r.w2_sq for r in self.rows]
        low = min(scaled)
        return math.inf if low <= 0.0 else max(scaled) / low


def clt_rate_check(measure: TargetMeasure, chi: ChiMap,
                   n_list: Sequence[int], n_mc: int = 2000, *,
                   tau_hs_sq: float, master_seed: int = 0,
                   n_replicas: int = 4,
                   n_floor_replicas: int = 5) -> CLTRateReport:
    """Verify W_2^2(q_n, gamma_1) <= 2(E|tau|^2_HS + 1)/n on standardized
    sums of n draws from q = chi_*p.

    ``n_mc`` is the number of sums at the smallest n; the count grows
    proportionally with n, so the quantile-coupling resolution (whose
    floor decays roughly like log(m)/m in the sample count m) keeps pace
    with the 1/n decay of the bound and n * W2^2 stays comparable across
    rows.  Each row is averaged over ``n_replicas`` independent batches
    and passes when the average is below the bound plus the measured
    coupling floor plus three of its standard deviations.
    """
    if chi.out_dim != 1:
        raise ValueError("the rate check supports scalar observables only")
    if measure.sampler is None:
        raise ValueError("the rate check needs a target with an exact "
                         "sampler")
    if not tau_hs_sq >= 0.0:
        raise ValueError("tau_hs_sq must be nonnegative")
    n_list = [int(n) for n in n_list]
    if not n_list or min(n_list) < 2:
        raise ValueError("n_list must hold integers >= 2")
    base = min(n_list)

    def q_draws(m, rng):
        return chi.value(measure.sampler(m, rng))[:, 0]

    rng0 = np.random.Generator(
        np.random.PCG64(path_seed(master_seed, 100_003)))
    calib = q_draws(200_000, rng0)
    mu = float(np.mean(calib))
    sd = float(np.std(calib))
    if sd <= 0.0:
        raise ValueError("the observable is degenerate under the target")

    rows = []
    for j, n in enumerate(n_list):
        m = int(round(n_mc * n / base))
        w2_reps = np.empty(n_replicas)
        for r in range(n_replicas):
            rng = np.random.Generator(
                np.random.PCG64(path_seed(master_seed, 200_001 + 97 * j + r)))
            y = (q_draws(m * n, rng) - mu) / sd
            sums = y.reshape(m, n).sum(axis=1) / math.sqrt(n)
            w2_reps[r] = w2_sq_to_standard_gaussian(sums)
        floors = np.empty(n_floor_replicas)
        for r in range(n_floor_replicas):
            rng = np.random.Generator(
                np.random.PCG64(path_seed(master_seed, 300_007 + 97 * j + r)))
            floors[r] = w2_sq_to_standard_gaussian(rng.standard_normal(m))
        w2 = float(np.mean(w2_reps))
        floor = float(np.mean(floors))
        floor_sd = float(np.std(floors, ddof=1))
        bound = 2.0 * (tau_hs_sq + 1.0) / n
        rows.append(CLTRateRow(
            n=n, n_sums=m, w2_sq=w2, bound=bound, floor=floor,
            floor_sd=floor_sd,
            passed=w2 <= bound + floor + 3.0 * floor_sd))
    return CLTRateReport(rows=tuple(rows), tau_hs_sq=float(tau_hs_sq))
