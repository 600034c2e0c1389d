"""Derivative of the transport map along paths of the drift process.

A Cameron-Martin perturbation h of the driving noise displaces the state at
time t by int_0^t J(s, t) h'(s) ds, where the propagators J solve the linear
variational equation driven by the drift Jacobian along the path.  The
operator norm of that displacement map is

    |DX_t| = sqrt(lambda_max(G_t)),   G_t = int_0^t J(s,t) J(s,t)^T ds,

and G obeys the one-step recurrence G_{k+1} = A_k (G_k + dt_k I) A_k^T with
per-step factors A_k = exp(dt_k * grad v) evaluated at the step midpoint
(the drift Jacobian is symmetric, so the exponential is computed by
eigendecomposition).  The time weight enters before propagation, matching
the filtration convention of the Euler scheme.  Steps whose largest
Jacobian eigenvalue violates lambda * dt <= 1/2 are bisected on linearly
interpolated states, each path independently.

The recurrence is carried through the final hop [t_K, 1] using the sampled
endpoint, so for the identity target the time-one Gram matrix is the
identity up to float rounding, not up to O(eps) truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .follmer import EnsembleResult, Trajectory
from .measures import TargetMeasure
from .posterior import drift_jacobian

__all__ = [
    "JacobianFlow",
    "FlowEnsemble",
    "MomentEstimate",
    "jacobian_flow",
    "ensemble_flow",
    "malliavin_norm",
    "propagator",
    "moment_estimate",
]

STIFF_STEP_LIMIT = 0.5
MAX_BISECTION_DEPTH = 8


@dataclass(frozen=True)
class JacobianFlow:
    """Per-step factors and Gram matrices of one path's derivative flow."""

    times: np.ndarray
    factors: np.ndarray
    gram: np.ndarray
    failed: bool = False
    failure_time: float | None = None


@dataclass(frozen=True)
class FlowEnsemble:
    """Endpoint derivative data for a whole ensemble."""

    norms_final: np.ndarray
    norms_last_node: np.ndarray
    gram_final: np.ndarray
    failed: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.norms_final.size


def _expm_sym(M: np.ndarray, dt: float):
    """exp(dt * M) for symmetric M (batched), plus the top eigenvalue of M."""
    if M.shape[-1] == 1:
        # same values the eigendecomposition would produce, at scalar cost
        return np.exp(dt * M), M[..., 0, 0]
    w, Q = np.linalg.eigh(M)
    E = np.exp(dt * w)
    A = (Q * E[..., None, :]) @ np.swapaxes(Q, -1, -2)
    return A, w[..., -1]


def _gram_step(measure, t0, t1, X0, X1, G, depth):
    """One propagation step on a batch of paths; bisects stiff rows.

    Returns the per-step factor A, the updated Gram matrix
    A (G + dt I) A^T, and the per-row success mask.
    """
    d = X0.shape[1]
    dt = t1 - t0
    t_mid = 0.5 * (t0 + t1)
    X_mid = 0.5 * (X0 + X1)
    M = drift_jacobian(measure, t_mid, X_mid)
    ok = np.isfinite(M).all(axis=(1, 2))
    M = np.where(ok[:, None, None], M, 0.0)
    A, lam_top = _expm_sym(M, dt)
    eye = np.eye(d)
    G_new = A @ (G + dt * eye) @ np.swapaxes(A, 1, 2)
    G_new = 0.5 * (G_new + np.swapaxes(G_new, 1, 2))
    if depth < MAX_BISECTION_DEPTH:
        stiff = ok & (lam_top * dt > STIFF_STEP_LIMIT)
        if stiff.any():
            idx = np.flatnonzero(stiff)
            A1, G1, ok1 = _gram_step(measure, t0, t_mid, X0[idx], X_mid[idx],
                                     G[idx], depth + 1)
            A2, G2, ok2 = _gram_step(measure, t_mid, t1, X_mid[idx], X1[idx],
                                     G1, depth + 1)
            A[idx] = A2 @ A1
            G_new[idx] = G2
            ok[idx] &= ok1 & ok2
    return A, G_new, ok


def _flow_times(traj_grid) -> np.ndarray:
    return np.append(traj_grid.nodes, 1.0)


def jacobian_flow(measure: TargetMeasure,
                  trajectory: Trajectory) -> JacobianFlow:
    """Propagate the derivative flow along one path, endpoint hop included."""
    if trajectory.failed:
        raise ValueError("trajectory failed; the flow needs a full path")
    grid = trajectory.grid
    d = measure.dim
    pts = np.vstack([trajectory.states, trajectory.endpoint[None, :]])
    times = _flow_times(grid)
    n_steps = times.size - 1
    factors = np.empty((n_steps, d, d))
    gram = np.empty((n_steps + 1, d, d))
    gram[0] = 0.0
    G = np.zeros((1, d, d))
    failed = False
    failure_time = None
    for k in range(n_steps):
        A, G, ok = _gram_step(measure, times[k], times[k + 1],
                              pts[k][None, :], pts[k + 1][None, :], G, 0)
        factors[k] = A[0]
        gram[k + 1] = G[0]
        if not ok[0]:
            failed = True
            failure_time = float(times[k])
            factors[k:] = np.eye(d)
            gram[k + 1:] = gram[k]
            break
    return JacobianFlow(times=times, factors=factors, gram=gram,
                        failed=failed, failure_time=failure_time)


def ensemble_flow(measure: TargetMeasure,
                  ensemble: EnsembleResult) -> FlowEnsemble:
    """Vectorized endpoint derivative norms for every path of an ensemble."""
    grid = ensemble.grid
    n, d = ensemble.endpoints.shape
    times = _flow_times(grid)
    G = np.zeros((n, d, d))
    failed = ensemble.failed.copy()
    norms_last = np.full(n, np.nan)
    for k in range(times.size - 1):
        X0 = ensemble.states[:, k, :]
        X1 = (ensemble.states[:, k + 1, :] if k + 1 < grid.nodes.size
              else ensemble.endpoints)
        _, G_new, ok = _gram_step(measure, times[k], times[k + 1],
                                  X0, X1, G, 0)
        failed |= ~ok
        G = np.where(failed[:, None, None], G, G_new)
        if k == grid.n_steps - 1:
            norms_last = _top_norms(G)
    return FlowEnsemble(norms_final=_top_norms(G), norms_last_node=norms_last,
                        gram_final=G, failed=failed)


def _top_norms(G: np.ndarray) -> np.ndarray:
    lam = np.linalg.eigvalsh(G)[..., -1]
    return np.sqrt(np.clip(lam, 0.0, None))


def malliavin_norm(flow: JacobianFlow, t: float) -> float:
    """|DX_t| = sqrt(lambda_max(G_t)) at a flow node time (1.0 included)."""
    idx = np.flatnonzero(np.abs(flow.times - t) <= 1e-12)
    if idx.size == 0:
        raise ValueError(f"t={t!r} is not a node of this flow")
    lam = np.linalg.eigvalsh(flow.gram[idx[0]])[-1]
    return math.sqrt(max(lam, 0.0))


def propagator(flow: JacobianFlow, s: float, t: float) -> np.ndarray:
    """J(s, t): product of the stored per-step factors, accumulated in time
    order."""
    i = np.flatnonzero(np.abs(flow.times - s) <= 1e-12)
    j = np.flatnonzero(np.abs(flow.times - t) <= 1e-12)
    if i.size == 0 or j.size == 0 or i[0] > j[0]:
        raise ValueError("s and t must be flow node times with s <= t")
    d = flow.factors.shape[1]
    J = np.eye(d)
    for k in range(i[0], j[0]):
        J = flow.factors[k] @ J
    return J


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    standard_error: float
    n_paths: int
    order: int

    def __float__(self) -> float:
        return self.value


def moment_estimate(flows, m: int) -> MomentEstimate:
    """Monte Carlo mean of |DX_1|^{2m} with its CLT standard error."""
    if m < 1 or int(m) != m:
        raise ValueError("m must be a positive integer")
    if isinstance(flows, FlowEnsemble):
        norms = flows.norms_final[~flows.failed]
    else:
        norms = np.array([malliavin_norm(fl, 1.0) for fl in flows
                          if not fl.failed])
    if norms.size == 0:
        raise ValueError("no surviving flows")
    x = norms ** (2 * int(m))
    value = float(np.mean(x))
    se = float(np.std(x) / math.sqrt(x.size))
    return MomentEstimate(value=value, standard_error=se,
                          n_paths=int(norms.size), order=int(m))
