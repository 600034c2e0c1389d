"""Posterior moments of the pinned target, drift field, and drift Jacobian.

At time t in [0,1) and position x, conditioning the transport process on its
current position induces a posterior law for the terminal point: the
probability measure on R^d with density proportional to

    f(y) * phi_{x, 1-t}(y),

where phi_{x,s} is the N(x, s Id) kernel and f the target's relative density
against gamma_d.  Its normalizing mass equals the heat semigroup value
P_{1-t} f(x); its mean b(t,x) gives the drift of the transport SDE,

    v(t, x) = (b(t, x) - x) / (1 - t),

and its covariance C(t,x) gives the drift Jacobian

    grad v(t, x) = C(t, x) / (1 - t)^2 - Id / (1 - t),

a symmetric matrix whose smallest eigenvalue is always >= -1/(1-t).

Closed forms are used for Gaussian, Gaussian-mixture, positive-truncated
Gaussian, and uniform interval / cube targets; all are arranged so that no
catastrophic cancellation occurs as t -> 1 (the drift of the identity target
f = 1 evaluates to exactly zero, not merely to rounding noise).  Smooth
targets in dimension <= 3 without a closed form fall back to tensorized
Gauss-Hermite quadrature with order doubling; anything else, and quadrature
that fails to converge (indicator densities such as the uniform ball), falls
back to deterministic importance sampling around the Gaussian pin.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import special

from .measures import TargetMeasure, _points
from .mills import mills, mills_prime

__all__ = [
    "Method",
    "PosteriorMoments",
    "PosteriorDegenerateError",
    "posterior_moments",
    "batched_moments",
    "drift",
    "drift_jacobian",
    "heat_semigroup",
    "log_heat_semigroup",
    "sample_posterior",
    "posterior_normal_columns",
    "set_debug_checks",
]

_LOG_2PI = math.log(2.0 * math.pi)

LOG_MASS_FLOOR = -700.0

_DEBUG = False


def set_debug_checks(enabled: bool) -> None:
    """Enable internal cross-route consistency assertions (slow; tests only)."""
    global _DEBUG
    _DEBUG = bool(enabled)


class Method(Enum):
    CLOSED_FORM = "closed_form"
    GAUSS_HERMITE = "gauss_hermite"
    MONTE_CARLO = "monte_carlo"


def _rows_times_matrix(X: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Row-wise X @ S via broadcast-multiply and a fixed-axis sum.

    BLAS picks different kernels (FMA vs. separate multiply-add) depending
    on the batch size of a GEMM call, so `X @ S` can round a given row
    differently for different batch shapes.  Summing an explicit product
    over the contraction axis keeps every row bit-identical no matter how
    the batch is chunked.
    """
    return np.sum(X[:, :, None] * S[None, :, :], axis=1)


def _rows_dot_vector(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-wise X @ w, batch-shape independent (see _rows_times_matrix)."""
    return np.sum(X * w[None, :], axis=1)


class PosteriorDegenerateError(RuntimeError):
    """The posterior mass underflowed (log mass below -700); the caller must
    refine the step or mark the path as failed."""


@dataclass
class PosteriorMoments:
    mean: np.ndarray      # (d,)
    cov: np.ndarray       # (d, d), symmetric positive semi-definite
    log_mass: float       # log P_{1-t} f (x)
    method: Method


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t < 1.0:
        raise ValueError(f"t must lie in [0, 1), got {t!r}")
    return t


# ---------------------------------------------------------------------------
# Gaussian target: everything reduces to the d x d matrix
# M = (1 - t) * Sigma^{-1} + t * Id, which is SPD for every t in [0, 1].
# ---------------------------------------------------------------------------

def _gaussian_core(measure: TargetMeasure, t: float, X: np.ndarray):
    """Returns (M, M_inv, cov_inv, a) for the Gaussian closed form."""
    p = measure.params
    a = p["mean"]
    cov_inv = p["cov_inv"]
    tau = 1.0 - t
    d = measure.dim
    M = t * np.eye(d) + tau * cov_inv
    M_inv = np.linalg.inv(M)
    M_inv = 0.5 * (M_inv + M_inv.T)
    return M, M_inv, cov_inv, a


def _gaussian_drift(measure, t, X):
    _, M_inv, cov_inv, a = _gaussian_core(measure, t, X)
    rhs = _rows_times_matrix(a - X, cov_inv) + X
    return _rows_times_matrix(rhs, M_inv)


def _gaussian_jacobian(measure, t, X):
    M, _, cov_inv, a = _gaussian_core(measure, t, X)
    J = np.linalg.solve(M, np.eye(measure.dim) - cov_inv)
    J = 0.5 * (J + J.T)
    return np.broadcast_to(J, (X.shape[0],) + J.shape)


def _gaussian_moments(measure, t, X, need_cov):
    M, M_inv, cov_inv, a = _gaussian_core(measure, t, X)
    tau = 1.0 - t
    v = _rows_times_matrix(_rows_times_matrix(a - X, cov_inv) + X, M_inv)
    mean = X + tau * v
    cov = None
    if need_cov:
        c = tau * M_inv
        cov = np.broadcast_to(c, (X.shape[0],) + c.shape)
    sign, logdet_m = np.linalg.slogdet(M)
    if sign <= 0:
        raise np.linalg.LinAlgError("posterior precision lost definiteness")
    sa = cov_inv @ a
    log_mass = -0.5 * (measure.params["logdet"] + logdet_m) + 0.5 * (
        _rows_dot_vector(X - a, sa) + tau * _rows_dot_vector(v, sa)
        + np.sum(X * v, axis=-1))
    return mean, cov, log_mass


# ---------------------------------------------------------------------------
# Gaussian location mixture: the posterior is again a mixture of Gaussian
# components N(x + tau z_i, tau Id) with softmax weights.
# ---------------------------------------------------------------------------

def _mixture_logits(measure, t, X):
    spec = measure.params["spec"]
    atoms = spec.atoms
    log_w = np.where(spec.weights > 0,
                     np.log(np.maximum(spec.weights, 1e-300)), -np.inf)
    half_sq = 0.5 * np.sum(atoms * atoms, axis=1)
    inner = np.sum(X[:, None, :] * atoms[None, :, :], axis=2)
    return log_w + inner - t * half_sq, atoms


def _mixture_posterior_weights(measure, t, X):
    logits, atoms = _mixture_logits(measure, t, X)
    post = np.exp(logits - special.logsumexp(logits, axis=-1, keepdims=True))
    return post, atoms, logits


def _mixture_drift(measure, t, X):
    post, atoms, _ = _mixture_posterior_weights(measure, t, X)
    return _rows_times_matrix(post, atoms)


def _mixture_jacobian(measure, t, X):
    post, atoms, _ = _mixture_posterior_weights(measure, t, X)
    vbar = _rows_times_matrix(post, atoms)
    outer = atoms[:, :, None] * atoms[:, None, :]
    second = np.sum(post[:, :, None, None] * outer[None], axis=1)
    return second - vbar[:, :, None] * vbar[:, None, :]


def _mixture_moments(measure, t, X, need_cov):
    post, atoms, logits = _mixture_posterior_weights(measure, t, X)
    tau = 1.0 - t
    vbar = _rows_times_matrix(post, atoms)
    mean = X + tau * vbar
    cov = None
    if need_cov:
        cw = _mixture_jacobian(measure, t, X)
        cov = tau * np.broadcast_to(np.eye(measure.dim),
                                    cw.shape).copy() + tau * tau * cw
    log_mass = special.logsumexp(logits, axis=-1)
    return mean, cov, log_mass


# ---------------------------------------------------------------------------
# Positive-truncated Gaussian target (one-dimensional): inverse Mills ratio
# closed forms, stable on both tails.
# ---------------------------------------------------------------------------

def _truncated_pieces(measure, t, x):
    sigma = measure.params["sigma"]
    tau = 1.0 - t
    st = math.sqrt(sigma / (tau * (tau + sigma)))
    alpha = -st * x
    return sigma, tau, st, alpha


def _truncated_drift(measure, t, X):
    x = X[:, 0]
    sigma, tau, st, alpha = _truncated_pieces(measure, t, x)
    return (st * mills(alpha) - x / (tau + sigma))[:, None]


def _truncated_jacobian(measure, t, X):
    x = X[:, 0]
    sigma, tau, st, alpha = _truncated_pieces(measure, t, x)
    return (-st * st * mills_prime(alpha) - 1.0 / (tau + sigma))[:, None, None]


def _truncated_moments(measure, t, X, need_cov):
    x = X[:, 0]
    sigma, tau, st, alpha = _truncated_pieces(measure, t, x)
    w = sigma * tau / (sigma + tau)
    mu0 = sigma * x / (sigma + tau)
    mean = (mu0 + math.sqrt(w) * mills(alpha))[:, None]
    cov = None
    if need_cov:
        cov = (w * (1.0 - mills_prime(alpha)))[:, None, None]
    log_mass = (-measure.params["log_Z"]
                + 0.5 * math.log(sigma / (tau + sigma))
                - 0.5 * x * x / (tau + sigma)
                + special.log_ndtr(st * x))
    return mean, cov, log_mass


# ---------------------------------------------------------------------------
# Uniform interval / cube targets.  Per axis the posterior is the normal
# N(x/t, (1-t)/t) restricted to [lo, hi]; for small t the restriction is a
# gently tilted uniform and is integrated directly with Gauss-Legendre nodes
# on [lo, hi], otherwise standardized truncated-normal moments are used.
# The two regimes meet where the standardized width equals 1/2.
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _leggauss(order: int):
    return np.polynomial.legendre.leggauss(order)


def _interval_tilt(lo, hi, t, x, need_var):
    """Direct log-domain quadrature of the posterior on [lo, hi]; exact for
    the wide-posterior regime t * 4 (hi-lo)^2 <= 1 - t (analytic integrand
    with small curvature)."""
    tau = 1.0 - t
    nodes, weights = _leggauss(64)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    y = mid + half * nodes                          # (64,)
    g = 0.5 * y * y - 0.5 * (y - x[:, None]) ** 2 / tau   # (m, 64)
    gmax = np.max(g, axis=-1, keepdims=True)
    rel = weights * np.exp(g - gmax)
    total = np.sum(rel, axis=-1)
    log_mass = (-math.log(hi - lo) + 0.5 * _LOG_2PI
                - 0.5 * math.log(2.0 * math.pi * tau)
                + gmax[:, 0] + np.log(half * total))
    mean = np.sum(rel * y, axis=-1) / total
    var = None
    if need_var:
        var = np.sum(rel * (y - mean[:, None]) ** 2, axis=-1) / total
    return log_mass, mean, var


def _trunc_std_moments(alpha, beta, need_var):
    """log mass, mean, and variance of a standard normal conditioned to
    [alpha, beta], for standardized widths >= 1/2; stable in both tails."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    lm = np.empty_like(alpha)
    mz = np.empty_like(alpha)
    vz = np.empty_like(alpha) if need_var else None

    neg = beta <= 0.0
    if np.any(neg):
        l2, m2, v2 = _trunc_std_moments(-beta[neg], -alpha[neg], need_var)
        lm[neg] = l2
        mz[neg] = -m2
        if need_var:
            vz[neg] = v2

    mid = (~neg) & (alpha < 0.0)
    if np.any(mid):
        a, b = alpha[mid], beta[mid]
        mass = special.ndtr(b) - special.ndtr(a)
        pa = np.exp(-0.5 * a * a - 0.5 * _LOG_2PI)
        pb = np.exp(-0.5 * b * b - 0.5 * _LOG_2PI)
        lm[mid] = np.log(mass)
        m_ = (pa - pb) / mass
        mz[mid] = m_
        if need_var:
            vz[mid] = 1.0 + (a * pa - b * pb) / mass - m_ * m_

    pos = (~neg) & (alpha >= 0.0)
    if np.any(pos):
        a, b = alpha[pos], beta[pos]
        la = special.log_ndtr(-a)
        lb = special.log_ndtr(-b)
        far = (a >= 8.0) & (b - a >= 6.0)
        lpa = -0.5 * a * a - 0.5 * _LOG_2PI
        lpb = -0.5 * b * b - 0.5 * _LOG_2PI
        lmass = la + np.log1p(-np.exp(np.minimum(lb - la, -1e-18)))
        m_ = np.exp(lpa + np.log1p(-np.exp(lpb - lpa)) - lmass)
        m_far = mills(a)
        lm_pos = np.where(far, la, lmass)
        mz_pos = np.where(far, m_far, m_)
        lm[pos] = lm_pos
        mz[pos] = mz_pos
        if need_var:
            with np.errstate(divide="ignore", invalid="ignore"):
                # E[Z^2] = 1 + (a phi(a) - b phi(b)) / mass, split by scale
                mass = np.exp(lmass)
                plain = 1.0 + (a * np.exp(lpa) - b * np.exp(lpb)) / mass
                log_t = np.log(np.maximum(a, 1e-300)) + lpa
                log_u = np.log(b) + lpb
                logdiff = log_t + np.log1p(
                    -np.exp(np.minimum(log_u - log_t, -1e-18)))
                tail = 1.0 + np.exp(logdiff - lmass)
            ez2 = np.where(a < 1.0, plain, tail)
            v_ = ez2 - mz_pos * mz_pos
            v_far = 1.0 - mills_prime(a)
            vz[pos] = np.where(far, v_far, v_)
    return lm, mz, vz


def _interval_bounds(measure):
    lo = float(measure.params["lo"])
    hi = float(measure.params["hi"])
    return lo, hi


def _interval_use_tilt(lo, hi, t):
    side = hi - lo
    return t * 4.0 * side * side <= (1.0 - t)


def _interval_axis_moments(lo, hi, t, x, need_var):
    """Per-axis posterior moments for a uniform factor on [lo, hi]; x is a
    flat array of positions along that axis."""
    if _interval_use_tilt(lo, hi, t):
        return _interval_tilt(lo, hi, t, x, need_var)
    tau = 1.0 - t
    w = tau / t
    sw = math.sqrt(w)
    mu0 = x / t
    lm_std, m_std, v_std = _trunc_std_moments(
        (lo - mu0) / sw, (hi - mu0) / sw, need_var)
    log_mass = (-math.log(hi - lo) + 0.5 * _LOG_2PI - 0.5 * math.log(t)
                + 0.5 * x * x / t + lm_std)
    mean = mu0 + sw * m_std
    var = w * v_std if need_var else None
    return log_mass, mean, var


def _uniform_moments(measure, t, X, need_cov):
    lo, hi = _interval_bounds(measure)
    n, d = X.shape
    flat = X.reshape(-1)
    lm_ax, mean_ax, var_ax = _interval_axis_moments(lo, hi, t, flat, need_cov)
    log_mass = lm_ax.reshape(n, d).sum(axis=1)
    mean = mean_ax.reshape(n, d)
    cov = None
    if need_cov:
        cov = np.zeros((n, d, d))
        idx = np.arange(d)
        cov[:, idx, idx] = var_ax.reshape(n, d)
    return mean, cov, log_mass


def _uniform_drift(measure, t, X):
    lo, hi = _interval_bounds(measure)
    n, d = X.shape
    flat = X.reshape(-1)
    tau = 1.0 - t
    if _interval_use_tilt(lo, hi, t):
        _, mean_ax, _ = _interval_tilt(lo, hi, t, flat, False)
        return (mean_ax.reshape(n, d) - X) / tau
    w = tau / t
    sw = math.sqrt(w)
    mu0 = flat / t
    _, m_std, _ = _trunc_std_moments((lo - mu0) / sw, (hi - mu0) / sw, False)
    v = flat / t + m_std / math.sqrt(t * tau)
    return v.reshape(n, d)


def _uniform_jacobian(measure, t, X):
    lo, hi = _interval_bounds(measure)
    n, d = X.shape
    flat = X.reshape(-1)
    tau = 1.0 - t
    if _interval_use_tilt(lo, hi, t):
        _, _, var_ax = _interval_tilt(lo, hi, t, flat, True)
        diag = (var_ax / tau - 1.0) / tau
    else:
        w = tau / t
        sw = math.sqrt(w)
        mu0 = flat / t
        _, _, v_std = _trunc_std_moments((lo - mu0) / sw, (hi - mu0) / sw,
                                         True)
        diag = (v_std - t) / (t * tau)
    out = np.zeros((n, d, d))
    idx = np.arange(d)
    out[:, idx, idx] = diag.reshape(n, d)
    return out


# ---------------------------------------------------------------------------
# Generic fallbacks: tensorized Gauss-Hermite (d <= 3) and importance
# sampling around the Gaussian pin.
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _hermgauss(order: int):
    # numpy's hermgauss weight formula overflows past order ~256; the order
    # ladder below stays inside the clean range.
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    if not np.all(np.isfinite(weights)):
        raise ValueError(f"hermgauss unstable at order {order}")
    return nodes, np.log(weights)


_GH_ORDERS = {1: (64, 128, 256), 2: (48, 96, 192), 3: (32, 64, 128)}


def _gh_moments_point(measure, t, x, need_cov, tol=1e-10):
    d = measure.dim
    tau = 1.0 - t
    scale = math.sqrt(2.0 * tau)
    prev = None
    for order in _GH_ORDERS[d]:
        nodes, log_w = _hermgauss(order)
        mesh = np.stack(np.meshgrid(*([nodes] * d), indexing="ij"),
                        axis=-1).reshape(-1, d)
        log_wsum = np.sum(
            np.stack(np.meshgrid(*([log_w] * d), indexing="ij"), axis=-1)
            .reshape(-1, d), axis=1)
        y = x + scale * mesh
        logit = measure.log_f(y) + log_wsum
        finite = np.isfinite(logit)
        if not np.any(finite):
            return None
        log_mass = special.logsumexp(logit[finite]) - 0.5 * d * math.log(
            math.pi)
        wts = np.zeros(logit.shape)
        wts[finite] = np.exp(logit[finite] - np.max(logit[finite]))
        wts /= wts.sum()
        mean = wts @ y
        cov = None
        if need_cov:
            yc = y - mean
            cov = np.einsum("n,ni,nj->ij", wts, yc, yc)
        cur = (log_mass, mean, cov)
        if prev is not None:
            dm = np.max(np.abs(mean - prev[1]))
            dl = abs(log_mass - prev[0])
            dc = 0.0 if not need_cov else np.max(np.abs(cov - prev[2]))
            if max(dm, dl, dc) < tol * (1.0 + np.max(np.abs(mean))):
                return cur
        prev = cur
    return None


def _is_moments_point(measure, t, x, need_cov, n_draws=1 << 17,
                      ess_floor=1000.0, seed=0x5EED):
    d = measure.dim
    tau = 1.0 - t
    rng = np.random.Generator(np.random.PCG64(seed))
    g = rng.standard_normal((n_draws, d))
    sq = 0.5 * np.sum(g * g, axis=1)
    for c in (1.0, 2.0, 4.0, 8.0):
        y = x + math.sqrt(c * tau) * g
        logw = measure.log_f(y) - (c - 1.0) * sq + 0.5 * d * math.log(c)
        finite = np.isfinite(logw)
        if not np.any(finite):
            continue
        shift = np.max(logw[finite])
        w = np.zeros(n_draws)
        w[finite] = np.exp(logw[finite] - shift)
        total = w.sum()
        ess = total * total / np.sum(w * w)
        if ess < ess_floor and c < 8.0:
            continue
        if ess < 100.0:
            raise RuntimeError(
                "importance sampling failed to localize the posterior")
        if ess < ess_floor:
            warnings.warn("posterior importance sampling ESS below target",
                          RuntimeWarning, stacklevel=2)
        log_mass = shift + math.log(total / n_draws)
        wn = w / total
        mean = wn @ y
        cov = None
        if need_cov:
            yc = y - mean
            cov = np.einsum("n,ni,nj->ij", wn, yc, yc)
        return log_mass, mean, cov
    raise RuntimeError("importance sampling failed to localize the posterior")


def _generic_moments(measure, t, X, need_cov):
    n, d = X.shape
    means = np.empty((n, d))
    covs = np.empty((n, d, d)) if need_cov else None
    lms = np.empty(n)
    method = Method.GAUSS_HERMITE if d <= 3 else Method.MONTE_CARLO
    for i in range(n):
        got = None
        if d <= 3:
            got = _gh_moments_point(measure, t, X[i], True)
        if got is None:
            method = Method.MONTE_CARLO
            got = _is_moments_point(measure, t, X[i], True)
        lms[i], means[i] = got[0], got[1]
        if need_cov:
            covs[i] = 0.5 * (got[2] + got[2].T)
    return means, covs, lms, method


# ---------------------------------------------------------------------------
# Dispatch.
# ---------------------------------------------------------------------------

_CLOSED_KINDS = ("gaussian", "gaussian_mixture", "truncated_gaussian",
                 "uniform_interval", "uniform_cube")


def batched_moments(measure: TargetMeasure, t: float, X, need_cov=True):
    """Posterior mean (n,d), covariance (n,d,d) (or None), log mass (n,)
    and the evaluation method, for a batch of positions at a common time."""
    t = _check_time(t)
    X = np.atleast_2d(_points(X, measure.dim))
    kind = measure.kind
    if kind == "gaussian":
        out = _gaussian_moments(measure, t, X, need_cov)
        return out + (Method.CLOSED_FORM,)
    if kind == "gaussian_mixture":
        out = _mixture_moments(measure, t, X, need_cov)
        return out + (Method.CLOSED_FORM,)
    if kind == "truncated_gaussian":
        out = _truncated_moments(measure, t, X, need_cov)
        return out + (Method.CLOSED_FORM,)
    if kind in ("uniform_interval", "uniform_cube"):
        out = _uniform_moments(measure, t, X, need_cov)
        return out + (Method.CLOSED_FORM,)
    mean, cov, lm, method = _generic_moments(measure, t, X, need_cov)
    return mean, cov, lm, method


def posterior_moments(measure: TargetMeasure, t: float, x) -> PosteriorMoments:
    """Moments of the terminal-point posterior at a single (t, x)."""
    X = _points(x, measure.dim).reshape(1, measure.dim)
    mean, cov, lm, method = batched_moments(measure, t, X, need_cov=True)
    log_mass = float(lm[0])
    if not math.isfinite(log_mass) or log_mass < LOG_MASS_FLOOR:
        raise PosteriorDegenerateError(
            f"posterior mass underflow at t={t!r}: log mass {log_mass!r}")
    return PosteriorMoments(mean=mean[0].copy(), cov=np.array(cov[0]),
                            log_mass=log_mass, method=method)


def _shape_in(measure, x):
    x_arr = np.asarray(x, dtype=float)
    X = np.atleast_2d(_points(x_arr, measure.dim))
    return X, x_arr.ndim


def drift(measure: TargetMeasure, t: float, x):
    """Transport drift v(t, x); accepts (d,), (n, d) (and scalars / (n,) when
    d == 1), returning the matching shape."""
    t = _check_time(t)
    X, in_ndim = _shape_in(measure, x)
    kind = measure.kind
    if kind == "gaussian":
        V = _gaussian_drift(measure, t, X)
    elif kind == "gaussian_mixture":
        V = _mixture_drift(measure, t, X)
    elif kind == "truncated_gaussian":
        V = _truncated_drift(measure, t, X)
    elif kind in ("uniform_interval", "uniform_cube"):
        V = _uniform_drift(measure, t, X)
    else:
        mean, _, _, _ = batched_moments(measure, t, X, need_cov=False)
        V = (mean - X) / (1.0 - t)
    if _DEBUG and kind in _CLOSED_KINDS:
        mean, _, _, _ = batched_moments(measure, t, X, need_cov=False)
        alt = (mean - X) / (1.0 - t)
        err = np.max(np.abs(alt - V) / (1.0 + np.abs(V)))
        assert err < 1e-8, f"drift cross-route mismatch {err:g}"
    if measure.dim == 1 and in_ndim <= 1:
        out = V[:, 0]
        return float(out[0]) if in_ndim == 0 else out
    return V[0] if in_ndim == 1 else V


def drift_jacobian(measure: TargetMeasure, t: float, x):
    """Drift Jacobian grad v(t, x), symmetric; accepts the same shapes as
    ``drift`` and returns (d, d), (n, d, d), or scalars / (n,) when d == 1
    and the input was squeezed."""
    t = _check_time(t)
    X, in_ndim = _shape_in(measure, x)
    kind = measure.kind
    if kind == "gaussian":
        J = _gaussian_jacobian(measure, t, X)
    elif kind == "gaussian_mixture":
        J = _mixture_jacobian(measure, t, X)
    elif kind == "truncated_gaussian":
        J = _truncated_jacobian(measure, t, X)
    elif kind in ("uniform_interval", "uniform_cube"):
        J = _uniform_jacobian(measure, t, X)
    else:
        tau = 1.0 - t
        _, cov, _, _ = batched_moments(measure, t, X, need_cov=True)
        J = cov / (tau * tau) - np.eye(measure.dim) / tau
    if _DEBUG:
        lam_min = np.min(np.linalg.eigvalsh(0.5 * (J + np.swapaxes(J, -1,
                                                                   -2))))
        assert lam_min >= -1.0 / (1.0 - t) - 1e-8, \
            f"Jacobian eigenvalue below the universal floor: {lam_min:g}"
    if measure.dim == 1 and in_ndim <= 1:
        out = J[:, 0, 0]
        return float(out[0]) if in_ndim == 0 else out
    return J[0] if in_ndim == 1 else J


def _log_mass_batch(measure, t, X):
    _, _, lm, _ = batched_moments(measure, t, X, need_cov=False)
    return lm


def log_heat_semigroup(measure: TargetMeasure, t: float, x):
    """log P_t f(x) for t in [0, 1]; t = 0 returns log f(x) exactly."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t!r}")
    x_arr = np.asarray(x, dtype=float)
    X = np.atleast_2d(_points(x_arr, measure.dim))
    if t == 0.0:
        lm = np.atleast_1d(measure.log_f(X))
    else:
        lm = _log_mass_batch(measure, 1.0 - t, X)
    if x_arr.ndim == 0 or (x_arr.ndim == 1 and measure.dim > 1):
        return float(lm[0])
    return lm


def heat_semigroup(measure: TargetMeasure, t: float, x):
    """P_t f(x) = exp(log P_t f(x)); raises if the mass underflows."""
    lm = log_heat_semigroup(measure, t, x)
    arr = np.atleast_1d(np.asarray(lm, dtype=float))
    if float(t) > 0.0 and (np.any(~np.isfinite(arr))
                           or np.any(arr < LOG_MASS_FLOOR)):
        raise PosteriorDegenerateError(
            f"heat semigroup underflow at t={t!r}")
    return np.exp(lm)


# ---------------------------------------------------------------------------
# Exact posterior sampling through deterministic transforms of standard
# normals (keeps every random input Gaussian, which the kernel estimators
# rely on for interpolation-to-equilibrium mixing).
# ---------------------------------------------------------------------------

def posterior_normal_columns(measure: TargetMeasure) -> int:
    """Number of N(0,1) columns ``sample_posterior`` consumes per draw."""
    if measure.kind == "gaussian_mixture":
        return measure.dim + 1
    return measure.dim


def _trunc_std_sample(alpha, beta, u):
    """Inverse-CDF draw of a standard normal conditioned to [alpha, beta],
    u in (0,1); tail-stable via log survival functions."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.empty_like(alpha)

    neg = beta <= 0.0
    if np.any(neg):
        out[neg] = -_trunc_std_sample(-beta[neg], -alpha[neg], 1.0 - u[neg])

    mid = (~neg) & (alpha < 0.0)
    if np.any(mid):
        fa = special.ndtr(alpha[mid])
        fb = special.ndtr(beta[mid])
        out[mid] = special.ndtri(fa + u[mid] * (fb - fa))

    pos = (~neg) & (alpha >= 0.0)
    if np.any(pos):
        la = special.log_ndtr(-alpha[pos])
        lb = special.log_ndtr(-beta[pos])
        up = u[pos]
        log_sf = la + np.log((1.0 - up) + up * np.exp(lb - la))
        out[pos] = -special.ndtri_exp(log_sf)
    return out


def _uniform_axis_sample(lo, hi, t, x, g):
    """Draw from a uniform factor's posterior on [lo, hi] through one
    standard normal g per element."""
    u = special.ndtr(g)
    u = np.clip(u, 1e-16, 1.0 - 1e-16)
    if t == 0.0:
        b = x            # tilt exp(b y) on [lo, hi]
        width = hi - lo
        small = np.abs(b) * width < 1e-12
        with np.errstate(over="ignore", invalid="ignore"):
            y = lo + np.log1p(u * np.expm1(b * width)) / b
        return np.where(small, lo + u * width, y)
    tau = 1.0 - t
    sw = math.sqrt(tau / t)
    mu0 = x / t
    z = _trunc_std_sample((lo - mu0) / sw, (hi - mu0) / sw, u)
    return np.clip(mu0 + sw * z, lo, hi)


def sample_posterior(measure: TargetMeasure, t: float, X, normals):
    """Exact draws from the terminal posterior at (t, x_i), one per row.

    ``normals`` must be i.i.d. N(0,1) of shape (n, posterior_normal_columns);
    the draw is a deterministic transform of (t, X, normals).  Supported for
    every target kind with closed-form moments.
    """
    t = _check_time(t)
    X = np.atleast_2d(_points(X, measure.dim))
    n, d = X.shape
    g = np.asarray(normals, dtype=float)
    need = posterior_normal_columns(measure)
    if g.shape != (n, need):
        raise ValueError(f"normals must have shape {(n, need)}, got {g.shape}")
    kind = measure.kind
    tau = 1.0 - t
    if kind == "gaussian":
        _, M_inv, _, _ = _gaussian_core(measure, t, X)
        mean, _, _ = _gaussian_moments(measure, t, X, need_cov=False)
        chol = np.linalg.cholesky(tau * M_inv)
        return mean + _rows_times_matrix(g, chol.T)
    if kind == "gaussian_mixture":
        post, atoms, _ = _mixture_posterior_weights(measure, t, X)
        cum = np.cumsum(post, axis=1)
        u = special.ndtr(g[:, 0])
        idx = np.minimum(np.sum(cum < u[:, None], axis=1), atoms.shape[0] - 1)
        return X + tau * atoms[idx] + math.sqrt(tau) * g[:, 1:]
    if kind == "truncated_gaussian":
        sigma = measure.params["sigma"]
        w = sigma * tau / (sigma + tau)
        sw = math.sqrt(w)
        mu0 = sigma * X[:, 0] / (sigma + tau)
        u = np.clip(special.ndtr(g[:, 0]), 1e-16, 1.0 - 1e-16)
        # one-sided [alpha, inf): survival uniformly shrunk by u
        alpha = -mu0 / sw
        log_sf = np.log1p(-u) + special.log_ndtr(-alpha)
        z = -special.ndtri_exp(log_sf)
        return np.maximum(mu0 + sw * z, 0.0)[:, None]
    if kind in ("uniform_interval", "uniform_cube"):
        lo, hi = _interval_bounds(measure)
        flat = X.reshape(-1)
        y = _uniform_axis_sample(lo, hi, t, flat, g.reshape(-1))
        return y.reshape(n, d)
    raise ValueError(f"no transform sampler for target kind {kind!r}")
