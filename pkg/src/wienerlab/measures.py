"""Catalog of target measures on R^d.

Every target is described by its relative density f = dp/dgamma_d against the
standard Gaussian measure gamma_d, together with the analytic data consumed
downstream: the log-concavity modulus kappa of the Lebesgue density, the
support diameter, exact samplers, and (in one dimension) cumulative
distribution functions.

Conventions used throughout the package:

* ``log_f`` and ``grad_log_f`` accept arrays of shape ``(d,)`` or ``(n, d)``
  (one-dimensional targets also accept scalars and ``(n,)`` arrays) and
  return matching batch shapes.  ``log_f`` is ``-inf`` off the support.
* ``sampler(n, rng)`` returns exact draws of shape ``(n, d)``.
* ``cdf`` is attached only when ``d == 1`` and is vectorized elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy import special

__all__ = [
    "TargetMeasure",
    "MixtureSpec",
    "make_gaussian",
    "make_standard_gaussian",
    "make_truncated_gaussian",
    "make_uniform_interval",
    "make_uniform_cube",
    "make_uniform_ball",
    "make_gaussian_mixture",
]

_LOG_2PI = math.log(2.0 * math.pi)


def _points(x, d: int) -> np.ndarray:
    """Coerce ``x`` to an array of points with trailing axis ``d``."""
    x = np.asarray(x, dtype=float)
    if d == 1:
        if x.ndim == 0 or x.shape[-1] != 1:
            x = x[..., np.newaxis]
    elif x.ndim == 0 or x.shape[-1] != d:
        raise ValueError(f"expected points in R^{d}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class TargetMeasure:
    """A probability measure p = f * gamma_d, given through log f.

    ``kappa`` is the largest constant such that the Hessian of
    ``-log(dp/dx)`` dominates ``kappa * Id`` on the support interior
    (``-inf`` sentinel for mixtures, whose bounds go through the atom radius
    instead).  ``diam`` is the support diameter, ``inf`` for full support.
    Instances are immutable and safe to share across workers.
    """

    dim: int
    log_f: Callable[[np.ndarray], np.ndarray]
    grad_log_f: Callable[[np.ndarray], np.ndarray]
    kappa: float
    diam: float
    support_contains: Callable[[np.ndarray], np.ndarray]
    label: str
    kind: str
    params: dict = field(default_factory=dict, repr=False)
    sampler: Optional[Callable[[int, np.random.Generator], np.ndarray]] = None
    cdf: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class MixtureSpec:
    """Finitely many atoms z_i with weights w_i; the mixing measure of a
    Gaussian location mixture.  ``radius`` is max_i |z_i|."""

    atoms: np.ndarray
    weights: np.ndarray
    radius: float = float("nan")

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if atoms.shape[0] == 0:
            raise ValueError("mixture needs at least one atom")
        if weights.shape != (atoms.shape[0],):
            raise ValueError("need one weight per atom")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        total = float(weights.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        weights = weights / total
        rad = float(np.max(np.linalg.norm(atoms, axis=1)))
        if math.isnan(self.radius):
            object.__setattr__(self, "radius", rad)
        elif rad > self.radius + 1e-12:
            raise ValueError("an atom lies outside the stated radius")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]


def make_gaussian(mean, cov) -> TargetMeasure:
    """Gaussian target N(mean, cov); cov must be symmetric positive definite."""
    a = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = a.shape[0]
    if cov.shape != (d, d):
        raise ValueError("cov shape does not match mean")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
        raise ValueError("cov must be symmetric positive definite")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("cov must be symmetric positive definite") from exc
    cov_inv = np.linalg.inv(cov)
    cov_inv = 0.5 * (cov_inv + cov_inv.T)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    kappa = 1.0 / float(np.linalg.eigvalsh(cov)[-1])

    def log_f(x):
        x = _points(x, d)
        w = x - a
        quad = np.einsum("...i,ij,...j->...", w, cov_inv, w)
        return -0.5 * quad - 0.5 * logdet + 0.5 * np.sum(x * x, axis=-1)

    def grad_log_f(x):
        x = _points(x, d)
        return x - (x - a) @ cov_inv

    def support_contains(x):
        x = _points(x, d)
        return np.ones(x.shape[:-1], dtype=bool)

    def sampler(n, rng):
        return a + rng.standard_normal((n, d)) @ chol.T

    cdf = None
    if d == 1:
        scale = math.sqrt(cov[0, 0])
        loc = a[0]

        def cdf(x):
            return special.ndtr((np.asarray(x, dtype=float) - loc) / scale)

    return TargetMeasure(
        dim=d,
        log_f=log_f,
        grad_log_f=grad_log_f,
        kappa=kappa,
        diam=math.inf,
        support_contains=support_contains,
        label=f"gaussian_d{d}",
        kind="gaussian",
        params={"mean": a, "cov": cov, "cov_inv": cov_inv, "chol": chol,
                "logdet": logdet},
        sampler=sampler,
        cdf=cdf,
    )


def make_standard_gaussian(d: int = 1) -> TargetMeasure:
    """The identity case f = 1: the target is gamma_d itself."""
    return make_gaussian(np.zeros(d), np.eye(d))


def make_truncated_gaussian(sigma: float) -> TargetMeasure:
    """One-dimensional Gaussian with variance parameter sigma conditioned on
    being positive: f(y) = 1_{[0,inf)}(y) exp(-y^2 / (2 sigma)) / Z.

    Requires sigma >= 1 (the regime in which the drift derivative stays
    negative and the growth experiments are calibrated).  The Lebesgue
    density is a half-normal with variance sigma / (sigma + 1), so
    kappa = 1 + 1/sigma.
    """
    if not sigma >= 1.0:
        raise ValueError("sigma must be >= 1")
    sigma = float(sigma)
    # Normalizing mass of 1_{[0,inf)} e^{-y^2/(2 sigma)} under gamma_1,
    # by adaptive quadrature (closed form (1/2) sqrt(sigma/(sigma+1)) is
    # asserted against this in the tests).
    z_mass, z_err = integrate.quad(
        lambda y: math.exp(-0.5 * y * y / sigma) * math.exp(-0.5 * y * y)
        / math.sqrt(2.0 * math.pi),
        0.0, np.inf, epsabs=1e-14, epsrel=1e-13,
    )
    if z_err > 1e-12:
        raise RuntimeError("normalizer quadrature did not converge")
    log_z = math.log(z_mass)
    half_var = sigma / (sigma + 1.0)

    def log_f(x):
        x = _points(x, 1)[..., 0]
        out = -0.5 * x * x / sigma - log_z
        return np.where(x >= 0.0, out, -np.inf)

    def grad_log_f(x):
        x = _points(x, 1)
        return -x / sigma

    def support_contains(x):
        x = _points(x, 1)[..., 0]
        return x >= 0.0

    def sampler(n, rng):
        return np.abs(rng.standard_normal((n, 1))) * math.sqrt(half_var)

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0.0, 0.0, special.erf(
            np.maximum(x, 0.0) / math.sqrt(2.0 * half_var)))

    return TargetMeasure(
        dim=1,
        log_f=log_f,
        grad_log_f=grad_log_f,
        kappa=1.0 + 1.0 / sigma,
        diam=math.inf,
        support_contains=support_contains,
        label=f"truncated_gaussian_sigma{sigma:g}",
        kind="truncated_gaussian",
        params={"sigma": sigma, "Z": z_mass, "log_Z": log_z,
                "half_variance": half_var},
        sampler=sampler,
        cdf=cdf,
    )


def make_uniform_interval(S: float) -> TargetMeasure:
    """Uniform measure on [0, S]; kappa = 0, diameter S."""
    if not S > 0.0:
        raise ValueError("S must be positive")
    S = float(S)
    log_len = math.log(S)

    def log_f(x):
        x = _points(x, 1)[..., 0]
        out = -log_len + 0.5 * x * x + 0.5 * _LOG_2PI
        return np.where((x >= 0.0) & (x <= S), out, -np.inf)

    def grad_log_f(x):
        return _points(x, 1).copy()

    def support_contains(x):
        x = _points(x, 1)[..., 0]
        return (x >= 0.0) & (x <= S)

    def sampler(n, rng):
        return rng.uniform(0.0, S, size=(n, 1))

    def cdf(x):
        return np.clip(np.asarray(x, dtype=float) / S, 0.0, 1.0)

    return TargetMeasure(
        dim=1,
        log_f=log_f,
        grad_log_f=grad_log_f,
        kappa=0.0,
        diam=S,
        support_contains=support_contains,
        label=f"uniform_interval_S{S:g}",
        kind="uniform_interval",
        params={"S": S, "lo": 0.0, "hi": S},
        sampler=sampler,
        cdf=cdf,
    )


def make_uniform_cube(side: float, d: int) -> TargetMeasure:
    """Uniform measure on the centered cube [-side/2, side/2]^d.

    A product of one-dimensional uniform targets, so the posterior moments
    factorize across axes; useful for dimension sweeps.  kappa = 0 and the
    diameter is side * sqrt(d).
    """
    if not side > 0.0:
        raise ValueError("side must be positive")
    if d < 1:
        raise ValueError("d must be a positive integer")
    side = float(side)
    lo, hi = -0.5 * side, 0.5 * side
    log_vol = d * math.log(side)

    def log_f(x):
        x = _points(x, d)
        inside = np.all((x >= lo) & (x <= hi), axis=-1)
        out = -log_vol + 0.5 * np.sum(x * x, axis=-1) + 0.5 * d * _LOG_2PI
        return np.where(inside, out, -np.inf)

    def grad_log_f(x):
        return _points(x, d).copy()

    def support_contains(x):
        x = _points(x, d)
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def sampler(n, rng):
        return rng.uniform(lo, hi, size=(n, d))

    cdf = None
    if d == 1:
        def cdf(x):
            return np.clip((np.asarray(x, dtype=float) - lo) / side, 0.0, 1.0)

    return TargetMeasure(
        dim=d,
        log_f=log_f,
        grad_log_f=grad_log_f,
        kappa=0.0,
        diam=side * math.sqrt(d),
        support_contains=support_contains,
        label=f"uniform_cube_d{d}_side{side:g}",
        kind="uniform_cube",
        params={"side": side, "lo": lo, "hi": hi},
        sampler=sampler,
        cdf=cdf,
    )


def make_uniform_ball(S: float, d: int) -> TargetMeasure:
    """Uniform measure on the centered ball of diameter S in R^d."""
    if not S > 0.0:
        raise ValueError("S must be positive")
    if d < 1:
        raise ValueError("d must be a positive integer")
    S = float(S)
    r = 0.5 * S
    log_vol = 0.5 * d * math.log(math.pi) + d * math.log(r) \
        - special.gammaln(0.5 * d + 1.0)

    def log_f(x):
        x = _points(x, d)
        sq = np.sum(x * x, axis=-1)
        out = -log_vol + 0.5 * sq + 0.5 * d * _LOG_2PI
        return np.where(sq <= r * r, out, -np.inf)

    def grad_log_f(x):
        return _points(x, d).copy()

    def support_contains(x):
        x = _points(x, d)
        return np.sum(x * x, axis=-1) <= r * r

    def sampler(n, rng):
        z = rng.standard_normal((n, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        u = rng.uniform(size=(n, 1)) ** (1.0 / d)
        return r * u * z

    cdf = None
    if d == 1:
        def cdf(x):
            return np.clip((np.asarray(x, dtype=float) + r) / S, 0.0, 1.0)

    return TargetMeasure(
        dim=d,
        log_f=log_f,
        grad_log_f=grad_log_f,
        kappa=0.0,
        diam=S,
        support_contains=support_contains,
        label=f"uniform_ball_d{d}_S{S:g}",
        kind="uniform_ball",
        params={"S": S, "radius": r},
        sampler=sampler,
        cdf=cdf,
    )


def make_gaussian_mixture(spec: MixtureSpec) -> TargetMeasure:
    """Gaussian location mixture: p = gamma_d convolved with the atomic
    measure sum_i w_i delta_{z_i}.

    The relative density is f(x) = sum_i w_i exp(<x, z_i> - |z_i|^2 / 2).
    kappa is stored as a -inf sentinel; contraction bounds for mixtures go
    through ``spec.radius``.
    """
    atoms = spec.atoms
    weights = spec.weights
    m, d = atoms.shape
    log_w = np.log(weights) if np.all(weights > 0) else np.where(
        weights > 0, np.log(np.maximum(weights, 1e-300)), -np.inf)
    half_sq = 0.5 * np.sum(atoms * atoms, axis=1)

    def _logits(x):
        x = _points(x, d)
        return log_w + x @ atoms.T - half_sq

    def log_f(x):
        return special.logsumexp(_logits(x), axis=-1)

    def grad_log_f(x):
        logits = _logits(x)
        post = np.exp(logits - special.logsumexp(logits, axis=-1,
                                                 keepdims=True))
        return post @ atoms

    def support_contains(x):
        x = _points(x, d)
        return np.ones(x.shape[:-1], dtype=bool)

    def sampler(n, rng):
        idx = rng.choice(m, size=n, p=weights)
        return atoms[idx] + rng.standard_normal((n, d))

    cdf = None
    if d == 1:
        z = atoms[:, 0]

        def cdf(x):
            x = np.asarray(x, dtype=float)
            return special.ndtr(x[..., np.newaxis] - z) @ weights

    return TargetMeasure(
        dim=d,
        log_f=log_f,
        grad_log_f=grad_log_f,
        kappa=-math.inf,
        diam=math.inf,
        support_contains=support_contains,
        label=f"gaussian_mixture_m{m}_d{d}_R{spec.radius:g}",
        kind="gaussian_mixture",
        params={"spec": spec},
        sampler=sampler,
        cdf=cdf,
    )
