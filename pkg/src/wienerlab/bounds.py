"""Eigenvalue envelopes for the drift Jacobian and contraction constants.

For a kappa-log-concave target with support diameter S, the largest
eigenvalue of the drift Jacobian is bounded by an explicit envelope
theta_t, and Gronwall's inequality turns the envelope into an almost-sure
bound on the squared derivative norm of the transport map:

    |DX_1|^2 <= int_0^1 exp(2 int_s^1 theta_r dr) ds.

Two parameter regimes decide which envelope branch is active.  When
kappa S^2 >= 1 the log-concavity branch theta_t = (1-kappa)/((1-kappa)t +
kappa) wins everywhere and the integral evaluates to t((1-kappa)t +
kappa)/kappa.  Otherwise the bounded-support branch (t + S^2 - 1)/(1-t)^2
is sharper up to the switch time t* = (1 - kappa S^2)/((1-kappa)S^2 + 1),
and the integral has a closed form for t >= t*; below t* this module falls
back to direct double quadrature.  Gaussian mixtures with atom radius R use
the constant envelope theta = R^2, giving (e^{2 R^2 t} - 1)/(2 R^2).

The headline per-regime constants (`constant_sq`) are 1/kappa,
((e^{1 - kappa S^2} + 1)/2) S^2, and (e^{2 R^2} - 1)/(2 R^2); the
closed-form time-one Gronwall integral of the kappa S^2 < 1 envelope is
S^2 (e^{2(1 - kappa S^2)} + 1)/2, which is looser.  Ensemble verification
compares simulated |DX_1|^2 against `constant_sq` with a discretization
slack.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .malliavin import FlowEnsemble, malliavin_norm
from .measures import TargetMeasure
from .posterior import drift_jacobian

__all__ = [
    "BoundProfile",
    "ViolationReport",
    "DominanceReport",
    "theta_profile",
    "mixture_profile",
    "profile_for_measure",
    "gronwall_integral",
    "gronwall_quadrature",
    "mixture_constant",
    "rescaled_constants",
    "verify_ensemble",
    "theta_dominance_check",
]

REGIME_KAPPA = "kappaS2_ge_1"
REGIME_SUPPORT = "kappaS2_lt_1"
REGIME_MIXTURE = "mixture"
REGIME_TRIVIAL = "trivial"

_R_TINY = 1e-8


@dataclass(frozen=True)
class BoundProfile:
    """Envelope theta_t with its regime, switch time, and norm constant."""

    regime: str
    kappa: float | None = None
    S: float | None = None
    radius: float | None = None
    switch_time: float | None = None
    constant_sq: float = math.inf

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        if self.regime == REGIME_TRIVIAL:
            raise ValueError("no finite envelope in the trivial regime")
        if self.regime == REGIME_MIXTURE:
            out = np.full_like(t, self.radius ** 2)
            return float(out) if out.ndim == 0 else out
        kappa = self.kappa
        kappa_branch = (1.0 - kappa) / ((1.0 - kappa) * t + kappa)
        if self.regime == REGIME_KAPPA:
            out = kappa_branch
        else:
            # np.where evaluates both branches, and the support branch
            # divides by zero at t = 1 where the kappa branch is selected.
            with np.errstate(divide="ignore"):
                support_branch = (t + self.S ** 2 - 1.0) / (1.0 - t) ** 2
            out = np.where(t <= self.switch_time, support_branch,
                           kappa_branch)
        return float(out) if out.ndim == 0 else out


def theta_profile(kappa: float, S: float = math.inf) -> BoundProfile:
    """Envelope profile for a kappa-log-concave target of diameter S."""
    if not S > 0.0:
        raise ValueError("S must be positive (math.inf allowed)")
    if kappa <= 0.0 and math.isinf(S):
        return BoundProfile(regime=REGIME_TRIVIAL, kappa=kappa, S=S,
                            constant_sq=math.inf)
    if math.isinf(S) or kappa * S * S >= 1.0:
        return BoundProfile(regime=REGIME_KAPPA, kappa=kappa, S=S,
                            constant_sq=1.0 / kappa)
    s2 = S * S
    t_star = (1.0 - kappa * s2) / ((1.0 - kappa) * s2 + 1.0)
    constant = 0.5 * (math.exp(1.0 - kappa * s2) + 1.0) * s2
    return BoundProfile(regime=REGIME_SUPPORT, kappa=kappa, S=S,
                        switch_time=t_star, constant_sq=constant)


def mixture_profile(R: float) -> BoundProfile:
    """Constant envelope theta = R^2 for a Gaussian mixture of atom radius R."""
    if not R > 0.0:
        raise ValueError("R must be positive")
    return BoundProfile(regime=REGIME_MIXTURE, radius=R,
                        constant_sq=mixture_constant(R))


def profile_for_measure(measure: TargetMeasure) -> BoundProfile:
    """The matching envelope profile for a catalog target."""
    if measure.kind == "gaussian_mixture":
        return mixture_profile(measure.params["spec"].radius)
    return theta_profile(measure.kappa, measure.diam)


def mixture_constant(R: float) -> float:
    """(e^{2 R^2} - 1)/(2 R^2), continuously extended to 1 at R = 0."""
    if R < 0.0:
        raise ValueError("R must be nonnegative")
    if R < _R_TINY:
        return 1.0
    return math.expm1(2.0 * R * R) / (2.0 * R * R)


def rescaled_constants(R: float, Sigma) -> float:
    """Functional-inequality constant for anisotropic mixtures: with
    eigenvalue range [lam_min, lam_max] of Sigma, the value
    lam_min lam_max / (2 R^2) * (e^{2 R^2 / lam_min} - 1)."""
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    lam = np.linalg.eigvalsh(Sigma)
    lam_min, lam_max = float(lam[0]), float(lam[-1])
    if lam_min <= 0.0:
        raise ValueError("Sigma must be positive definite")
    if R < _R_TINY:
        return lam_max
    return (lam_min * lam_max / (2.0 * R * R)
            * math.expm1(2.0 * R * R / lam_min))


def _gronwall_closed(profile: BoundProfile, t: float) -> float:
    if profile.regime == REGIME_MIXTURE:
        r2 = profile.radius ** 2
        return math.expm1(2.0 * r2 * t) / (2.0 * r2)
    kappa = profile.kappa
    if profile.regime == REGIME_KAPPA:
        return t * ((1.0 - kappa) * t + kappa) / kappa
    s2 = profile.S ** 2
    quad_part = ((1.0 - kappa) * s2 * t + kappa * s2) ** 2 / (2.0 * s2)
    lin_part = (((1.0 - kappa) * t + kappa)
                * (kappa * s2 + t + (1.0 - kappa) * t * s2 - 1.0))
    return quad_part * math.expm1(2.0 * (1.0 - kappa * s2)) + lin_part


def gronwall_quadrature(profile: BoundProfile, t: float,
                        epsrel: float = 1e-10) -> float:
    """int_0^t exp(2 int_s^t theta) ds by adaptive double quadrature."""
    if profile.regime == REGIME_TRIVIAL:
        raise ValueError("no finite bound in the trivial regime")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if t == 0.0:
        return 0.0
    t_star = profile.switch_time
    breaks = [t_star] if t_star is not None and 0.0 < t_star < t else []

    def inner(s):
        val, _ = integrate.quad(profile.theta, s, t,
                                points=[b for b in breaks if s < b],
                                limit=200, epsabs=1e-13, epsrel=1e-12)
        return math.exp(2.0 * val)

    val, _ = integrate.quad(inner, 0.0, t, points=breaks, limit=200,
                            epsabs=1e-12, epsrel=epsrel)
    return val


def gronwall_integral(profile: BoundProfile, t: float) -> float:
    """Closed form of int_0^t exp(2 int_s^t theta) ds where available.

    In the bounded-support regime the closed form is only valid for
    t >= switch_time; earlier times fall back to quadrature with a warning.
    """
    if profile.regime == REGIME_TRIVIAL:
        raise ValueError("no finite bound in the trivial regime")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if (profile.regime == REGIME_SUPPORT and t < profile.switch_time):
        warnings.warn(
            "closed form is valid only past the switch time; "
            "falling back to quadrature", RuntimeWarning, stacklevel=2)
        return gronwall_quadrature(profile, t)
    return _gronwall_closed(profile, t)


@dataclass(frozen=True)
class ViolationReport:
    constant_sq: float
    slack: float
    max_ratio: float
    n_violations: int
    n_paths: int
    passed: bool


def verify_ensemble(flows, profile: BoundProfile,
                    slack: float = 0.05) -> ViolationReport:
    """Count paths whose |DX_1|^2 exceeds the profile constant by more than
    the discretization slack, and report the worst ratio."""
    if isinstance(flows, FlowEnsemble):
        norms = flows.norms_final[~flows.failed]
    else:
        norms = np.array([malliavin_norm(fl, 1.0) for fl in flows
                          if not fl.failed])
    if norms.size == 0:
        raise ValueError("no surviving flows")
    c = profile.constant_sq
    ratios = norms ** 2 / c if math.isfinite(c) else np.zeros(norms.size)
    max_ratio = float(ratios.max())
    n_viol = int(np.sum(ratios > 1.0 + slack))
    return ViolationReport(constant_sq=c, slack=slack, max_ratio=max_ratio,
                           n_violations=n_viol, n_paths=int(norms.size),
                           passed=n_viol == 0)


@dataclass(frozen=True)
class DominanceReport:
    max_excess: float
    tolerance: float
    n_paths: int
    n_nodes: int
    passed: bool


def theta_dominance_check(measure: TargetMeasure, ensemble,
                          profile: BoundProfile | None = None,
                          tol: float = 1e-6, max_paths: int = 500,
                          node_stride: int = 1) -> DominanceReport:
    """Largest observed lambda_max(grad v(t, X_t)) - theta_t over sampled
    paths and nodes; the envelope must dominate up to the tolerance."""
    if profile is None:
        profile = profile_for_measure(measure)
    ok = np.flatnonzero(~ensemble.failed)[:max_paths]
    nodes = ensemble.grid.nodes
    max_excess = -math.inf
    count = 0
    for k in range(0, nodes.size, node_stride):
        t = nodes[k]
        J = drift_jacobian(measure, t, ensemble.states[ok, k, :])
        lam = np.linalg.eigvalsh(0.5 * (J + np.swapaxes(J, 1, 2)))[:, -1]
        max_excess = max(max_excess, float(np.max(lam - profile.theta(t))))
        count += 1
    return DominanceReport(max_excess=max_excess, tolerance=tol,
                           n_paths=int(ok.size), n_nodes=count,
                           passed=max_excess <= tol)
