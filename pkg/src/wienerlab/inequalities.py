"""Empirical certification of entropy, moment, and isoperimetric bounds.

The contraction constants produced by the bounds module imply, for a target
p, three families of inequalities over test functions eta:

* divergence-entropy bounds  Ent^Psi(eta) <= (C^2/2) E[Psi''(eta)|grad eta|^2],
  for any divergence Psi (Psi, Psi'', -1/Psi'' all convex on the domain);
* even-moment bounds  E[eta^q] <= C^q (q-1)^{q/2} E[|grad eta|^q] for
  centered eta and even q;
* one-dimensional isoperimetry for half-lines A = (-inf, a]:
  p[A + r] >= Phi(Phi^{-1}(p[A]) + r/C) with Phi the standard normal CDF.

The first two are sampled statements: both sides are Monte Carlo averages
over draws from p, and a finite test family can only falsify, never prove.
A check therefore fails only on a statistically significant violation,
left side above right side by more than ``BOOTSTRAP_SD_MARGIN`` bootstrap
standard deviations of the gap.  The isoperimetric check is exact CDF
arithmetic with a fixed additive slack and no sampling.

The isoperimetric comparison is implemented in the conventional Gaussian
form, with the quantile function applied to the mass before adding r/C.
An alternative reading puts the raw mass inside Phi; every row records
that evaluation too (``rhs_alt``) without judging against it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .measures import TargetMeasure

__all__ = [
    "Divergence",
    "TestFunction",
    "TestFunctionFamily",
    "InequalityRow",
    "InequalityReport",
    "poincare_divergence",
    "log_sobolev_divergence",
    "default_family",
    "psi_sobolev_check",
    "q_poincare_check",
    "isoperimetric_check_1d",
]

BOOTSTRAP_SD_MARGIN = 2.0
ISOPER_SLACK = 1e-9
_CONVEXITY_POINTS = 100
_CONVEXITY_TOL = 1e-7


def _second_differences(fun, lo: float, hi: float) -> np.ndarray:
    """Centered second differences of ``fun`` at interior grid points."""
    a = lo if math.isfinite(lo) else -8.0
    b = hi if math.isfinite(hi) else 8.0
    if math.isfinite(lo):
        a = lo + 0.02 * (b - lo)
    grid = np.linspace(a, b, _CONVEXITY_POINTS)
    h = 0.25 * (grid[1] - grid[0])
    return fun(grid + h) - 2.0 * fun(grid) + fun(grid - h)


@dataclass(frozen=True)
class Divergence:
    """A divergence Psi on a (possibly unbounded) domain interval.

    Psi, Psi'', and -1/Psi'' must all be convex on the interval; this is
    checked by finite differences at construction.  ``psi`` and ``psi2``
    must accept arrays elementwise.
    """

    label: str
    psi: Callable[[np.ndarray], np.ndarray]
    psi2: Callable[[np.ndarray], np.ndarray]
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("domain interval is empty")
        checks = [("psi", self.psi), ("psi''", self.psi2),
                  ("-1/psi''", lambda x: -1.0 / self.psi2(x))]
        for name, fun in checks:
            if np.min(_second_differences(fun, self.lo, self.hi)) \
                    < -_CONVEXITY_TOL:
                raise ValueError(f"{name} is not convex on the domain")

    def contains(self, values: np.ndarray) -> bool:
        values = np.asarray(values)
        return bool(np.all(values > self.lo) and np.all(values < self.hi))


def poincare_divergence() -> Divergence:
    """Psi(x) = x^2 on the whole line (variance of eta on the left)."""
    return Divergence(label="square", psi=lambda x: np.square(x),
                      psi2=lambda x: np.full_like(np.asarray(x, float), 2.0))


def log_sobolev_divergence() -> Divergence:
    """Psi(x) = x log x on (0, inf) (entropy of eta on the left)."""
    return Divergence(label="xlogx", psi=lambda x: x * np.log(x),
                      psi2=lambda x: 1.0 / np.asarray(x, float), lo=0.0)


@dataclass(frozen=True)
class TestFunction:
    """A scalar test function on R^d with its gradient.

    ``value`` maps points (n, d) to (n,); ``gradient`` maps (n, d) to
    (n, d).  Functions should be continuously differentiable; keeping the
    gradient bounded on the target's support is the caller's design choice
    (the default family includes a growing exponential on purpose, to
    probe tails).
    """

    label: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TestFunctionFamily:
    """Test functions plus (optionally) the divergence they are tried on."""

    functions: Sequence[TestFunction]
    divergence: Optional[Divergence] = None


def _first_coordinate_function(label, f, df) -> TestFunction:
    def value(X):
        return f(np.asarray(X, dtype=float)[:, 0])

    def gradient(X):
        X = np.asarray(X, dtype=float)
        g = np.zeros_like(X)
        g[:, 0] = df(X[:, 0])
        return g

    return TestFunction(label=label, value=value, gradient=gradient)


def default_family(divergence: Optional[Divergence] = None,
                   exp_rate: float = 0.8,
                   frequency: float = 3.0) -> TestFunctionFamily:
    """Linear, centered quadratic, exponential, oscillation, and a smoothed
    ramp, all acting on the first coordinate.

    The family probes tails, curvature, oscillation, and kink-like
    behavior; out-of-domain members (for example sign-changing functions
    under the x log x divergence) are skipped by the checks at run time.
    """
    if not 0.0 < exp_rate <= 1.0:
        raise ValueError("exp_rate must lie in (0, 1]")
    if not 0.0 < frequency <= 4.0:
        raise ValueError("frequency must lie in (0, 4]")
    delta = 0.25
    functions = (
        _first_coordinate_function("linear", lambda u: u,
                                   lambda u: np.ones_like(u)),
        _first_coordinate_function("quadratic_centered",
                                   lambda u: u * u - 1.0, lambda u: 2.0 * u),
        _first_coordinate_function(f"exp_{exp_rate:g}",
                                   lambda u: np.exp(exp_rate * u),
                                   lambda u: exp_rate * np.exp(exp_rate * u)),
        _first_coordinate_function(f"sin_{frequency:g}",
                                   lambda u: np.sin(frequency * u),
                                   lambda u: frequency
                                   * np.cos(frequency * u)),
        _first_coordinate_function(
            "smooth_ramp",
            lambda u: 0.5 * (u + np.sqrt(u * u + delta * delta)),
            lambda u: 0.5 * (1.0 + u / np.sqrt(u * u + delta * delta))),
    )
    return TestFunctionFamily(functions=functions, divergence=divergence)


@dataclass(frozen=True)
class InequalityRow:
    """One (inequality, test function) comparison for the CSV report."""

    inequality: str
    function_label: str
    lhs: float
    rhs: float
    margin: float
    verdict: str
    boot_sd: Optional[float] = None
    rhs_alt: Optional[float] = None


@dataclass(frozen=True)
class InequalityReport:
    rows: tuple

    @property
    def passed(self) -> bool:
        evaluated = [r for r in self.rows if r.verdict != "skipped"]
        return bool(evaluated) and all(r.verdict == "pass"
                                       for r in evaluated)

    def row(self, function_label: str) -> InequalityRow:
        for r in self.rows:
            if r.function_label == function_label:
                return r
        raise KeyError(function_label)


def _as_points(samples) -> np.ndarray:
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("samples must be an (n, d) array with n >= 2")
    return X


def _bootstrap_chunks(n: int, n_boot: int, seed: int):
    """Resampled index blocks, capped around 4e6 entries per block."""
    rng = np.random.default_rng(seed)
    chunk = max(1, min(n_boot, 4_000_000 // n))
    done = 0
    while done < n_boot:
        take = min(chunk, n_boot - done)
        yield rng.integers(0, n, size=(take, n))
        done += take


def psi_sobolev_check(samples, family: TestFunctionFamily, C_sq: float,
                      n_boot: int = 200, seed: int = 0) -> InequalityReport:
    """Divergence-entropy inequality over a test family, with bootstrap.

    For each in-domain eta the row compares the plug-in divergence entropy
    (left) against (C_sq/2) times the mean of Psi''(eta)|grad eta|^2
    (right); the verdict is "fail" only when the left side exceeds the
    right by more than two bootstrap standard deviations of the gap.
    Functions whose values leave the divergence domain are skipped with a
    warning.
    """
    if family.divergence is None:
        raise ValueError("family carries no divergence")
    if not C_sq > 0.0:
        raise ValueError("C_sq must be positive")
    X = _as_points(samples)
    n = X.shape[0]
    div = family.divergence
    rows = []
    for fn in family.functions:
        vals = np.asarray(fn.value(X), dtype=float)
        if not div.contains(vals) or not div.lo < float(np.mean(vals)) \
                < div.hi:
            warnings.warn(f"{fn.label}: values leave the {div.label} "
                          "domain; function skipped")
            rows.append(InequalityRow(
                inequality=f"psi_sobolev_{div.label}",
                function_label=fn.label, lhs=math.nan, rhs=math.nan,
                margin=math.nan, verdict="skipped"))
            continue
        grads = np.asarray(fn.gradient(X), dtype=float)
        weight = div.psi2(vals) * np.sum(grads * grads, axis=1)
        lhs = float(np.mean(div.psi(vals)) - div.psi(np.mean(vals)))
        rhs = float(0.5 * C_sq * np.mean(weight))
        gaps = []
        for idx in _bootstrap_chunks(n, n_boot, seed):
            v = vals[idx]
            w = weight[idx]
            lhs_b = np.mean(div.psi(v), axis=1) - div.psi(np.mean(v, axis=1))
            rhs_b = 0.5 * C_sq * np.mean(w, axis=1)
            gaps.append(rhs_b - lhs_b)
        sd = float(np.std(np.concatenate(gaps), ddof=1))
        margin = rhs + BOOTSTRAP_SD_MARGIN * sd - lhs
        rows.append(InequalityRow(
            inequality=f"psi_sobolev_{div.label}", function_label=fn.label,
            lhs=lhs, rhs=rhs, margin=margin,
            verdict="pass" if margin >= 0.0 else "fail", boot_sd=sd))
    return InequalityReport(rows=tuple(rows))


def q_poincare_check(samples, eta_family: TestFunctionFamily, q: int,
                     C: float, n_boot: int = 200,
                     seed: int = 0) -> InequalityReport:
    """Even-moment inequality E[eta^q] <= C^q (q-1)^{q/2} E[|grad eta|^q].

    eta is centered empirically (within each bootstrap replicate as well);
    q must be an even integer of at least two.
    """
    if int(q) != q or q < 2 or q % 2 != 0:
        raise ValueError("q must be an even integer >= 2")
    if not C > 0.0:
        raise ValueError("C must be positive")
    q = int(q)
    X = _as_points(samples)
    n = X.shape[0]
    factor = C ** q * (q - 1) ** (q / 2.0)
    rows = []
    for fn in eta_family.functions:
        vals = np.asarray(fn.value(X), dtype=float)
        grads = np.asarray(fn.gradient(X), dtype=float)
        gq = np.sum(grads * grads, axis=1) ** (q / 2.0)
        lhs = float(np.mean((vals - np.mean(vals)) ** q))
        rhs = float(factor * np.mean(gq))
        gaps = []
        for idx in _bootstrap_chunks(n, n_boot, seed):
            v = vals[idx]
            centered = v - np.mean(v, axis=1, keepdims=True)
            lhs_b = np.mean(centered ** q, axis=1)
            rhs_b = factor * np.mean(gq[idx], axis=1)
            gaps.append(rhs_b - lhs_b)
        sd = float(np.std(np.concatenate(gaps), ddof=1))
        margin = rhs + BOOTSTRAP_SD_MARGIN * sd - lhs
        rows.append(InequalityRow(
            inequality=f"poincare_q{q}", function_label=fn.label,
            lhs=lhs, rhs=rhs, margin=margin,
            verdict="pass" if margin >= 0.0 else "fail", boot_sd=sd))
    return InequalityReport(rows=tuple(rows))


def _quantile_from_cdf(measure: TargetMeasure, level: float) -> float:
    lo, hi = -1.0, 1.0
    while float(measure.cdf(np.array(lo))) > level:
        lo *= 2.0
    while float(measure.cdf(np.array(hi))) < level:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if float(measure.cdf(np.array(mid))) < level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def isoperimetric_check_1d(measure: TargetMeasure, levels, r_values,
                           C: float) -> InequalityReport:
    """Half-line isoperimetry p[A + r] >= Phi(Phi^{-1}(p[A]) + r/C).

    A = (-inf, a] with a the CDF quantile of each level; both sides are
    exact CDF arithmetic (no sampling), compared with a fixed 1e-9 additive
    slack.  Each row also records the alternative reading with the raw
    mass inside Phi (``rhs_alt``); only the conventional form is judged.
    """
    if measure.dim != 1 or measure.cdf is None:
        raise ValueError("isoperimetry needs a 1D measure with a CDF")
    if not C > 0.0:
        raise ValueError("C must be positive")
    rows = []
    for level in levels:
        if not 0.0 < level < 1.0:
            raise ValueError("levels must lie strictly inside (0, 1)")
        a = _quantile_from_cdf(measure, float(level))
        mass = float(measure.cdf(np.array(a)))
        for r in r_values:
            if r < 0.0:
                raise ValueError("r must be nonnegative")
            lhs = float(measure.cdf(np.array(a + r)))
            rhs = float(ndtr(ndtri(mass) + r / C))
            rhs_alt = float(ndtr(mass + r / C))
            margin = lhs - rhs + ISOPER_SLACK
            rows.append(InequalityRow(
                inequality="isoperimetry_halfline",
                function_label=f"level_{level:g}_r_{r:g}",
                lhs=lhs, rhs=rhs, margin=margin,
                verdict="pass" if margin >= 0.0 else "fail",
                rhs_alt=rhs_alt))
    return InequalityReport(rows=tuple(rows))
