"""Stable evaluation of the inverse Mills ratio m(x) = phi(x) / Phi(-x).

m is the hazard function of the standard normal:  E[Z | Z > x] = m(x) for
Z ~ N(0,1).  Its derivative satisfies m'(x) = m(x)^2 - x m(x), which lies in
(0, 1) with m'(-inf) = 0, m'(0) = 2/pi, m'(+inf) = 1.  For large positive x
the direct ratio is computed through the classical divergent tail expansion
Phi(-x)/phi(x) ~ (1/x)(1 - x^{-2} + 3 x^{-4} - ...) truncated at its
smallest term, which is accurate to ~1e-15 at the switchover x = 8.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

__all__ = ["mills", "mills_prime", "find_c"]

_SWITCH = 8.0
_LOG_2PI = math.log(2.0 * math.pi)


def _tail_u(x):
    """u(x) such that m(x) = x / (1 - u(x)), from the asymptotic series
    u = x^{-2} - 3 x^{-4} + 15 x^{-6} - ...; adaptive truncation."""
    x = np.asarray(x, dtype=float)
    inv2 = 1.0 / (x * x)
    u = np.zeros_like(x)
    term = inv2.copy()          # (2k-1)!! x^{-2k} at k=1
    prev = np.full_like(x, np.inf)
    sign = 1.0
    for k in range(1, 60):
        grow = np.abs(term) >= prev        # divergence onset, stop there
        small = np.abs(term) < 1e-18
        active = ~(grow | small)
        if not np.any(active):
            break
        u = np.where(active, u + sign * term, u)
        prev = np.where(active, np.abs(term), prev)
        term = term * (2 * k + 1) * inv2
        sign = -sign
    return u


def mills(x):
    """Inverse Mills ratio m(x) = phi(x)/Phi(-x), elementwise."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    low = x < _SWITCH
    if np.any(low):
        xl = x[low]
        out[low] = np.exp(-0.5 * xl * xl - 0.5 * _LOG_2PI
                          - special.log_ndtr(-xl))
    if np.any(~low):
        xh = x[~low]
        out[~low] = xh / (1.0 - _tail_u(xh))
    return out[0] if scalar else out


def mills_prime(x):
    """Derivative m'(x) = m(x)^2 - x m(x) = m(x)(m(x) - x), elementwise."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    m = np.atleast_1d(mills(x))
    out = np.empty_like(x)
    low = x < _SWITCH
    out[low] = m[low] * (m[low] - x[low])
    if np.any(~low):
        # m - x = x u / (1 - u): avoids the catastrophic cancellation of
        # subtracting two nearly equal large numbers.
        xh = x[~low]
        u = _tail_u(xh)
        out[~low] = m[~low] * xh * u / (1.0 - u)
    return out[0] if scalar else out


def find_c(tol: float = 1e-12) -> float:
    """The negative root of m'(c) = 1/3, by bisection on [-10, 0].

    m' increases from 0 at -inf to 2/pi at 0, so the root exists and is
    unique on the negative axis; it sits near -1.13.
    """
    lo, hi = -10.0, 0.0
    flo = float(mills_prime(lo)) - 1.0 / 3.0
    fhi = float(mills_prime(hi)) - 1.0 / 3.0
    if not (flo < 0.0 < fhi):
        raise RuntimeError("bisection bracket lost")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fmid = float(mills_prime(mid)) - 1.0 / 3.0
        if abs(fmid) < tol and hi - lo < 1e-13:
            return mid
        if fmid < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
