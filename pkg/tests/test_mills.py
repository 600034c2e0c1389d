"""Gaussian hazard ratio m(x) = phi(x) / Phi(-x) and its derivative.

The direct log-domain evaluation is exact for moderate x; the asymptotic
series branch must join it continuously at the switchover and stay accurate
far into the tail, where mpmath-grade reference values are frozen below.
The root c of m'(c) = 1/3 is pinned to 1e-12.
"""

import math

import numpy as np
from scipy import special, stats

from wienerlab.mills import find_c, mills, mills_prime

# mpmath (50 digits): m(x) for x in (8, 10, 20, 50)
TAIL_M = {
    8.0: 8.1213681122361127,
    10.0: 10.098093233962512,
    20.0: 20.049753068527851,
    50.0: 50.01998403190564,
}


def test_matches_direct_formula_moderate():
    xs = np.linspace(-37.0, 7.9, 1500)
    ref = stats.norm.pdf(xs) / special.ndtr(-xs)
    got = mills(xs)
    assert np.max(np.abs(got - ref) / ref) < 1e-13


def test_tail_values_frozen():
    for x, ref in TAIL_M.items():
        assert abs(mills(x) - ref) < 1e-13 * ref


def test_branch_continuity_at_switch():
    lo = mills(8.0 - 1e-12)
    hi = mills(8.0 + 1e-12)
    assert abs(lo - hi) < 1e-12 * hi
    lo_p = mills_prime(8.0 - 1e-12)
    hi_p = mills_prime(8.0 + 1e-12)
    assert abs(lo_p - hi_p) < 1e-11


def test_prime_is_derivative():
    xs = np.concatenate([np.linspace(-8.0, 7.5, 300),
                         np.linspace(8.5, 30.0, 100)])
    h = 1e-6
    fd = (mills(xs + h) - mills(xs - h)) / (2.0 * h)
    got = mills_prime(xs)
    assert np.max(np.abs(got - fd)) < 1e-7


def test_prime_identity():
    # m' = m (m - x) follows from differentiating the quotient
    xs = np.linspace(-20.0, 40.0, 2000)
    m = mills(xs)
    assert np.max(np.abs(mills_prime(xs) - m * (m - xs))) < 1e-12


def test_prime_range_and_monotone():
    xs = np.linspace(-30.0, 30.0, 5000)
    p = mills_prime(xs)
    assert np.all(p > 0.0)
    assert np.all(p < 1.0)
    assert np.all(np.diff(p) > 0.0)


def test_limits():
    assert mills(-38.0) < 1e-300
    assert abs(mills(0.0) - math.sqrt(2.0 / math.pi)) < 1e-15
    # m(x) ~ x + 1/x for large x
    assert abs(mills(1e4) - 1e4 - 1e-4) < 1e-11


def test_find_c():
    c = find_c()
    # mpmath root of m'(c) = 1/3: -1.1252994236370873
    assert abs(c - (-1.1252994236370873)) < 1e-11
    assert abs(mills_prime(c) - 1.0 / 3.0) < 1e-12


def test_scalar_and_array_types():
    assert isinstance(mills(1.0), float)
    assert isinstance(mills_prime(1.0), float)
    assert mills(np.array([1.0, 9.0])).shape == (2,)
