import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bubblecall.payoff import PayoffSpec, call_payoff


class TestCallExamples:
    def test_g(self, call_k1):
        assert call_k1.g(2.0) == 1.0
        assert call_k1.g(0.5) == 0.0
        assert call_k1.g(1.0) == 0.0

    def test_g_rejects_negative(self, call_k1):
        with pytest.raises(ValueError):
            call_k1.g(-0.1)

    def test_gbar(self, call_k1):
        # x ^ K for the call
        assert call_k1.gbar(2.0) == 1.0
        assert call_k1.gbar(0.5) == 0.5
        assert call_k1.gbar(0.0) == 0.0

    def test_right_derivative(self, call_k1):
        assert call_k1.right_derivative(1.0) == 1.0  # right slope at the kink
        assert call_k1.right_derivative(0.99) == 0.0
        assert call_k1.right_derivative(0.0) == 0.0

    def test_threshold(self, call_k1):
        assert call_k1.threshold() == 1.0
        assert call_payoff(2.0).threshold() == 2.0

    def test_threshold_sloped_start(self):
        # g'(0) = 0.5 on [0, 3], then slope 1: sup{x : g(x) = 0.5 x} = 3
        p = PayoffSpec(breakpoints=(0.0, 3.0), slopes=(0.5, 1.0))
        assert p.threshold() == 3.0

    def test_affine_interval(self, call_k1):
        assert call_k1.affine_interval(0.5) == (0.0, 1.0)
        assert call_k1.affine_interval(3.0) == (1.0, math.inf)
        with pytest.raises(ValueError):
            call_k1.affine_interval(0.0)

    def test_affine_intervals_enumeration(self):
        p = PayoffSpec(breakpoints=(0.0, 1.0, 2.0), slopes=(0.0, 0.5, 1.0))
        assert p.affine_intervals() == [(0.0, 1.0), (1.0, 2.0), (2.0, math.inf)]

    def test_h(self, call_k1):
        assert call_k1.h(2.0) == 0.5
        assert call_k1.h(math.inf) == 1.0
        assert call_k1.h(0.0) == 0.0


class TestValidation:
    def test_terminal_slope_must_be_one(self):
        with pytest.raises(ValueError, match="terminal slope"):
            PayoffSpec(breakpoints=(0.0, 1.0), slopes=(0.0, 0.9))

    def test_identity_payoff_rejected(self):
        # g(x) = x violates g(x) < x somewhere
        with pytest.raises(ValueError, match="initial slope"):
            PayoffSpec(breakpoints=(0.0,), slopes=(1.0,))

    def test_convexity_required(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            PayoffSpec(breakpoints=(0.0, 1.0, 2.0), slopes=(0.5, 0.2, 1.0))

    def test_negative_slope_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            PayoffSpec(breakpoints=(0.0, 1.0), slopes=(-0.5, 1.0))

    def test_breakpoints_must_start_at_zero(self):
        with pytest.raises(ValueError, match="start at 0"):
            PayoffSpec(breakpoints=(1.0, 2.0), slopes=(0.0, 1.0))

    def test_strike_positive(self):
        with pytest.raises(ValueError):
            call_payoff(0.0)


# random convex piecewise payoffs for the property tests
@st.composite
def payoffs(draw):
    m = draw(st.integers(min_value=1, max_value=5))
    gaps = draw(st.lists(st.floats(0.1, 5.0), min_size=m, max_size=m))
    bps = (0.0, *np.cumsum(gaps))
    incs = draw(st.lists(st.floats(0.0, 1.0), min_size=m, max_size=m))
    total = sum(incs)
    if total == 0.0:
        incs = [1.0] * m
        total = float(m)
    start = draw(st.floats(0.0, 0.99))
    frac = np.concatenate([[0.0], np.cumsum(incs) / total])
    slopes = np.minimum(start + (1.0 - start) * frac, 1.0)
    slopes[-1] = 1.0
    return PayoffSpec(breakpoints=tuple(bps), slopes=tuple(slopes))


# subnormal arguments make g(x)/x pure rounding noise; they are not a
# meaningful price scale, so the property domain starts at 1e-8
xs = st.one_of(st.just(0.0), st.floats(min_value=1e-8, max_value=50.0))


@settings(max_examples=200, deadline=None)
@given(payoffs(), xs, xs)
def test_monotone_derived_functions(p, x, y):
    lo, hi = sorted((x, y))
    assert p.right_derivative(lo) <= p.right_derivative(hi) + 1e-12
    assert p.h(lo) <= p.h(hi) + 1e-12
    assert p.gbar(lo) <= p.gbar(hi) + 1e-12


@settings(max_examples=200, deadline=None)
@given(payoffs(), xs)
def test_g_plus_gbar_is_identity(p, x):
    assert p.g(x) + p.gbar(x) == pytest.approx(x, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(payoffs(), xs, xs, st.floats(0.0, 1.0))
def test_convexity(p, x, y, lam):
    mid = lam * x + (1.0 - lam) * y
    assert p.g(mid) <= lam * p.g(x) + (1.0 - lam) * p.g(y) + 1e-9


@settings(max_examples=200, deadline=None)
@given(payoffs(), st.floats(0.01, 50.0))
def test_affine_interval_collinearity(p, x):
    lo, hi = p.affine_interval(x)
    assert lo <= x <= hi
    right = min(hi, 2.0 * x + 10.0)  # finite probe inside an unbounded interval
    a, b, c = lo, 0.5 * (lo + right), right
    ga, gb, gc = p.g(a), p.g(b), p.g(c)
    # three-point collinearity on the interval
    assert gb == pytest.approx(0.5 * (ga + gc), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(payoffs(), xs)
def test_threshold_characterizes_proportional_part(p, x):
    k = p.threshold()
    s0 = p.slopes[0]
    if x <= k:
        assert p.g(x) == pytest.approx(s0 * x, abs=1e-12)
    else:
        assert p.g(x) > s0 * x - 1e-12


@settings(max_examples=100, deadline=None)
@given(payoffs())
def test_vectorized_eval_matches_scalar(p):
    grid = np.linspace(0.0, 20.0, 41)
    vec = p.g(grid)
    assert vec.shape == grid.shape
    for x, v in zip(grid, vec):
        assert v == p.g(float(x))
