"""Piecewise-affine convex payoffs and their derived geometry.

A payoff g is nonnegative, convex, piecewise affine with g(0) = 0 and
terminal slope exactly 1, so that g(x)/x -> 1 as x -> infinity and
g(x) < x somewhere.  The canonical instance is the call (x - K)_+.

Everything derived from g that the estimators and the exercise analysis
need lives here: gbar(x) = x - g(x), the ratio h = g/x, the right
derivative g', the threshold level below which g is proportional to x,
and the maximal intervals on which g is affine.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import inf

import numpy as np

__all__ = ["PayoffSpec", "call_payoff"]


@dataclass(frozen=True)
class PayoffSpec:
    """Convex piecewise-affine payoff given by breakpoints and slopes.

    Parameters
    ----------
    breakpoints:
        Strictly increasing abscissae starting at 0.0 (length m+1).
    slopes:
        Slope of g on each segment [b_i, b_{i+1}) plus the terminal
        segment [b_m, inf) (length m+1).  Must be nondecreasing,
        nonnegative, start below 1 and end exactly at 1.
    """

    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    # g at each breakpoint, precomputed for evaluation
    _values: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        sl = tuple(float(s) for s in self.slopes)
        if len(bp) < 1 or bp[0] != 0.0:
            raise ValueError("breakpoints must start at 0.0")
        if any(b1 >= b2 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if len(sl) != len(bp):
            raise ValueError(f"need {len(bp)} slopes for {len(bp)} breakpoints, got {len(sl)}")
        if any(s1 > s2 for s1, s2 in zip(sl, sl[1:])):
            raise ValueError("slopes must be nondecreasing (convexity)")
        if sl[0] < 0.0:
            raise ValueError("slopes must be nonnegative (g >= 0)")
        if sl[-1] != 1.0:
            raise ValueError("terminal slope must be exactly 1 (g(x)/x -> 1)")
        if sl[0] >= 1.0:
            raise ValueError("initial slope must be < 1 (g(x) < x for some x)")
        vals = [0.0]
        for i in range(len(bp) - 1):
            vals.append(vals[-1] + sl[i] * (bp[i + 1] - bp[i]))
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", sl)
        object.__setattr__(self, "_values", tuple(vals))

    # -- evaluation ---------------------------------------------------------

    def g(self, x):
        """Evaluate g(x).  Accepts scalars or arrays, x >= 0."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0):
            raise ValueError("payoff argument must be nonnegative")
        bp = np.asarray(self.breakpoints)
        vals = np.asarray(self._values)
        sl = np.asarray(self.slopes)
        idx = np.clip(np.searchsorted(bp, x, side="right") - 1, 0, len(bp) - 1)
        out = vals[idx] + sl[idx] * (x - bp[idx])
        return out if out.ndim else float(out)

    def gbar(self, x):
        """Evaluate gbar(x) = x - g(x); nonnegative, nondecreasing, concave."""
        x = np.asarray(x, dtype=float)
        out = x - self.g(x)
        return out if out.ndim else float(out)

    def right_derivative(self, x):
        """Right-continuous nondecreasing derivative g'(x)."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0):
            raise ValueError("payoff argument must be nonnegative")
        bp = np.asarray(self.breakpoints)
        sl = np.asarray(self.slopes)
        idx = np.clip(np.searchsorted(bp, x, side="right") - 1, 0, len(bp) - 1)
        out = sl[idx]
        return out if out.ndim else float(out)

    def h(self, x):
        """g(x)/x with limit conventions h(0) = lim_{x->0} g(x)/x and h(inf) = 1."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        zero = x == 0.0
        infty = np.isinf(x)
        mid = ~zero & ~infty
        out[zero] = self.slopes[0]
        out[infty] = 1.0
        xm = x[mid]
        if xm.size:
            out[mid] = self.g(xm) / xm
        return out if out.ndim else float(out)

    # -- geometry -----------------------------------------------------------

    def threshold(self) -> float:
        """sup{x : g(x) = g'(0) x}; the strike for a call."""
        s0 = self.slopes[0]
        for i, s in enumerate(self.slopes):
            if s > s0:
                return self.breakpoints[i]
        # unreachable: terminal slope 1 > s0 is enforced
        raise AssertionError("no slope change found")

    def affine_interval(self, x: float) -> tuple[float, float]:
        """Maximal interval [l, r] containing x on which g is affine.

        x must be strictly positive; r is math.inf on the terminal segment.
        """
        if not x > 0.0:
            raise ValueError("affine_interval requires x > 0")
        sx = self.right_derivative(x)
        lo = 0.0
        for i, s in enumerate(self.slopes):
            if s == sx:
                lo = self.breakpoints[i]
                break
        hi = inf
        for i, s in enumerate(self.slopes):
            if s > sx:
                hi = self.breakpoints[i]
                break
        return (lo, hi)

    def affine_intervals(self) -> list[tuple[float, float]]:
        """All maximal affine intervals of g, in increasing order.

        Consecutive breakpoints with equal slopes collapse into one
        interval; the last interval is unbounded.
        """
        out = []
        lo = self.breakpoints[0]
        cur = self.slopes[0]
        for i in range(1, len(self.breakpoints)):
            if self.slopes[i] != cur:
                out.append((lo, self.breakpoints[i]))
                lo = self.breakpoints[i]
                cur = self.slopes[i]
        out.append((lo, inf))
        return out


def call_payoff(strike: float) -> PayoffSpec:
    """The call payoff (x - strike)_+."""
    if not strike > 0.0:
        raise ValueError("strike must be positive")
    return PayoffSpec(breakpoints=(0.0, float(strike)), slopes=(0.0, 1.0))
