"""Independent oracles for the test suite.

Everything here is deliberately computed by a different route than the
library code: quadrature against transition densities instead of closed
forms, brute-force enumeration instead of vectorized scans.  Frozen
expected values in the tests were produced by these functions.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad


def bessel3_density(y: float, r0: float, t: float) -> float:
    """Transition density of the 3-D Bessel process R_t from r0 > 0."""
    return (y / (r0 * np.sqrt(2.0 * np.pi * t))
            * (np.exp(-((y - r0) ** 2) / (2.0 * t))
               - np.exp(-((y + r0) ** 2) / (2.0 * t))))


def reciprocal_bessel_mean_quad(x: float, t: float, T: float) -> float:
    """E[S_T | S_t = x] for S = 1/R by quadrature against the R density."""
    tau = T - t
    val, _ = quad(lambda y: bessel3_density(y, 1.0 / x, tau) / y, 0.0, np.inf, limit=200)
    return val


def ebar_quad(x: float, strike: float, T: float) -> float:
    """E[S_T ^ strike | S_0 = x] for the reciprocal Bessel price."""
    val, _ = quad(lambda y: min(1.0 / y, strike) * bessel3_density(y, 1.0 / x, T),
                  0.0, np.inf, limit=200)
    return val


def european_call_quad(x: float, strike: float, T: float) -> float:
    """E[(S_T - strike)_+ | S_0 = x] for the reciprocal Bessel price."""
    val, _ = quad(lambda y: max(1.0 / y - strike, 0.0) * bessel3_density(y, 1.0 / x, T),
                  0.0, 1.0 / strike, limit=200)
    return val


def ratio_payoff_quad(strike: float, r0: float, T: float) -> float:
    """E[(1 - strike / R_T)_+] against the 3-D Bessel density.

    This is E[X_T] for the coupled-deflator market, where X_T = h(S_T)
    with S the Bessel process itself.
    """
    val, _ = quad(lambda y: (1.0 - strike / y) * bessel3_density(y, r0, T),
                  strike, np.inf, limit=200)
    return val


def lognormal_capped_mean_quad(x: float, strike: float, T: float,
                               sigma: float, rate: float = 0.0) -> float:
    """Discounted E[S_T ^ strike] for dS = r S dt + sigma S dB (lognormal S_T)."""
    mu = np.log(x) + (rate - 0.5 * sigma * sigma) * T
    sd = sigma * np.sqrt(T)

    def integrand(z):
        s = np.exp(mu + sd * z)
        return min(s, strike) * np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)

    val, _ = quad(integrand, -12.0, 12.0, limit=200)
    return float(np.exp(-rate * T) * val)


def deterministic_compounding(s0: float, rate_times, rate_values, T: float,
                              n: int = 200_000) -> float:
    """Brute-force ODE limit of dS = r(t) S dt by fine Riemann compounding."""
    ts = np.linspace(0.0, T, n + 1)[:-1]
    idx = np.clip(np.searchsorted(rate_times, ts, side="right") - 1, 0,
                  len(rate_times) - 1)
    r = np.asarray(rate_values)[idx]
    return float(s0 * np.exp(np.sum(r) * (T / n)))


def power_tail_integral(coefficient: float, exponent: float) -> float | None:
    """Analytic integral of x / (c x^p)^2 over [1, inf); None when divergent."""
    power = 2.0 * exponent - 1.0  # integrand decays like x^-power
    if power <= 1.0:
        return None
    return 1.0 / (coefficient ** 2 * (power - 1.0))
