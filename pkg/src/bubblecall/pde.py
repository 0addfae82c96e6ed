"""Finite-difference solver for the bubble-market Cauchy problems.

The European value of the concave payoff gbar solves

    u_t + 0.5 vol(x)^2 u_xx + r(t) x u_x - r(t) u = 0,   u(x, T) = gbar(x),

with u(0, t) = 0.  Because gbar has strictly sublinear growth this
problem has a unique solution in the sublinear class, and the American
call value is assembled from it as a(x, t) = x - ebar(x, t); a is never
solved for directly (in the linear-growth class the problem is not
uniquely solvable when the discounted price is a strict local
martingale).  The European call value e solves the same equation with
terminal g and is the minimal nonnegative solution; the gap a - e is
then strictly positive in the bubble regime.

Scheme: theta time stepping (Crank-Nicolson with a Rannacher start of
two implicit-Euler half-step pairs) on a nonuniform x-grid, uniform in
time, tridiagonal solves via banded LU.  The far boundary at x = R is
Dirichlet: gbar(R) for the sublinear solve; for the European solve
either 0 (minimal-solution truncation, monotone from below in R) or a
supplied large-x asymptote.  R-escalation doubles the radius until the
solution stops moving on a fixed inner window.

In the strict-local-martingale regime the truncation error of these
problems decays only like 1/R (the far tail carries the martingale
defect), so far-field studies need generous radii and tolerances; the
defaults suit interior evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .models import PiecewiseRate
from .payoff import PayoffSpec

__all__ = [
    "PdeProblem",
    "PdeGrid",
    "PdeSolution",
    "PdeEscalationError",
    "GROWTH_SUBLINEAR",
    "GROWTH_LINEAR",
    "solve_ebar",
    "solve_european",
    "american_price",
    "multiplicity_gap",
    "parity_residual",
    "theta_residual",
]

GROWTH_SUBLINEAR = "strictly-sublinear"
GROWTH_LINEAR = "linear"

TERMINAL_GBAR = "gbar"
TERMINAL_G = "g"
TERMINAL_ZERO = "zero"

FAR_ZERO = "zero"
FAR_PAYOFF = "payoff"


class PdeEscalationError(RuntimeError):
    """Radius escalation failed to converge; carries the (R, change) history."""

    def __init__(self, message: str, history: list[tuple[float, float]]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class PdeProblem:
    """One Cauchy problem: operator coefficients, terminal data, growth class."""

    vol: Callable[[np.ndarray], np.ndarray]
    payoff: PayoffSpec
    horizon: float
    terminal: str = TERMINAL_GBAR
    rate: PiecewiseRate = PiecewiseRate()
    growth_class: str = GROWTH_SUBLINEAR

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.terminal not in (TERMINAL_GBAR, TERMINAL_G, TERMINAL_ZERO):
            raise ValueError(f"unknown terminal tag {self.terminal!r}")
        if self.growth_class not in (GROWTH_SUBLINEAR, GROWTH_LINEAR):
            raise ValueError(f"unknown growth class {self.growth_class!r}")
        if self.terminal == TERMINAL_GBAR and self.growth_class != GROWTH_SUBLINEAR:
            raise ValueError("gbar terminal data has strictly sublinear growth")
        if self.terminal == TERMINAL_G and self.growth_class != GROWTH_LINEAR:
            raise ValueError("g terminal data has linear growth")
        v0 = float(np.asarray(self.vol(np.array([0.0]))))
        if v0 != 0.0:
            raise ValueError("vol(0) must be 0 (degenerate boundary at the origin)")

    def terminal_values(self, x: np.ndarray) -> np.ndarray:
        if self.terminal == TERMINAL_GBAR:
            return self.payoff.gbar(x)
        if self.terminal == TERMINAL_G:
            return self.payoff.g(x)
        return np.zeros_like(x)


@dataclass(frozen=True)
class PdeGrid:
    """Discretization parameters.

    The x-grid is uniform with spacing ~inner_span/n_inner on
    [0, inner_span] (covering the origin and the strike) and stretches
    geometrically beyond, reaching the truncation radius with n_outer
    intervals.  base_radius is the starting radius of the escalation;
    window is the fixed inner interval on which successive radii are
    compared (half the base radius when unset).
    """

    n_inner: int = 240
    inner_span: float = 3.0
    n_outer: int = 160
    n_steps: int = 1000
    base_radius: float = 8.0
    max_doublings: int = 6
    tolerance: float = 1e-5
    window: float | None = None

    def x_grid(self, radius: float) -> np.ndarray:
        if radius <= self.inner_span:
            raise ValueError("radius must exceed the inner span")
        h = self.inner_span / self.n_inner
        inner = np.linspace(0.0, self.inner_span, self.n_inner + 1)
        # geometric spacings h*q, h*q^2, ... summing to radius - inner_span
        target = (radius - self.inner_span) / h
        lo, hi = 1.0 + 1e-9, 2.0
        while _geo_sum(hi, self.n_outer) < target:
            hi *= 1.5
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if _geo_sum(mid, self.n_outer) < target:
                lo = mid
            else:
                hi = mid
        q = 0.5 * (lo + hi)
        steps = h * q ** np.arange(1, self.n_outer + 1)
        outer = self.inner_span + np.cumsum(steps)
        outer[-1] = radius
        return np.concatenate([inner, outer])


def _geo_sum(q: float, n: int) -> float:
    return (q * (q**n - 1.0)) / (q - 1.0)


@dataclass(frozen=True, eq=False)
class PdeSolution:
    """Space-time values of one solve plus the escalation record."""

    x_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray  # shape (n_t, n_x), values[k] at t_grid[k]
    truncation_radius: float
    growth_class: str
    problem: PdeProblem
    convergence_history: tuple[tuple[float, float], ...] = field(default=())

    def value_at(self, x, t: float = 0.0):
        """Linear interpolation in x at a grid time t."""
        k = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[k] - t) > 1e-9 * max(1.0, self.t_grid[-1]):
            raise ValueError(f"t = {t} is not on the time grid")
        out = np.interp(np.asarray(x, dtype=float), self.x_grid, self.values[k])
        return out if out.ndim else float(out)

    @property
    def terminal_slice(self) -> np.ndarray:
        return self.values[-1]

    @property
    def initial_slice(self) -> np.ndarray:
        return self.values[0]


# --------------------------------------------------------------------------
# Core theta-scheme march
# --------------------------------------------------------------------------

def _operator_bands(x: np.ndarray, vol_sq: np.ndarray, r: float):
    """Tridiagonal coefficients of A = 0.5 vol^2 D2 + r x D1 - r I (interior)."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    xs = x[1:-1]
    a = vol_sq[1:-1] * 0.5
    lower = 2.0 * a / (hm * (hm + hp)) - r * xs * hp / (hm * (hm + hp))
    upper = 2.0 * a / (hp * (hm + hp)) + r * xs * hm / (hp * (hm + hp))
    diag = -2.0 * a / (hm * hp) + r * xs * (hp - hm) / (hm * hp) - r
    return lower, diag, upper


def _theta_step(u: np.ndarray, lower, diag, upper, dt: float, theta: float,
                left: float, right: float) -> np.ndarray:
    """One backward step of (I - theta dt A) u_new = (I + (1-theta) dt A) u_old."""
    n = len(u)
    rhs = u.copy()
    if theta < 1.0:
        c = (1.0 - theta) * dt
        rhs[1:-1] = (u[1:-1] + c * (lower * u[:-2] + diag * u[1:-1] + upper * u[2:]))
    ab = np.zeros((3, n))
    ab[1, :] = 1.0
    ab[0, 2:] = -theta * dt * upper
    ab[1, 1:-1] = 1.0 - theta * dt * diag
    ab[2, :-2] = -theta * dt * lower
    rhs[0] = left
    rhs[-1] = right
    # boundary rows are identities: zero out their couplings
    ab[0, 1] = 0.0
    ab[2, -2] = 0.0
    return solve_banded((1, 1), ab, rhs)


def _march(problem: PdeProblem, x: np.ndarray, n_steps: int,
           far_value: Callable[[float], float], n_rannacher: int = 2) -> np.ndarray:
    """March the terminal data back to t = 0; returns values (n_t, n_x)."""
    T = problem.horizon
    t_grid = np.linspace(0.0, T, n_steps + 1)
    vol_sq = np.asarray(problem.vol(x), dtype=float) ** 2
    values = np.empty((n_steps + 1, len(x)))
    values[-1] = problem.terminal_values(x)
    bands_cache: dict[float, tuple] = {}
    for k in range(n_steps - 1, -1, -1):
        t_new = t_grid[k]
        dt = t_grid[k + 1] - t_new
        r = float(problem.rate.rate(t_new))
        if r not in bands_cache:
            bands_cache[r] = _operator_bands(x, vol_sq, r)
        lower, diag, upper = bands_cache[r]
        right = far_value(t_new)
        u = values[k + 1]
        if n_steps - 1 - k < n_rannacher:
            # Rannacher start-up: two implicit-Euler half steps damp the
            # high modes excited by the payoff kink
            half = 0.5 * dt
            rm = far_value(t_new + half)
            u = _theta_step(u, lower, diag, upper, half, 1.0, 0.0, rm)
            u = _theta_step(u, lower, diag, upper, half, 1.0, 0.0, right)
        else:
            u = _theta_step(u, lower, diag, upper, dt, 0.5, 0.0, right)
        values[k] = u
    return values


def _solve_once(problem: PdeProblem, grid: PdeGrid, radius: float,
                far_value: Callable[[float], float]) -> PdeSolution:
    x = grid.x_grid(radius)
    values = _march(problem, x, grid.n_steps, far_value)
    t_grid = np.linspace(0.0, problem.horizon, grid.n_steps + 1)
    return PdeSolution(x_grid=x, t_grid=t_grid, values=values,
                       truncation_radius=radius, growth_class=problem.growth_class,
                       problem=problem)


def _escalate(problem: PdeProblem, grid: PdeGrid,
              far_value: Callable[[float, float], float]) -> PdeSolution:
    """Double the radius until t=0 values settle on the fixed inner window."""
    window = grid.window if grid.window is not None else 0.5 * grid.base_radius
    history: list[tuple[float, float]] = []
    prev: PdeSolution | None = None
    radius = grid.base_radius
    for _ in range(grid.max_doublings + 1):
        sol = _solve_once(problem, grid, radius, lambda t, R=radius: far_value(t, R))
        if prev is not None:
            probes = prev.x_grid[prev.x_grid <= window]
            change = float(np.max(np.abs(sol.value_at(probes) - prev.value_at(probes))))
            history.append((radius, change))
            if change < grid.tolerance:
                return replace(sol, convergence_history=tuple(history))
        prev = sol
        radius *= 2.0
    raise PdeEscalationError(
        f"radius escalation did not converge below {grid.tolerance} "
        f"within {grid.max_doublings} doublings (window [0, {window}])", history)


# --------------------------------------------------------------------------
# Public solves
# --------------------------------------------------------------------------

def solve_ebar(problem: PdeProblem, grid: PdeGrid = PdeGrid(),
               escalate: bool = True, radius: float | None = None) -> PdeSolution:
    """European value of the sublinear payoff gbar; far boundary pinned at gbar(R).

    The discrete maximum principle is enforced: values must stay within
    [0, max gbar] up to round-off.
    """
    if problem.terminal != TERMINAL_GBAR:
        raise ValueError("solve_ebar requires the gbar terminal")
    if problem.growth_class != GROWTH_SUBLINEAR:
        raise ValueError("solve_ebar requires the strictly sublinear growth class")

    def far(t: float, R: float) -> float:
        disc = np.exp(-(problem.rate.integral(problem.horizon) - problem.rate.integral(t)))
        return float(disc * problem.payoff.gbar(R))

    if escalate and radius is None:
        sol = _escalate(problem, grid, far)
    else:
        R = radius if radius is not None else grid.base_radius
        sol = _solve_once(problem, grid, R, lambda t: far(t, R))
    bound = float(problem.payoff.gbar(sol.truncation_radius))
    lo, hi = float(sol.values.min()), float(sol.values.max())
    if lo < -1e-8 * max(bound, 1.0) or hi > bound * (1.0 + 1e-8):
        raise RuntimeError(f"discrete maximum principle violated: range [{lo}, {hi}] "
                           f"outside [0, {bound}]")
    return sol


def solve_european(problem: PdeProblem, grid: PdeGrid = PdeGrid(),
                   far_field: str | Callable[[float], float] = FAR_ZERO,
                   escalate: bool = True, radius: float | None = None) -> PdeSolution:
    """Minimal nonnegative solution with terminal g (the European call value).

    far_field "zero" truncates with u(R, t) = 0, which converges to the
    minimal solution monotonically from below as R grows; alternatively a
    callable t -> value supplies a known large-x asymptote of the model
    (tighter at moderate radii in the bubble regime, where the zero
    truncation converges only like 1/R).
    """
    if problem.terminal != TERMINAL_G:
        raise ValueError("solve_european requires the g terminal")
    if problem.growth_class != GROWTH_LINEAR:
        raise ValueError("the European call value has linear growth")

    if callable(far_field):
        def far(t: float, R: float) -> float:
            return float(far_field(t))
    elif far_field == FAR_ZERO:
        def far(t: float, R: float) -> float:
            return 0.0
    elif far_field == FAR_PAYOFF:
        # forward-style pinning; appropriate in the martingale regime only
        def far(t: float, R: float) -> float:
            disc = np.exp(-(problem.rate.integral(problem.horizon) - problem.rate.integral(t)))
            return float(disc * problem.payoff.g(R))
    else:
        raise ValueError(f"unknown far_field {far_field!r}")

    if escalate and radius is None:
        sol = _escalate(problem, grid, far)
    else:
        R = radius if radius is not None else grid.base_radius
        sol = _solve_once(problem, grid, R, lambda t: far(t, R))
    if float(sol.values.min()) < -1e-8:
        raise RuntimeError("European solve lost nonnegativity")
    return sol


def american_price(sol_ebar: PdeSolution) -> PdeSolution:
    """Assemble the American value a = x - ebar on the grid (linear growth).

    Never solved for directly: in the linear class the Cauchy problem has
    multiple solutions whenever the discounted price is a strict local
    martingale.
    """
    if sol_ebar.problem.terminal != TERMINAL_GBAR:
        raise ValueError("american_price expects the gbar solve")
    values = sol_ebar.x_grid[None, :] - sol_ebar.values
    return PdeSolution(x_grid=sol_ebar.x_grid, t_grid=sol_ebar.t_grid, values=values,
                       truncation_radius=sol_ebar.truncation_radius,
                       growth_class=GROWTH_LINEAR, problem=sol_ebar.problem,
                       convergence_history=sol_ebar.convergence_history)


def multiplicity_gap(sol_a: PdeSolution, sol_e: PdeSolution) -> PdeSolution:
    """a - e on a common grid: another solution of the same equation with
    zero terminal data; strictly positive inside the bubble regime.

    Verifies the terminal slice vanishes and that no interior node is
    negative beyond round-off (the true gap decays below double precision
    deep out of the money, so exact positivity cannot be asserted there).
    """
    if (len(sol_a.x_grid) != len(sol_e.x_grid)
            or not np.allclose(sol_a.x_grid, sol_e.x_grid)
            or len(sol_a.t_grid) != len(sol_e.t_grid)):
        raise ValueError("gap requires solutions on a common grid")
    values = sol_a.values - sol_e.values
    scale = float(np.max(np.abs(values))) + 1e-300
    if float(np.max(np.abs(values[-1]))) > 1e-12 * scale:
        raise RuntimeError("gap terminal slice is not zero")
    if float(values[:-1, 1:-1].min()) < -1e-9 * scale:
        raise RuntimeError("gap is materially negative at an interior node")
    return PdeSolution(x_grid=sol_a.x_grid, t_grid=sol_a.t_grid, values=values,
                       truncation_radius=sol_a.truncation_radius,
                       growth_class=GROWTH_SUBLINEAR, problem=sol_a.problem)


def parity_residual(sol_a: PdeSolution, sol_ebar: PdeSolution,
                    window: float | None = None) -> float:
    """sup over the grid of |a + ebar - x|.

    Zero to round-off when a was assembled from the same solve; a
    two-solve consistency diagnostic otherwise (compared on the common
    inner window by interpolation).
    """
    same_grid = (len(sol_a.x_grid) == len(sol_ebar.x_grid)
                 and np.array_equal(sol_a.x_grid, sol_ebar.x_grid))
    if same_grid and window is None:
        resid = sol_a.values + sol_ebar.values - sol_a.x_grid[None, :]
        return float(np.max(np.abs(resid)))
    w = window if window is not None else min(sol_a.truncation_radius,
                                              sol_ebar.truncation_radius) / 2.0
    xs = sol_a.x_grid[sol_a.x_grid <= w]
    worst = 0.0
    for k, t in enumerate(sol_a.t_grid):
        a_vals = sol_a.values[k][sol_a.x_grid <= w]
        e_vals = np.interp(xs, sol_ebar.x_grid, sol_ebar.values[_nearest(sol_ebar.t_grid, t)])
        worst = max(worst, float(np.max(np.abs(a_vals + e_vals - xs))))
    return worst


def _nearest(grid: np.ndarray, t: float) -> int:
    k = int(np.argmin(np.abs(grid - t)))
    if abs(grid[k] - t) > 1e-9 * max(1.0, grid[-1]):
        raise ValueError(f"time {t} not shared by both grids")
    return k


def theta_residual(sol: PdeSolution, skip_rannacher: int = 2) -> float:
    """Max interior residual of the plain Crank-Nicolson recurrence.

    The Rannacher start-up steps near the terminal use a different theta
    sequence and are skipped.  For any linear combination of discrete
    solutions of the same scheme (e.g. the gap a - e) the residual is
    round-off level.
    """
    x = sol.x_grid
    p = sol.problem
    vol_sq = np.asarray(p.vol(x), dtype=float) ** 2
    n_steps = len(sol.t_grid) - 1
    worst = 0.0
    scale = float(np.max(np.abs(sol.values))) + 1e-300
    for k in range(n_steps - skip_rannacher):
        dt = sol.t_grid[k + 1] - sol.t_grid[k]
        r = float(p.rate.rate(sol.t_grid[k]))
        lower, diag, upper = _operator_bands(x, vol_sq, r)
        u_new, u_old = sol.values[k], sol.values[k + 1]
        lhs = u_new[1:-1] - 0.5 * dt * (lower * u_new[:-2] + diag * u_new[1:-1]
                                        + upper * u_new[2:])
        rhs = u_old[1:-1] + 0.5 * dt * (lower * u_old[:-2] + diag * u_old[1:-1]
                                        + upper * u_old[2:])
        worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
    return worst
