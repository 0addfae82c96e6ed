"""Market model variants, path simulation, and closed-form oracles.

Three model families are supported, covering every case the estimators
and the exercise analysis need:

* ``ReciprocalBessel`` -- S is driven by the reciprocal of a 3-D Bessel
  process (the canonical strict local martingale).  With a trivial
  deflator, S itself is the reciprocal Bessel process; with a
  reciprocal-Bessel deflator Z, the roles flip: Z = 1/R and S = s0 * R,
  so that L = Z * beta * S is constant (the same simulated process,
  reinterpreted).
* ``LocalVolDiffusion`` -- dS = r(t) S dt + vol(S) dB under the pricing
  measure, simulated by Euler-Maruyama with truncation at zero.
* ``DeterministicJump`` -- S and beta are deterministic step functions
  with a single common jump; only the deflator Z is random.

Reciprocal-Bessel components are simulated by the exact embedding
R_t = |w + B_t| with B a 3-D Brownian motion, so grid values are exact
in distribution (no discretization bias).  Path storage defaults to
float32 (memory); all statistics downstream accumulate in float64.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.integrate import quad
from scipy.stats import norm

__all__ = [
    "PowerVol",
    "TableVol",
    "PiecewiseRate",
    "ReciprocalBessel",
    "LocalVolDiffusion",
    "DeterministicJump",
    "ModelSpec",
    "PathBundle",
    "simulate_paths",
    "bessel_reciprocal_mean",
    "martingale_defect",
    "european_call_limit",
    "bessel_hitting_prob",
    "is_strict_local_martingale",
    "StrictnessResult",
    "QuadratureError",
]

# Paths are simulated in fixed-size blocks with one counter-based RNG
# stream per block (Philox keyed by (seed, block)), so path i is the same
# for any thread count and any total path count >= i.
BLOCK_PATHS = 16384


# --------------------------------------------------------------------------
# Volatility and rate handles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerVol:
    """vol(x) = coefficient * x**exponent, with vol(0) = 0."""

    coefficient: float
    exponent: float

    def __post_init__(self):
        if self.coefficient <= 0.0:
            raise ValueError("vol coefficient must be positive")
        if self.exponent <= 0.0:
            raise ValueError("vol exponent must be positive (vol(0) = 0)")

    def __call__(self, x):
        return self.coefficient * np.power(x, self.exponent)


@dataclass(frozen=True)
class TableVol:
    """Tabulated vol with linear interpolation; extrapolates the last segment.

    The table must start at (0, 0) so the diffusion degenerates at zero.
    """

    xs: tuple[float, ...]
    alphas: tuple[float, ...]

    def __post_init__(self):
        xs = tuple(float(v) for v in self.xs)
        al = tuple(float(v) for v in self.alphas)
        if len(xs) != len(al) or len(xs) < 2:
            raise ValueError("table needs matching xs/alphas with at least two rows")
        if xs[0] != 0.0 or al[0] != 0.0:
            raise ValueError("vol table must start at (0, 0)")
        if any(a <= b for a, b in zip(xs[1:], xs[:-1])):
            raise ValueError("table xs must be strictly increasing")
        if any(a < 0.0 for a in al):
            raise ValueError("table alphas must be nonnegative")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "alphas", al)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xs = np.asarray(self.xs)
        al = np.asarray(self.alphas)
        out = np.interp(x, xs, al)
        # linear extrapolation beyond the last knot
        tail_slope = (al[-1] - al[-2]) / (xs[-1] - xs[-2])
        beyond = x > xs[-1]
        out = np.where(beyond, al[-1] + tail_slope * (x - xs[-1]), out)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class PiecewiseRate:
    """Piecewise-constant deterministic interest rate r(t), t >= 0."""

    times: tuple[float, ...] = (0.0,)
    values: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        ts = tuple(float(v) for v in self.times)
        vs = tuple(float(v) for v in self.values)
        if len(ts) != len(vs) or not ts or ts[0] != 0.0:
            raise ValueError("rate times must start at 0.0 and match values")
        if any(a <= b for a, b in zip(ts[1:], ts[:-1])):
            raise ValueError("rate times must be strictly increasing")
        if any(v < 0.0 for v in vs):
            raise ValueError("rates must be nonnegative")
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "values", vs)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)
        out = np.asarray(self.values)[idx]
        return out if out.ndim else float(out)

    def integral(self, t: float) -> float:
        """Exact integral of r over [0, t]."""
        total = 0.0
        for i, (t0, v) in enumerate(zip(self.times, self.values)):
            t1 = self.times[i + 1] if i + 1 < len(self.times) else np.inf
            if t <= t0:
                break
            total += v * (min(t, t1) - t0)
        return total

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.values)


# --------------------------------------------------------------------------
# Model variants
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReciprocalBessel:
    """Reciprocal 3-D Bessel driver with S(0) = s0."""

    s0: float

    def __post_init__(self):
        if self.s0 <= 0.0:
            raise ValueError("s0 must be positive")


@dataclass(frozen=True)
class LocalVolDiffusion:
    """dS = rate(t) S dt + vol(S) dB with vol(0) = 0, under the pricing measure."""

    s0: float
    vol: Callable[[np.ndarray], np.ndarray]
    rate: PiecewiseRate = PiecewiseRate()

    def __post_init__(self):
        if self.s0 <= 0.0:
            raise ValueError("s0 must be positive")
        probe = np.asarray(self.vol(np.array([0.5, 1.0, 3.0, 10.0])), dtype=float)
        if np.any(probe < 0.0):
            raise ValueError("vol handle returned negative values on (0, inf)")


@dataclass(frozen=True)
class DeterministicJump:
    """S and beta jump together at t0; beta_pre is fixed at 1.

    beta_post * s_post must equal s_pre so that L = Z * beta * S stays a
    local martingale (no deterministic jump in beta * S).
    """

    t0: float
    s_pre: float
    s_post: float
    beta_post: float

    def __post_init__(self):
        if self.t0 <= 0.0:
            raise ValueError("jump time t0 must be positive")
        if self.s_pre <= 0.0 or self.s_post <= 0.0 or self.beta_post <= 0.0:
            raise ValueError("s_pre, s_post, beta_post must be positive")
        if self.beta_post > 1.0:
            raise ValueError("beta is nonincreasing: beta_post <= beta_pre = 1")
        if not np.isclose(self.beta_post * self.s_post, self.s_pre, rtol=1e-12):
            raise ValueError("need beta_post * s_post == s_pre (beta*S must not jump)")

    def s_of_t(self, t):
        t = np.asarray(t, dtype=float)
        out = np.where(t < self.t0, self.s_pre, self.s_post)
        return out if out.ndim else float(out)

    def beta_of_t(self, t):
        t = np.asarray(t, dtype=float)
        out = np.where(t < self.t0, 1.0, self.beta_post)
        return out if out.ndim else float(out)


Variant = Union[ReciprocalBessel, LocalVolDiffusion, DeterministicJump]

Z_ONE = "one"
Z_RECIPROCAL_BESSEL = "reciprocal-bessel"


@dataclass(frozen=True)
class ModelSpec:
    """A market model: the S/beta variant, the deflator Z, and the horizon.

    z_kind is ``"one"`` (Z identically 1) or ``"reciprocal-bessel"`` (Z the
    reciprocal 3-D Bessel process started at 1; the normalization Z(0) = 1
    is mandatory).  For the ReciprocalBessel variant the deflator choice
    selects the interpretation of the simulated Bessel path: with Z = 1 the
    path's reciprocal is S itself; with a reciprocal-Bessel Z the path is
    1/Z and S = s0 / Z, making L constant.
    """

    variant: Variant
    horizon: float
    z_kind: str = Z_ONE
    z0: float = 1.0

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.z_kind not in (Z_ONE, Z_RECIPROCAL_BESSEL):
            raise ValueError(f"unknown z_kind: {self.z_kind!r}")
        if self.z0 != 1.0:
            raise ValueError("deflator normalization requires Z(0) = z0 = 1")
        if isinstance(self.variant, LocalVolDiffusion) and self.z_kind != Z_ONE:
            raise ValueError("LocalVolDiffusion is specified under the pricing measure (Z = 1)")
        if isinstance(self.variant, DeterministicJump):
            if self.variant.t0 >= self.horizon:
                raise ValueError("jump time must lie strictly inside the horizon")

    @property
    def s0(self) -> float:
        if isinstance(self.variant, DeterministicJump):
            return self.variant.s_pre
        return self.variant.s0

    @property
    def deflator_is_ui_martingale(self) -> bool:
        """True when Z restricted to [0, T] is a uniformly integrable martingale.

        Z identically 1 qualifies; a reciprocal-Bessel Z is a strict local
        martingale and does not.
        """
        return self.z_kind == Z_ONE


# --------------------------------------------------------------------------
# Simulated paths
# --------------------------------------------------------------------------

class PathBundle:
    """Grid realizations of (S, beta, Z) for a batch of independent paths.

    The component arrays broadcast to shape (n_paths, n_times); the
    deterministic ones are stored compactly.  Derived processes
    Y = Z*beta, L = Z*beta*S and X = Y*g(S) are evaluated on demand (see
    the ``*_at`` gathers and ``l_chunk``), never materialized wholesale.
    """

    def __init__(self, model: ModelSpec, time_grid: np.ndarray,
                 s: np.ndarray, beta: np.ndarray, z: np.ndarray, seed: int,
                 n_paths: int):
        self.model = model
        self.time_grid = np.asarray(time_grid, dtype=float)
        self.n_times = len(self.time_grid)
        self.n_paths = int(n_paths)
        self._s = s
        self._beta = beta
        self._z = z
        self.seed = seed

    # broadcast views (zero-copy)
    @property
    def s(self) -> np.ndarray:
        return np.broadcast_to(self._s, (self.n_paths, self.n_times))

    @property
    def beta(self) -> np.ndarray:
        return np.broadcast_to(self._beta, (self.n_paths, self.n_times))

    @property
    def z(self) -> np.ndarray:
        return np.broadcast_to(self._z, (self.n_paths, self.n_times))

    @property
    def terminal_index(self) -> int:
        return self.n_times - 1

    def index_of_time(self, t: float) -> int:
        """Grid index of the first grid time >= t (snap tolerance 1e-12)."""
        if t > self.time_grid[-1] + 1e-12:
            raise ValueError(f"time {t} lies beyond the grid horizon {self.time_grid[-1]}")
        return int(np.searchsorted(self.time_grid, t - 1e-12, side="left"))

    # -- per-path gathers (float64) ------------------------------------------

    def _gather(self, arr: np.ndarray, idx: np.ndarray, rows: np.ndarray | None) -> np.ndarray:
        idx = np.asarray(idx)
        if rows is None:
            rows = np.arange(len(idx))
        if arr.ndim == 2 and arr.shape[0] > 1:
            return arr[rows, idx].astype(np.float64)
        if arr.ndim == 2:  # deterministic row
            return arr[0, idx].astype(np.float64)
        return np.full(len(idx), float(arr))  # scalar component

    def s_at(self, idx, rows=None):
        return self._gather(self._s, idx, rows)

    def beta_at(self, idx, rows=None):
        return self._gather(self._beta, idx, rows)

    def z_at(self, idx, rows=None):
        return self._gather(self._z, idx, rows)

    def y_at(self, idx, rows=None):
        return self.z_at(idx, rows) * self.beta_at(idx, rows)

    def l_at(self, idx, rows=None):
        kind, payload = self.l_structure()
        if kind == "const":
            idx = np.asarray(idx)
            return np.full(len(idx), payload)
        return self.y_at(idx, rows) * self.s_at(idx, rows)

    def x_at(self, idx, payoff, rows=None):
        """X = Z * beta * g(S) gathered at per-path grid indices."""
        return self.y_at(idx, rows) * payoff.g(self.s_at(idx, rows))

    # -- chunked full-matrix access -------------------------------------------

    def l_structure(self):
        """Structural shortcut for L = Z*beta*S when one exists.

        Returns ("const", value) when L is constant pathwise (coupled
        reciprocal-Bessel deflator: L = s0 exactly), ("array", (arr, scale))
        when L = scale * arr for a stored component, or ("general", None).
        """
        m = self.model
        if isinstance(m.variant, ReciprocalBessel) and m.z_kind == Z_RECIPROCAL_BESSEL:
            return ("const", m.variant.s0)
        if isinstance(m.variant, DeterministicJump):
            # beta(t) * s(t) is constant = s_pre, so L = s_pre * Z
            return ("array", (self._z, m.variant.s_pre))
        if m.z_kind == Z_ONE and self._beta.ndim == 0:
            return ("array", (self._s, 1.0))
        return ("general", None)

    def l_chunk(self, rows: slice) -> np.ndarray:
        """L over a path slice, shape (chunk, n_times); dtype of the source."""
        kind, payload = self.l_structure()
        n = len(range(*rows.indices(self.n_paths)))
        if kind == "const":
            return np.broadcast_to(np.asarray(payload), (n, self.n_times))
        if kind == "array":
            arr, scale = payload
            part = np.broadcast_to(arr, (self.n_paths, self.n_times))[rows]
            return part if scale == 1.0 else scale * part
        return self.z[rows] * (np.asarray(self._beta) * self.s[rows])

    def z_chunk(self, rows: slice) -> np.ndarray:
        return self.z[rows]

    def to_rows(self, path_ids: Sequence[int], payoff) -> np.ndarray:
        """Dense dump (t, path_id, S, beta, Z, L, X) for the selected paths."""
        out = []
        for pid in path_ids:
            s = self.s[pid].astype(float)
            b = self.beta[pid].astype(float)
            z = self.z[pid].astype(float)
            l = z * b * s
            x = z * b * payoff.g(s)
            for j, t in enumerate(self.time_grid):
                out.append((t, pid, s[j], b[j], z[j], l[j], x[j]))
        return np.array(out)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(block)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _bessel_walk(rng, n: int, b0: float, n_steps: int, dt: float, sink):
    """Exact 3-D embedding of the Bessel process: R_t = |w + B_t|, |w| = b0.

    Calls ``sink(j, r)`` with the column of R values at every grid index,
    so callers can store transforms (1/R, s0*R, ...) without a float64
    staging array.
    """
    sqdt = np.sqrt(dt)
    w = np.zeros((n, 3))
    w[:, 0] = b0
    sink(0, np.full(n, b0))
    for j in range(1, n_steps + 1):
        w += sqdt * rng.standard_normal((n, 3))
        sink(j, np.sqrt(np.einsum("ij,ij->i", w, w)))


def _simulate_localvol_block(rng, model: LocalVolDiffusion, time_grid, out: np.ndarray):
    n = out.shape[0]
    s = np.full(n, model.s0)
    out[:, 0] = s
    for j in range(1, len(time_grid)):
        dt = time_grid[j] - time_grid[j - 1]
        r = model.rate.rate(time_grid[j - 1])
        vol = np.asarray(model.vol(s), dtype=float)
        if np.any(vol < 0.0):
            raise ValueError("vol handle returned negative values during simulation")
        s = s + r * s * dt + vol * np.sqrt(dt) * rng.standard_normal(n)
        np.maximum(s, 0.0, out=s)  # truncation: absorbed at 0 since vol(0) = 0
        out[:, j] = s


def simulate_paths(model: ModelSpec, n_paths: int, n_steps: int, seed: int,
                   threads: int = 1, dtype=np.float32) -> PathBundle:
    """Simulate independent paths on the uniform grid over [0, horizon].

    Reciprocal-Bessel components are exact in distribution at grid times;
    LocalVolDiffusion uses Euler-Maruyama with truncation at zero.  Path i
    only depends on (seed, i), never on threads or n_paths.
    """
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be >= 1")
    T = model.horizon
    time_grid = np.linspace(0.0, T, n_steps + 1)
    dt = T / n_steps
    var = model.variant

    scalar_one = np.asarray(1.0)

    if isinstance(var, DeterministicJump):
        s = var.s_of_t(time_grid)[None, :]
        beta = var.beta_of_t(time_grid)[None, :]
        if model.z_kind == Z_ONE:
            z = scalar_one
            return PathBundle(model, time_grid, s, beta, z, seed, n_paths)
        zarr = np.empty((n_paths, n_steps + 1), dtype=dtype)

        def work(rng, blk):
            view = zarr[blk]

            def sink(j, r):
                view[:, j] = 1.0 / r

            _bessel_walk(rng, blk.stop - blk.start, 1.0, n_steps, dt, sink)

        _run_blocks(work, n_paths, seed, threads)
        return PathBundle(model, time_grid, s, beta, zarr, seed, n_paths)

    if isinstance(var, LocalVolDiffusion):
        sarr = np.empty((n_paths, n_steps + 1), dtype=dtype)
        _run_blocks(lambda rng, blk: _simulate_localvol_block(rng, var, time_grid, sarr[blk]),
                    n_paths, seed, threads)
        beta = np.exp(-np.array([var.rate.integral(t) for t in time_grid]))[None, :]
        if var.rate.is_zero:
            beta = scalar_one
        return PathBundle(model, time_grid, sarr, beta, scalar_one, seed, n_paths)

    # ReciprocalBessel variant
    if model.z_kind == Z_ONE:
        # S = 1 / R with R started at 1/s0
        sarr = np.empty((n_paths, n_steps + 1), dtype=dtype)

        def work(rng, blk):
            view = sarr[blk]

            def sink(j, r):
                view[:, j] = 1.0 / r

            _bessel_walk(rng, blk.stop - blk.start, 1.0 / var.s0, n_steps, dt, sink)

        _run_blocks(work, n_paths, seed, threads)
        return PathBundle(model, time_grid, sarr, scalar_one, scalar_one, seed, n_paths)

    # coupled deflator: Z = 1/R from 1, S = s0 * R, L = s0 exactly
    sarr = np.empty((n_paths, n_steps + 1), dtype=dtype)
    zarr = np.empty((n_paths, n_steps + 1), dtype=dtype)

    def work(rng, blk):
        s_view, z_view = sarr[blk], zarr[blk]

        def sink(j, r):
            s_view[:, j] = var.s0 * r
            z_view[:, j] = 1.0 / r

        _bessel_walk(rng, blk.stop - blk.start, 1.0, n_steps, dt, sink)

    _run_blocks(work, n_paths, seed, threads)
    return PathBundle(model, time_grid, sarr, scalar_one, zarr, seed, n_paths)


def _run_blocks(work, n_paths: int, seed: int, threads: int):
    blocks = [slice(i, min(i + BLOCK_PATHS, n_paths)) for i in range(0, n_paths, BLOCK_PATHS)]

    def do(i_blk):
        i, blk = i_blk
        work(_block_rng(seed, i), blk)

    if threads <= 1 or len(blocks) == 1:
        for item in enumerate(blocks):
            do(item)
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(do, enumerate(blocks)))


# --------------------------------------------------------------------------
# Closed-form oracles (reciprocal 3-D Bessel under the pricing measure)
# --------------------------------------------------------------------------

def bessel_reciprocal_mean(x: float, t: float, T: float) -> float:
    """E[S_T | S_t = x] for the reciprocal 3-D Bessel process."""
    if not t < T:
        raise ValueError("need t < T")
    if not x > 0.0:
        raise ValueError("need x > 0")
    return x - martingale_defect(x, t, T)


def martingale_defect(x: float, t: float, T: float) -> float:
    """x - E[S_T | S_t = x] = 2 x Phi(-1 / (x sqrt(T - t))) >= 0."""
    if not t < T:
        raise ValueError("need t < T")
    if not x > 0.0:
        raise ValueError("need x > 0")
    return 2.0 * x * norm.cdf(-1.0 / (x * np.sqrt(T - t)))


def european_call_limit(strike: float, t: float, T: float) -> float:
    """Large-x limit of the European call value in the reciprocal-Bessel model."""
    if not t < T:
        raise ValueError("need t < T")
    if not strike > 0.0:
        raise ValueError("strike must be positive")
    tau = T - t
    return 2.0 / np.sqrt(2.0 * np.pi * tau) - strike * (
        2.0 * norm.cdf(1.0 / (strike * np.sqrt(tau))) - 1.0)


def bessel_hitting_prob(level: float, x: float, T: float) -> float:
    """P[sup_{[0,T]} S >= level | S_0 = x] for the reciprocal 3-D Bessel S.

    For level <= x the probability is 1.  Otherwise S reaches `level`
    exactly when the driving Bessel process R = 1/S, started at 1/x, falls
    to 1/level, which happens with probability
    (x / level) * 2 Phi(-(1/x - 1/level) / sqrt(T)).
    """
    if not (x > 0.0 and T > 0.0 and level > 0.0):
        raise ValueError("level, x, T must be positive")
    if level <= x:
        return 1.0
    return (x / level) * 2.0 * norm.cdf(-(1.0 / x - 1.0 / level) / np.sqrt(T))


# --------------------------------------------------------------------------
# Strictness diagnostic
# --------------------------------------------------------------------------

class QuadratureError(RuntimeError):
    """The strictness integral could not be evaluated reliably."""


@dataclass(frozen=True)
class StrictnessResult:
    """Verdict of the strict-local-martingale criterion for a vol handle.

    ``strict`` is True when the integral of x / vol(x)^2 over [1, inf)
    converges (discounted price is a strict local martingale), False when
    the tail-slope heuristic declares divergence (true martingale).
    """

    strict: bool
    integral: float | None
    tail_slope: float

    def __bool__(self) -> bool:
        return self.strict


def is_strict_local_martingale(vol: Callable[[np.ndarray], np.ndarray]) -> StrictnessResult:
    """Evaluate the integral test int_1^inf x / vol(x)^2 dx.

    Quadrature alone cannot certify divergence, so the tail decay of
    x / vol(x)^2 is first fitted on log-log samples over [1e3, 1e6]; a
    fitted slope >= -1 declares divergence.  Otherwise the integral is
    computed by adaptive quadrature.
    """
    xs = np.logspace(3.0, 6.0, 60)
    vals = np.asarray(vol(xs), dtype=float)
    if np.any(vals <= 0.0):
        raise ValueError("vol handle must be positive on (0, inf)")
    integrand = xs / vals**2
    slope = np.polyfit(np.log(xs), np.log(integrand), 1)[0]
    if slope >= -1.0 - 1e-9:
        return StrictnessResult(strict=False, integral=None, tail_slope=float(slope))
    try:
        val, err = quad(lambda x: x / float(vol(x)) ** 2, 1.0, np.inf, limit=200)
    except Exception as exc:  # pragma: no cover - quad failures are environment specific
        raise QuadratureError(f"strictness quadrature failed: {exc}") from exc
    if not np.isfinite(val) or (abs(val) > 0 and err > 0.01 * abs(val)):
        raise QuadratureError(f"strictness quadrature unreliable: value={val}, err={err}")
    return StrictnessResult(strict=True, integral=float(val), tail_slope=float(slope))
