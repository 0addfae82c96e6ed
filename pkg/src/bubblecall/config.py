"""Experiment configuration: INI-style files wiring models, payoffs and engines.

A config is a flat key/value file with sections; everything an
experiment needs is in the file, and the seed is mandatory (runs are
reproducible by construction, never wall-clock seeded).

    [experiment]
    name = sec-3-4

    [model]
    kind = reciprocal-bessel          ; reciprocal-bessel | local-vol | deterministic-jump
    s0 = 1.0
    horizon = 1.0
    z = one                           ; one | reciprocal-bessel

    [payoff]
    kind = call                       ; call | piecewise
    strike = 1.0

    [montecarlo]
    paths = 200000
    steps = 2000
    seed = 12345
    schedule = 4,6,8,12,16
    target = L
    fit_levels = 5
    rule = fixed:1.0                  ; fixed:t | hit-up:thr[@act] | hit-down:thr[@act]

    [pde]
    n_inner = 240
    ...

Local-vol models add ``vol_kind = power`` with ``vol_coefficient`` /
``vol_exponent`` (or ``vol_kind = table`` with ``vol_xs`` / ``vol_alphas``)
and a piecewise rate ``rate_times`` / ``rate_values``; deterministic-jump
models add ``jump_time``, ``s_pre``, ``s_post``, ``beta_post``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .models import (DeterministicJump, LocalVolDiffusion, ModelSpec,
                     PiecewiseRate, PowerVol, ReciprocalBessel, TableVol)
from .montecarlo import FixedTime, HittingTime, LocalizingSchedule, StoppingRule
from .payoff import PayoffSpec, call_payoff

__all__ = ["ConfigError", "MonteCarloConfig", "PdeConfig", "ExperimentConfig",
           "parse_config"]


class ConfigError(ValueError):
    """Invalid or missing configuration, with the offending field path."""


@dataclass(frozen=True)
class MonteCarloConfig:
    paths: int
    steps: int
    seed: int
    schedule: LocalizingSchedule
    rule: StoppingRule
    fit_levels: int = 3
    dump_paths: int = 5


@dataclass(frozen=True)
class PdeConfig:
    n_inner: int = 240
    inner_span: float = 3.0
    n_outer: int = 220
    n_steps: int = 1000
    base_radius: float = 8.0
    max_doublings: int = 6
    tolerance: float = 1e-5
    window: float | None = None
    far_field: str = "zero"  # zero | payoff | bessel-asymptote
    eval_points: tuple[float, ...] = ()
    csv_time_slices: int = 11


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model: ModelSpec
    payoff: PayoffSpec
    montecarlo: MonteCarloConfig | None
    pde: PdeConfig | None


def _get(section, key, conv, field, required=True, default=None):
    if key not in section:
        if required:
            raise ConfigError(f"{field}: missing")
        return default
    raw = section[key]
    try:
        return conv(raw)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"{field}: {exc}") from exc


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.replace(";", ",").split(",") if v.strip())


def _positive(conv, name):
    def inner(raw):
        v = conv(raw)
        if v <= 0:
            raise ValueError(f"must be positive, got {v}")
        return v
    inner.__name__ = name
    return inner


_pos_float = _positive(float, "positive float")
_pos_int = _positive(int, "positive int")


def _parse_payoff(cp) -> PayoffSpec:
    if "payoff" not in cp:
        raise ConfigError("payoff: section missing")
    sec = cp["payoff"]
    kind = _get(sec, "kind", str, "payoff.kind")
    if kind == "call":
        strike = _get(sec, "strike", _pos_float, "payoff.strike")
        return call_payoff(strike)
    if kind == "piecewise":
        bp = _get(sec, "breakpoints", _floats, "payoff.breakpoints")
        sl = _get(sec, "slopes", _floats, "payoff.slopes")
        try:
            return PayoffSpec(breakpoints=bp, slopes=sl)
        except ValueError as exc:
            raise ConfigError(f"payoff: {exc}") from exc
    raise ConfigError(f"payoff.kind: unknown kind {kind!r}")


def _parse_vol(sec):
    kind = _get(sec, "vol_kind", str, "model.vol_kind")
    if kind == "power":
        c = _get(sec, "vol_coefficient", _pos_float, "model.vol_coefficient")
        p = _get(sec, "vol_exponent", _pos_float, "model.vol_exponent")
        return PowerVol(c, p)
    if kind == "table":
        xs = _get(sec, "vol_xs", _floats, "model.vol_xs")
        al = _get(sec, "vol_alphas", _floats, "model.vol_alphas")
        try:
            return TableVol(xs, al)
        except ValueError as exc:
            raise ConfigError(f"model.vol table: {exc}") from exc
    raise ConfigError(f"model.vol_kind: unknown kind {kind!r}")


def _parse_rate(sec) -> PiecewiseRate:
    times = _get(sec, "rate_times", _floats, "model.rate_times",
                 required=False, default=(0.0,))
    values = _get(sec, "rate_values", _floats, "model.rate_values",
                  required=False, default=(0.0,))
    try:
        return PiecewiseRate(times=times, values=values)
    except ValueError as exc:
        raise ConfigError(f"model.rate: {exc}") from exc


def _parse_model(cp) -> ModelSpec:
    if "model" not in cp:
        raise ConfigError("model: section missing")
    sec = cp["model"]
    kind = _get(sec, "kind", str, "model.kind")
    horizon = _get(sec, "horizon", _pos_float, "model.horizon")
    z_kind = _get(sec, "z", str, "model.z", required=False, default="one")
    try:
        if kind == "reciprocal-bessel":
            s0 = _get(sec, "s0", _pos_float, "model.s0")
            return ModelSpec(ReciprocalBessel(s0), horizon=horizon, z_kind=z_kind)
        if kind == "local-vol":
            s0 = _get(sec, "s0", _pos_float, "model.s0")
            return ModelSpec(LocalVolDiffusion(s0, _parse_vol(sec), _parse_rate(sec)),
                             horizon=horizon, z_kind=z_kind)
        if kind == "deterministic-jump":
            var = DeterministicJump(
                t0=_get(sec, "jump_time", _pos_float, "model.jump_time"),
                s_pre=_get(sec, "s_pre", _pos_float, "model.s_pre"),
                s_post=_get(sec, "s_post", _pos_float, "model.s_post"),
                beta_post=_get(sec, "beta_post", _pos_float, "model.beta_post"))
            return ModelSpec(var, horizon=horizon, z_kind=z_kind)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc
    raise ConfigError(f"model.kind: unknown kind {kind!r}")


def _parse_rule(raw: str, horizon: float) -> StoppingRule:
    parts = raw.strip().split(":")
    if parts[0] == "fixed" and len(parts) == 2:
        t = float(parts[1])
        if t < 0 or t > horizon:
            raise ConfigError(f"montecarlo.rule: fixed time {t} outside [0, {horizon}]")
        return FixedTime(t)
    if parts[0] in ("hit-up", "hit-down") and len(parts) == 2:
        direction = "up" if parts[0] == "hit-up" else "down"
        spec = parts[1]
        activation = 0.0
        if "@" in spec:
            spec, act = spec.split("@")
            activation = float(act)
        return HittingTime(threshold=float(spec), direction=direction,
                           activation=activation)
    raise ConfigError(f"montecarlo.rule: cannot parse {raw!r}")


def _parse_montecarlo(cp, horizon: float) -> MonteCarloConfig | None:
    if "montecarlo" not in cp:
        return None
    sec = cp["montecarlo"]
    levels = _get(sec, "schedule", _floats, "montecarlo.schedule")
    target = _get(sec, "target", str, "montecarlo.target", required=False, default="L")
    try:
        schedule = LocalizingSchedule(levels, target=target)
    except ValueError as exc:
        raise ConfigError(f"montecarlo.schedule: {exc}") from exc
    rule = _parse_rule(_get(sec, "rule", str, "montecarlo.rule"), horizon)
    return MonteCarloConfig(
        paths=_get(sec, "paths", _pos_int, "montecarlo.paths"),
        steps=_get(sec, "steps", _pos_int, "montecarlo.steps"),
        seed=_get(sec, "seed", int, "montecarlo.seed"),
        schedule=schedule,
        rule=rule,
        fit_levels=_get(sec, "fit_levels", _pos_int, "montecarlo.fit_levels",
                        required=False, default=3),
        dump_paths=_get(sec, "dump_paths", _pos_int, "montecarlo.dump_paths",
                        required=False, default=5),
    )


def _parse_pde(cp) -> PdeConfig | None:
    if "pde" not in cp:
        return None
    sec = cp["pde"]
    far = _get(sec, "far_field", str, "pde.far_field", required=False, default="zero")
    if far not in ("zero", "payoff", "bessel-asymptote"):
        raise ConfigError(f"pde.far_field: unknown mode {far!r}")
    return PdeConfig(
        n_inner=_get(sec, "n_inner", _pos_int, "pde.n_inner", required=False, default=240),
        inner_span=_get(sec, "inner_span", _pos_float, "pde.inner_span",
                        required=False, default=3.0),
        n_outer=_get(sec, "n_outer", _pos_int, "pde.n_outer", required=False, default=220),
        n_steps=_get(sec, "n_steps", _pos_int, "pde.n_steps", required=False, default=1000),
        base_radius=_get(sec, "base_radius", _pos_float, "pde.base_radius",
                         required=False, default=8.0),
        max_doublings=_get(sec, "max_doublings", int, "pde.max_doublings",
                           required=False, default=6),
        tolerance=_get(sec, "tolerance", _pos_float, "pde.tolerance",
                       required=False, default=1e-5),
        window=_get(sec, "window", _pos_float, "pde.window", required=False, default=None),
        far_field=far,
        eval_points=_get(sec, "eval_points", _floats, "pde.eval_points",
                         required=False, default=()),
        csv_time_slices=_get(sec, "csv_time_slices", _pos_int, "pde.csv_time_slices",
                             required=False, default=11),
    )


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    name = cp["experiment"]["name"] if ("experiment" in cp and "name" in cp["experiment"]) \
        else path.stem
    model = _parse_model(cp)
    payoff = _parse_payoff(cp)
    mc = _parse_montecarlo(cp, model.horizon)
    pde = _parse_pde(cp)
    if mc is None and pde is None:
        raise ConfigError("config must define a [montecarlo] or a [pde] section")
    return ExperimentConfig(name=name, model=model, payoff=payoff,
                            montecarlo=mc, pde=pde)
