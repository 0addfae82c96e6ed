"""Command-line experiment runner.

Subcommands: ``delta``, ``value``, ``tau-star``, ``price-pde``,
``verify-all``, ``dump-paths``.  Every run is driven by a config file
(see config.py) plus ``--seed`` / ``--threads`` / ``--out-dir``
overrides; identical config and seed produce byte-identical CSV output
for any thread count.

Exit codes: 0 success, 2 config/validation error, 3 inconclusive
statistics, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_config
from .models import (LocalVolDiffusion, PathBundle, PiecewiseRate, PowerVol,
                     QuadratureError, ReciprocalBessel, european_call_limit,
                     simulate_paths)
from .montecarlo import (INCONCLUSIVE, DefaultEstimate, FixedTime,
                         delta_closed_form_ui_martingale, estimate_delta,
                         expected_payoff, value_theorem1)
from .pde import (PdeEscalationError, PdeGrid, PdeProblem, american_price,
                  multiplicity_gap, parity_residual, solve_ebar, solve_european)
from .stopping import existence_verdict, tau_star

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3
EXIT_NUMERICAL = 4


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _simulate(cfg: ExperimentConfig, seed: int, threads: int) -> PathBundle:
    mc = cfg.montecarlo
    return simulate_paths(cfg.model, mc.paths, mc.steps, seed, threads=threads)


def _delta_rows(est: DefaultEstimate) -> list[list]:
    rows = [[lvl, e, s] for (lvl, e, s) in est.per_level]
    rows.append(["delta_hat", est.delta_hat, est.ci_halfwidth, est.verdict])
    return rows


def run_delta(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    mc = cfg.montecarlo
    if mc is None:
        raise ConfigError("montecarlo: section required for the delta pipeline")
    bundle = _simulate(cfg, seed, threads)
    est = estimate_delta(bundle, mc.rule, mc.schedule, cfg.payoff,
                         fit_levels=mc.fit_levels)
    _write_csv(out / f"{cfg.name}_delta.csv", ["level", "estimate", "stderr"],
               _delta_rows(est))
    lines = [f"experiment: {cfg.name}",
             f"rule: {mc.rule}",
             f"schedule: {list(mc.schedule.levels)} on {mc.schedule.target}",
             f"delta_hat = {est.delta_hat:.7g} +- {est.ci_halfwidth:.3g} (3 sigma), "
             f"verdict {est.verdict}"]
    if cfg.model.deflator_is_ui_martingale:
        cf, cf_se = delta_closed_form_ui_martingale(bundle, mc.rule)
        lines.append(f"closed-form default L0 - E[L_tau] = {cf:.7g} +- {3 * cf_se:.3g} (3 sigma)")
    (out / f"{cfg.name}_delta.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_INCONCLUSIVE if est.verdict == INCONCLUSIVE else EXIT_OK


def run_value(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    mc = cfg.montecarlo
    if mc is None:
        raise ConfigError("montecarlo: section required for the value pipeline")
    bundle = _simulate(cfg, seed, threads)
    star = tau_star(cfg.model, cfg.payoff)
    vd = value_theorem1(bundle, star.rule, mc.schedule, cfg.payoff,
                        fit_levels=mc.fit_levels)
    rows = [
        ["E[X_tau_star]", vd.payoff_mean, vd.payoff_stderr],
        ["delta(tau_star)", vd.delta.delta_hat, vd.delta.stderr],
        ["v_hat", vd.v_hat, vd.stderr],
        ["E[X_T]", vd.alt_payoff_mean, vd.alt_delta.stderr],
        ["delta(T)", vd.alt_delta.delta_hat, vd.alt_delta.stderr],
        ["v_hat_horizon", vd.alt_v_hat, vd.alt_stderr],
    ]
    _write_csv(out / f"{cfg.name}_value.csv", ["component", "estimate", "stderr"], rows)
    lines = [f"experiment: {cfg.name}",
             f"tau* = {star.rule} via {star.trigger}",
             f"v_hat = E[X_tau*] + delta(tau*) = {vd.payoff_mean:.7g} + "
             f"{vd.delta.delta_hat:.7g} = {vd.v_hat:.7g} +- {3 * vd.stderr:.3g} (3 sigma)",
             f"v_hat (horizon form) = E[X_T] + delta(T) = {vd.alt_payoff_mean:.7g} + "
             f"{vd.alt_delta.delta_hat:.7g} = {vd.alt_v_hat:.7g} +- {3 * vd.alt_stderr:.3g}",
             f"decompositions agree within 3 sigma: {vd.decompositions_agree()}",
             f"delta verdicts: {vd.delta.verdict}, {vd.alt_delta.verdict}"]
    (out / f"{cfg.name}_value.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_INCONCLUSIVE if INCONCLUSIVE in vd.verdicts else EXIT_OK


def run_tau_star(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    star = tau_star(cfg.model, cfg.payoff)
    result = {
        "experiment": cfg.name,
        "rule": {"kind": "fixed-time", "t": star.time},
        "trigger": star.trigger,
        "trigger_detail": star.trigger_detail,
        "certificate": star.certificate,
    }
    code = EXIT_OK
    if cfg.montecarlo is not None:
        mc = cfg.montecarlo
        bundle = _simulate(cfg, seed, threads)
        est = estimate_delta(bundle, star.rule, mc.schedule, cfg.payoff,
                             fit_levels=mc.fit_levels)
        verdict = existence_verdict(star, est)
        result["delta_at_tau_star"] = {"estimate": est.delta_hat,
                                       "ci_halfwidth": est.ci_halfwidth,
                                       "verdict": est.verdict}
        result["existence"] = verdict
        if est.verdict == INCONCLUSIVE:
            code = EXIT_INCONCLUSIVE
    text = json.dumps(result, indent=2)
    (out / f"{cfg.name}_tau_star.json").write_text(text + "\n")
    print(text)
    return code


def run_price_pde(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    pc = cfg.pde
    if pc is None:
        raise ConfigError("pde: section required for the price-pde pipeline")
    model = cfg.model
    if not isinstance(model.variant, (LocalVolDiffusion, ReciprocalBessel)):
        raise ConfigError("pde: needs a diffusion model (local-vol or reciprocal-bessel)")
    if not model.deflator_is_ui_martingale:
        raise ConfigError("pde: the Markovian pricing equations assume a martingale deflator")
    if isinstance(model.variant, ReciprocalBessel):
        # the reciprocal 3-D Bessel process solves dS = S^2 dB under the
        # pricing measure
        vol, rate = PowerVol(1.0, 2.0), PiecewiseRate()
    else:
        vol, rate = model.variant.vol, model.variant.rate
    T = model.horizon
    grid = PdeGrid(n_inner=pc.n_inner, inner_span=pc.inner_span, n_outer=pc.n_outer,
                   n_steps=pc.n_steps, base_radius=pc.base_radius,
                   max_doublings=pc.max_doublings, tolerance=pc.tolerance,
                   window=pc.window)
    prob_ebar = PdeProblem(vol=vol, payoff=cfg.payoff, horizon=T, rate=rate)
    sol_ebar = solve_ebar(prob_ebar, grid)
    sol_a = american_price(sol_ebar)
    prob_e = PdeProblem(vol=vol, payoff=cfg.payoff, horizon=T, rate=rate,
                        terminal="g", growth_class="linear")
    if pc.far_field == "bessel-asymptote":
        if not isinstance(model.variant, ReciprocalBessel):
            raise ConfigError("pde.far_field: bessel-asymptote needs the reciprocal-bessel model")
        strike = cfg.payoff.threshold()
        far = lambda t: european_call_limit(strike, t, T)
    else:
        far = pc.far_field
    sol_e = solve_european(prob_e, grid, far_field=far, escalate=False,
                           radius=sol_ebar.truncation_radius)
    gap = multiplicity_gap(sol_a, sol_e)
    parity = parity_residual(sol_a, sol_ebar)

    # decimated space-time dump
    n_t = len(sol_ebar.t_grid)
    t_idx = sorted(set(np.linspace(0, n_t - 1, min(pc.csv_time_slices, n_t)).astype(int)))
    rows = []
    for k in t_idx:
        t = sol_ebar.t_grid[k]
        for j, x in enumerate(sol_ebar.x_grid):
            rows.append([float(t), float(x), float(sol_ebar.values[k, j]),
                         float(sol_a.values[k, j]), float(sol_e.values[k, j]),
                         float(gap.values[k, j])])
    _write_csv(out / f"{cfg.name}_pde.csv", ["t", "x", "ebar", "a", "e", "gap"], rows)

    lines = [f"experiment: {cfg.name}",
             f"radius = {sol_ebar.truncation_radius}, escalation history = "
             f"{[(r, float(f'{c:.3g}')) for r, c in sol_ebar.convergence_history]}",
             f"parity sup |a + ebar - x| = {parity:.3g}"]
    for x in pc.eval_points:
        lines.append(f"x = {x}: ebar = {sol_ebar.value_at(x):.7g}, "
                     f"a = {sol_a.value_at(x):.7g}, e = {sol_e.value_at(x):.7g}, "
                     f"gap = {gap.value_at(x):.7g}")
    (out / f"{cfg.name}_pde.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def run_dump_paths(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    mc = cfg.montecarlo
    if mc is None:
        raise ConfigError("montecarlo: section required for dump-paths")
    bundle = _simulate(cfg, seed, threads)
    n = min(mc.dump_paths, bundle.n_paths)
    rows = [[float(t), int(pid), float(s), float(b), float(z), float(l), float(x)]
            for (t, pid, s, b, z, l, x) in bundle.to_rows(range(n), cfg.payoff)]
    _write_csv(out / f"{cfg.name}_paths.csv",
               ["t", "path_id", "S", "beta", "Z", "L", "X"], rows)
    print(f"wrote {len(rows)} rows for {n} paths")
    return EXIT_OK


def run_verify_all(cfg: ExperimentConfig, out: Path, seed: int, threads: int) -> int:
    code = EXIT_OK
    steps = [("tau-star", run_tau_star)]
    if cfg.montecarlo is not None:
        steps += [("delta", run_delta), ("value", run_value)]
    if cfg.pde is not None:
        steps.append(("price-pde", run_price_pde))
    for name, fn in steps:
        print(f"--- {name} ---")
        code = max(code, fn(cfg, out, seed, threads))
    return code


PIPELINES = {
    "delta": run_delta,
    "value": run_value,
    "tau-star": run_tau_star,
    "price-pde": run_price_pde,
    "verify-all": run_verify_all,
    "dump-paths": run_dump_paths,
}


def run_experiment(config_path: str, pipeline: str, out_dir: str = "out",
                   seed: int | None = None, threads: int = 1) -> int:
    """Parse, validate, and execute one pipeline; returns the exit code."""
    try:
        cfg = parse_config(config_path)
        if pipeline not in PIPELINES:
            raise ConfigError(f"unknown pipeline {pipeline!r}")
        if pipeline in ("delta", "value", "dump-paths") and cfg.montecarlo is None:
            raise ConfigError(f"montecarlo: section required for {pipeline}")
        run_seed = seed if seed is not None else (
            cfg.montecarlo.seed if cfg.montecarlo is not None else None)
        if run_seed is None and pipeline not in ("price-pde",):
            raise ConfigError("montecarlo.seed: missing (wall-clock seeding is not supported)")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return PIPELINES[pipeline](cfg, out, run_seed if run_seed is not None else 0, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PdeEscalationError, QuadratureError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="bubblecall",
        description="American call pricing and optimal exercise in bubble markets")
    sub = parser.add_subparsers(dest="pipeline", required=True)
    for name in PIPELINES:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="simulation worker threads (results are thread-count independent)")
        p.add_argument("--out-dir", default="out", help="report/CSV output directory")
    args = parser.parse_args(argv)
    return run_experiment(args.config, args.pipeline, out_dir=args.out_dir,
                          seed=args.seed, threads=args.threads)


if __name__ == "__main__":
    sys.exit(main())
