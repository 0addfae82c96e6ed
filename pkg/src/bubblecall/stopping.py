"""Construction of the candidate smallest optimal exercise time tau*.

tau* is the earliest of three triggers: the price is confined at or
below the proportional-payoff threshold K (tau_K); the price is confined
inside one affine segment of the payoff after the discount factor has
stopped decreasing (tau_i); or the future support of the price
collapses to a point (tau_0).  At the horizon all processes freeze,
so tau* never exceeds the horizon.

The adapted support envelopes (m, M) are supplied by per-model-class
oracles: full-support diffusions (reciprocal Bessel, positive local
vol) have envelope (0, inf) before the horizon, so no trigger fires
early and tau* is the horizon; deterministic-jump models admit exact
envelopes and exact trigger times.

Optimality and existence verdicts follow the main equivalences: a rule
is optimal iff it dominates tau* pathwise and its default vanishes;
optimal times exist iff the default at tau* vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import inf

import numpy as np

from .models import (DeterministicJump, LocalVolDiffusion, ModelSpec,
                     PathBundle, ReciprocalBessel)
from .montecarlo import DefaultEstimate, FixedTime, HittingTime, StoppingRule
from .payoff import PayoffSpec

__all__ = [
    "SupportOracle",
    "TauStarResult",
    "tau_star",
    "check_optimality",
    "existence_verdict",
    "OptimalityVerdict",
    "TRIGGER_TAU_K",
    "TRIGGER_AFFINE",
    "TRIGGER_COALESCE",
    "TRIGGER_HORIZON",
    "EXISTS",
    "DOES_NOT_EXIST",
    "INCONCLUSIVE_VERDICT",
]

TRIGGER_TAU_K = "tau_K"
TRIGGER_AFFINE = "affine_interval"
TRIGGER_COALESCE = "coalesce"
TRIGGER_HORIZON = "horizon"

EXISTS = "exists"
DOES_NOT_EXIST = "does-not-exist"
INCONCLUSIVE_VERDICT = "inconclusive"


@dataclass(frozen=True)
class SupportOracle:
    """Future-range envelope of S and the time from which beta is flat.

    envelope(t) returns (m_t, M_t), the conditional range of all values
    S can take on [t, horizon]; beta_flat_from is the earliest time after
    which the discount factor no longer decreases.
    """

    model_class: str
    envelope: "callable"
    beta_flat_from: float


def _full_support_oracle(model: ModelSpec, name: str) -> SupportOracle:
    T = model.horizon

    def envelope(t: float):
        if t >= T:
            return (None, None)  # frozen: support is the (random) current value
        return (0.0, inf)

    return SupportOracle(model_class=name, envelope=envelope, beta_flat_from=_beta_flat_time(model))


def _beta_flat_time(model: ModelSpec) -> float:
    if isinstance(model.variant, DeterministicJump):
        v = model.variant
        return 0.0 if v.beta_post == 1.0 else v.t0
    if isinstance(model.variant, LocalVolDiffusion):
        rate = model.variant.rate
        # beta decreases while the rate is positive
        last_positive = 0.0
        for i, val in enumerate(rate.values):
            if val > 0.0:
                end = rate.times[i + 1] if i + 1 < len(rate.times) else model.horizon
                last_positive = min(end, model.horizon)
        return last_positive
    return 0.0  # beta identically 1


def support_oracle(model: ModelSpec) -> SupportOracle:
    """Registry of per-model-class support envelopes."""
    var = model.variant
    if isinstance(var, ReciprocalBessel):
        # the driving Bessel process crosses every level on any time
        # interval with positive probability, so the pre-horizon
        # conditional support is all of (0, inf)
        return _full_support_oracle(model, "reciprocal-bessel")
    if isinstance(var, LocalVolDiffusion):
        return _full_support_oracle(model, "local-vol")
    if isinstance(var, DeterministicJump):
        T = model.horizon

        def envelope(t: float):
            if t < var.t0:
                lo = min(var.s_pre, var.s_post)
                hi = max(var.s_pre, var.s_post)
                return (lo, hi)
            return (var.s_post, var.s_post)

        return SupportOracle(model_class="deterministic-jump", envelope=envelope,
                             beta_flat_from=_beta_flat_time(model))
    raise ValueError(f"no support oracle registered for {type(var).__name__}")


@dataclass(frozen=True)
class TauStarResult:
    """The candidate smallest optimal stopping time and its derivation."""

    rule: FixedTime
    trigger: str
    trigger_detail: str
    certificate: str

    @property
    def time(self) -> float:
        return self.rule.t


def tau_star(model: ModelSpec, payoff: PayoffSpec) -> TauStarResult:
    """Construct tau* = tau_K ^ (min over affine-interval triggers) ^ tau_0.

    Full-support models: nothing fires before the horizon, and at the
    horizon the support coalesces (processes freeze), so tau* = T.
    Deterministic models: triggers are evaluated exactly on the
    breakpoint structure.
    """
    oracle = support_oracle(model)
    T = model.horizon
    K = payoff.threshold()

    if oracle.model_class in ("reciprocal-bessel", "local-vol"):
        cert = (f"support oracle '{oracle.model_class}': conditional support of S is (0, inf) "
                f"on every [t, T) with t < T, so no confinement trigger fires before the "
                f"horizon; at T the processes freeze and the support coalesces. tau* = T = {T}.")
        return TauStarResult(rule=FixedTime(T), trigger=TRIGGER_HORIZON,
                             trigger_detail="full support before horizon", certificate=cert)

    # deterministic-jump: candidate trigger times are the structure breakpoints
    var = model.variant
    candidates = sorted({0.0, var.t0, T})
    tau_tilde = oracle.beta_flat_from

    def first_time(pred):
        for t in candidates:
            if pred(t):
                return t
        return None

    hits: list[tuple[float, int, str, str]] = []  # (time, priority, trigger, detail)

    t_k = first_time(lambda t: oracle.envelope(t)[1] is not None and oracle.envelope(t)[1] <= K)
    if t_k is not None:
        hits.append((t_k, 0, TRIGGER_TAU_K, f"M_t <= K = {K} from t = {t_k}"))

    for i, (lo, hi) in enumerate(payoff.affine_intervals()):
        t_i = first_time(lambda t: oracle.envelope(t)[0] is not None
                         and lo <= oracle.envelope(t)[0] and oracle.envelope(t)[1] <= hi)
        if t_i is not None:
            t_eff = max(t_i, tau_tilde)
            hits.append((t_eff, 1, TRIGGER_AFFINE,
                         f"S confined to affine interval [{lo}, {hi}] from t = {t_i}, "
                         f"beta flat from t = {tau_tilde}"))

    t_0 = first_time(lambda t: oracle.envelope(t)[0] is not None
                     and oracle.envelope(t)[0] == oracle.envelope(t)[1])
    if t_0 is not None:
        hits.append((t_0, 2, TRIGGER_COALESCE, f"m_t = M_t from t = {t_0}"))
        if tau_tilde > t_0:
            raise AssertionError("support coalesced while beta still decreasing; "
                                 "model violates the local-martingale structure")

    hits.append((T, 3, TRIGGER_HORIZON, "processes freeze at the horizon"))
    hits.sort(key=lambda h: (h[0], h[1]))
    t_star, _, trigger, detail = hits[0]
    lines = [f"candidate triggers for tau* (T = {T}, K = {K}):"]
    lines += [f"  t = {h[0]}: {h[2]} ({h[3]})" for h in hits]
    lines.append(f"tau* = {t_star} via {trigger}")
    return TauStarResult(rule=FixedTime(t_star), trigger=trigger,
                         trigger_detail=detail, certificate="\n".join(lines))


# --------------------------------------------------------------------------
# Optimality / existence verdicts
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimalityVerdict:
    verdict: str  # "optimal" | "not-optimal" | "inconclusive"
    reason: str

    def __bool__(self) -> bool:
        return self.verdict == "optimal"


def _rule_dominates(rule: StoppingRule, t_star: float,
                    bundle: PathBundle | None) -> bool | None:
    """Whether rule >= tau* pathwise; None when paths are required but absent."""
    if isinstance(rule, FixedTime):
        return rule.t >= t_star - 1e-12
    if isinstance(rule, HittingTime) and rule.activation >= t_star - 1e-12:
        return True
    if bundle is None:
        return None
    idx_star = bundle.index_of_time(t_star)
    tau_idx = rule.resolve(bundle)
    return bool(np.all(tau_idx >= idx_star))


def check_optimality(rule: StoppingRule, tau: TauStarResult,
                     delta_of_rule: DefaultEstimate,
                     bundle: PathBundle | None = None) -> OptimalityVerdict:
    """Optimal iff the rule never stops before tau* and its default vanishes.

    The domination check is structural for fixed-time and late-activated
    hitting rules; other rules need a path bundle for the pathwise check.
    """
    dominates = _rule_dominates(rule, tau.time, bundle)
    if dominates is None:
        return OptimalityVerdict("inconclusive",
                                 "pathwise comparison against tau* needs a path bundle")
    if not dominates:
        return OptimalityVerdict("not-optimal", f"rule can stop before tau* = {tau.time}")
    if delta_of_rule.verdict == "inconclusive":
        return OptimalityVerdict("inconclusive", "default estimate is inconclusive")
    if delta_of_rule.is_zero_within_ci():
        return OptimalityVerdict("optimal",
                                 f"rule >= tau* and delta = {delta_of_rule.delta_hat:.3g} "
                                 f"is zero within {delta_of_rule.ci_halfwidth:.3g}")
    return OptimalityVerdict("not-optimal",
                             f"delta = {delta_of_rule.delta_hat:.3g} exceeds "
                             f"{delta_of_rule.ci_halfwidth:.3g} (3 sigma)")


def existence_verdict(tau: TauStarResult,
                      delta_at_tau_star: DefaultEstimate) -> str:
    """Optimal stopping times exist iff the default at tau* vanishes.

    Returns "exists" when delta(tau*) is zero within three standard
    errors, "does-not-exist" when it exceeds them, "inconclusive" when
    the underlying estimate is.
    """
    if delta_at_tau_star.verdict == "inconclusive":
        return INCONCLUSIVE_VERDICT
    if delta_at_tau_star.is_zero_within_ci():
        return EXISTS
    return DOES_NOT_EXIST
