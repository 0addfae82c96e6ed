"""American call-type option pricing and optimal exercise in bubble markets.

The library prices payoffs X = Z * beta * g(S) when the deflated
discounted price L = Z * beta * S is only a local martingale: the value
splits as v = E[X_tau*] + delta(tau*), where the default functional
delta measures the mass lost to localization, tau* is the candidate
smallest optimal exercise time, and optimal times exist exactly when
delta(tau*) = 0.  A Monte-Carlo engine estimates delta along localizing
hitting-time schedules; a finite-difference engine solves the Markovian
pricing equations and assembles the American value through put-call
parity.
"""

from .payoff import PayoffSpec, call_payoff
from .models import (
    DeterministicJump,
    LocalVolDiffusion,
    ModelSpec,
    PathBundle,
    PiecewiseRate,
    PowerVol,
    ReciprocalBessel,
    StrictnessResult,
    TableVol,
    bessel_hitting_prob,
    bessel_reciprocal_mean,
    european_call_limit,
    is_strict_local_martingale,
    martingale_defect,
    simulate_paths,
)
from .montecarlo import (
    DefaultEstimate,
    FixedTime,
    HittingTime,
    LocalizingSchedule,
    PathwiseIndex,
    ValueDecomposition,
    delta_closed_form_ui_martingale,
    estimate_delta,
    expected_payoff,
    hitting_times,
    value_theorem1,
)
from .stopping import (
    OptimalityVerdict,
    SupportOracle,
    TauStarResult,
    check_optimality,
    existence_verdict,
    tau_star,
)
from .pde import (
    PdeGrid,
    PdeProblem,
    PdeSolution,
    american_price,
    multiplicity_gap,
    parity_residual,
    solve_ebar,
    solve_european,
    theta_residual,
)

__version__ = "0.1.0"
