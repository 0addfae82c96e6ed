import numpy as np
import pytest

from bubblecall.models import DeterministicJump, ModelSpec, ReciprocalBessel, simulate_paths
from bubblecall.payoff import call_payoff

# moderate path counts: enough for 3-sigma assertions, small enough that the
# whole unit suite stays fast


@pytest.fixture(scope="session")
def bundle_34():
    """Reciprocal-Bessel price with trivial deflator (bubble, L = S)."""
    model = ModelSpec(ReciprocalBessel(1.0), horizon=1.0)
    return simulate_paths(model, 60_000, 1500, seed=11235)


@pytest.fixture(scope="session")
def bundle_21():
    """Coupled reciprocal-Bessel deflator: S is the Bessel process, L = 1."""
    model = ModelSpec(ReciprocalBessel(1.0), horizon=1.0, z_kind="reciprocal-bessel")
    return simulate_paths(model, 50_000, 500, seed=3141)


@pytest.fixture(scope="session")
def bundle_22():
    """Deterministic jump at 0.5 with reciprocal-Bessel deflator."""
    model = ModelSpec(DeterministicJump(t0=0.5, s_pre=1.0, s_post=4.0, beta_post=0.25),
                      horizon=1.0, z_kind="reciprocal-bessel")
    return simulate_paths(model, 60_000, 2000, seed=2718)


@pytest.fixture(scope="session")
def call_k1():
    return call_payoff(1.0)


@pytest.fixture(scope="session")
def call_k2():
    return call_payoff(2.0)
