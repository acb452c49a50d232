"""Shared fixtures and hypothesis settings."""

import dataclasses

import pytest
from hypothesis import settings, HealthCheck

from deposim import build_asep, build_k_exclusion, build_marginal

# jit warmup on first use can be slow; wall-clock deadlines only cause flakes
settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def tasep():
    return build_asep(1.0)


@pytest.fixture(scope="session")
def tasep_half(tasep):
    return build_marginal(tasep, 0.0)


@pytest.fixture(scope="session")
def broken_k_exclusion():
    """K-exclusion with one rate entry bumped; no product measure is
    stationary for this process."""
    base = build_k_exclusion(2)
    q0 = base.q_rate

    def q_bad(y, z):
        return q0(y, z) + (0.1 if (y, z) == (0, 1) else 0.0)

    return dataclasses.replace(base, name="k-exclusion-broken", q_rate=q_bad)
