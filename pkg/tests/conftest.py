import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from apkam.apseries import APSeries, FrequencyBasis, SpatialStructure

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

GOLDEN_W = (1.0, (math.sqrt(5.0) - 1.0) / 2.0)
ALPHA = 2 * math.pi * (math.sqrt(2.0) - 1.0)


@pytest.fixture(scope="session")
def basis():
    return FrequencyBasis(0, GOLDEN_W)


@pytest.fixture(scope="session")
def structure():
    return SpatialStructure((frozenset({0}), frozenset({1}), frozenset({0, 1})))


@pytest.fixture(scope="session")
def alpha():
    return ALPHA


def random_series(basis, structure, rng, n_modes=10, kmax=6, scale=1.0, mean=True):
    """Real series with random modes |k| <= kmax."""
    out = APSeries.zero(basis, structure)
    for _ in range(n_modes):
        k = rng.integers(-kmax // 2, kmax // 2 + 1, size=basis.d)
        if not k.any():
            continue
        out = out + APSeries.trig(basis, structure, k, cos=scale * rng.normal(), sin=scale * rng.normal())
    if mean:
        out = out + APSeries.constant(basis, structure, scale * rng.normal())
    return out


# criterion number -> (passed, detail); filled by test_acceptance
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
