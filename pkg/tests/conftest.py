from __future__ import annotations

import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from capped_lookback import (  # noqa: E402
    BoundedVariationCPP,
    JumpDiffusion,
    LinearBrownian,
    build_scale_context,
    build_value_function,
)

SQRT2 = math.sqrt(2.0)

# Acceptance outcomes, filled by test_acceptance and printed after the run.
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def bm():
    """X_t = sqrt(2) B_t, so psi(theta) = theta^2."""
    return LinearBrownian(1.0, SQRT2)


@pytest.fixture(scope="session")
def bm_neg():
    return LinearBrownian(-1.0, SQRT2)


@pytest.fixture(scope="session")
def bv():
    return BoundedVariationCPP(1.0, 2.0, 1.0)


@pytest.fixture(scope="session")
def jd():
    return JumpDiffusion(1.0, 1.0, 1.0, 2.0)


@pytest.fixture(scope="session")
def bm_ctx(bm):
    return build_scale_context(bm, 4.0)


@pytest.fixture(scope="session")
def bv_ctx(bv):
    return build_scale_context(bv, 1.5)


@pytest.fixture(scope="session")
def vf_bm_capped(bm):
    return build_value_function(bm, 4.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def vf_bm_uncapped(bm):
    return build_value_function(bm, 4.0, 1.0, math.inf)


@pytest.fixture(scope="session")
def vf_bv_capped(bv):
    return build_value_function(bv, 1.5, 1.0, 0.9)


@pytest.fixture(scope="session")
def vf_bv_uncapped(bv):
    return build_value_function(bv, 1.5, 1.0, math.inf)


@pytest.fixture(scope="session")
def vf_jd_capped(jd):
    return build_value_function(jd, 3.0, 2.0, 2.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
