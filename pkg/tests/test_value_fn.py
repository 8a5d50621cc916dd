import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capped_lookback import build_value_function, region, value
from capped_lookback.errors import InfiniteValue, OutsideE, RegimeMismatch
from capped_lookback.levy_model import LinearBrownian
from capped_lookback.value_fn import (
    CONTINUE_I,
    CONTINUE_II,
    STOP,
    export_value_surface,
    finiteness_probability,
    finiteness_report,
    special_value_q0_capped,
    special_value_uncapped,
    value_grid,
)
from oracles import bm_value_continuation

SQRT2 = math.sqrt(2.0)
LN2 = math.log(2.0)


def _continuation_point(vf, rng, s_hi):
    s = rng.uniform(vf.log_K + 1e-3, s_hi)
    g = float(vf.boundary(s))
    return s - rng.uniform(0.0, g), s


class TestClosedFormBrownian:
    def test_uncapped_continuation_1000_points(self, vf_bm_uncapped):
        vf = vf_bm_uncapped
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(1000):
            x, s = _continuation_point(vf, rng, 3.0)
            ref = bm_value_continuation(1.0, SQRT2, 4.0, 1.0, x, s, float(vf.boundary(s)))
            worst = max(worst, abs(value(vf, x, s) - ref) / ref)
        assert worst < 1e-10

    def test_capped_diagonal_is_cosh(self, vf_bm_capped):
        vf = vf_bm_capped
        s = vf.boundary.grid[::200]
        for si in s:
            g = float(vf.boundary(si))
            assert value(vf, si, si) == pytest.approx(math.expm1(si) * math.cosh(2.0 * g), rel=1e-12)
            ref = bm_value_continuation(1.0, SQRT2, 4.0, 1.0, si, si, g)
            assert value(vf, si, si) == pytest.approx(ref, rel=1e-10)

    def test_below_strike_scaling(self, vf_bm_capped):
        vf = vf_bm_capped
        assert value(vf, -0.5, -0.2) == pytest.approx(math.exp(-1.0) * vf.A_const, rel=1e-14)
        assert value(vf, -0.5, 0.0) == pytest.approx(math.exp(-1.0) * vf.A_const, rel=1e-14)


class TestRegions:
    def test_beyond_cap_stops(self, vf_bm_capped):
        assert region(vf_bm_capped, 1.1, 1.1) == STOP
        assert region(vf_bm_capped, -3.0, 1.1) == STOP

    def test_below_strike(self, vf_bm_capped):
        assert region(vf_bm_capped, -0.2, -0.2) == CONTINUE_II

    def test_diagonal_continues(self, vf_bm_capped, vf_bv_capped):
        assert region(vf_bm_capped, 0.5, 0.5) == CONTINUE_I
        assert region(vf_bv_capped, 0.5, 0.5) == CONTINUE_I

    def test_outside_E(self, vf_bm_capped):
        with pytest.raises(OutsideE):
            region(vf_bm_capped, 0.6, 0.5)
        with pytest.raises(OutsideE):
            value(vf_bm_capped, 0.6, 0.5)

    def test_value_on_boundary_is_payoff(self, vf_bm_capped, vf_jd_capped):
        for vf in (vf_bm_capped, vf_jd_capped):
            s = vf.log_K + 0.6 * (vf.eps - vf.log_K)
            x = s - float(vf.boundary(s))
            assert value(vf, x, s) == pytest.approx(vf.payoff(s), rel=1e-14)
            assert value(vf, x - 1.0, s) == vf.payoff(s)
            assert region(vf, x - 1e-9, s) == STOP


VF_NAMES = ["vf_bm_capped", "vf_bm_uncapped", "vf_bv_capped", "vf_bv_uncapped", "vf_jd_capped"]


@pytest.fixture(params=VF_NAMES)
def any_vf(request):
    return request.getfixturevalue(request.param)


class TestInvariants:
    def test_A_positive_and_bounded(self, any_vf):
        vf = any_vf
        assert 0.0 < vf.A_const < math.inf
        if math.isfinite(vf.eps):
            assert vf.A_const <= math.exp(min(vf.eps, vf.boundary.beta)) - vf.K

    def test_naive_limit_close(self, vf_bm_capped, vf_bm_uncapped):
        for vf in (vf_bm_capped, vf_bm_uncapped):
            naive = np.array(vf.diagnostics["naive_limit"])
            assert np.all(np.isfinite(naive))
            assert np.max(np.abs(naive - vf.A_const)) / vf.A_const < 0.05

    def test_dominance_grid(self, any_vf):
        vf = any_vf
        lo = vf.log_K - 1.0
        hi = vf.log_K + (2.0 if not math.isfinite(vf.eps) else vf.eps - vf.log_K + 0.5)
        xs = np.linspace(lo - 1.0, hi, 100)
        ss = np.linspace(lo, hi, 100)
        X, S = np.meshgrid(xs, ss)
        V = value_grid(vf, X, S)
        inside = ~np.isnan(V)
        assert inside.sum() > 4000
        assert np.all(V[inside] >= vf.payoff(S[inside]) - 1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.05, 0.95), st.floats(0.0, 1.0))
    def test_monotone_in_cap(self, s_frac, depth):
        vf1, vf2, vfi = _bm_family()
        s = s_frac
        x = s - depth * 1.2 * float(vf2.boundary(s))
        v1, v2, vi = value(vf1, x, s), value(vf2, x, s), value(vfi, x, s)
        assert v1 <= v2 + 1e-12 and v2 <= vi + 1e-12


_FAMILY = {}


def _bm_family():
    if not _FAMILY:
        m = LinearBrownian(1.0, SQRT2)
        _FAMILY["f"] = tuple(build_value_function(m, 4.0, 1.0, e) for e in (1.0, 1.5, math.inf))
    return _FAMILY["f"]


class TestFitConditions:
    H = 1e-6

    def _split(self, vf, s):
        xb = s - float(vf.boundary(s))
        left = (value(vf, xb, s) - value(vf, xb - self.H, s)) / self.H
        right = (value(vf, xb + self.H, s) - value(vf, xb, s)) / self.H
        return xb, left, right

    @pytest.mark.parametrize("name", ["vf_bm_capped", "vf_bm_uncapped", "vf_jd_capped"])
    def test_smooth_fit(self, request, name):
        vf = request.getfixturevalue(name)
        top = vf.eps if math.isfinite(vf.eps) else vf.log_K + 2.0
        for s in np.linspace(vf.log_K + 0.1, top - 0.1, 7):
            _, left, right = self._split(vf, s)
            assert left == 0.0
            assert abs(right - left) < 1e-4

    @pytest.mark.parametrize("name", ["vf_bv_capped", "vf_bv_uncapped"])
    def test_continuous_fit(self, request, name):
        vf = request.getfixturevalue(name)
        d, q = vf.model.d, vf.q
        for s in np.linspace(0.1, 0.8, 6):
            xb, left, right = self._split(vf, s)
            lim = value(vf, xb + 1e-12, s)
            assert abs(lim - value(vf, xb, s)) < 1e-8
            jump = right - left
            assert jump > 0.0
            assert jump == pytest.approx(math.expm1(s) * q / d, rel=1e-4)

    def test_normal_reflection(self, any_vf):
        vf = any_vf
        top = vf.eps if math.isfinite(vf.eps) else vf.log_K + 2.0
        top = min(top, vf.boundary.beta)
        h = 2e-8
        for s in np.linspace(vf.log_K + 0.1, top - 0.1, 7):
            x = s - 1e-7
            dv = (value(vf, x, s + h) - value(vf, x, s - h)) / (2.0 * h)
            assert abs(dv) < 1e-4


class TestSpecialCases:
    neg = LinearBrownian(-1.0, SQRT2)

    def test_q0_capped_example(self):
        assert special_value_q0_capped(self.neg, 1.0, LN2, 0.0, 0.0) == pytest.approx(0.5, abs=1e-14)

    def test_q0_capped_below_strike(self):
        A = special_value_q0_capped(self.neg, 1.0, LN2, 0.0, 0.0)
        assert special_value_q0_capped(self.neg, 1.0, LN2, -0.3, -0.3) == pytest.approx(math.exp(-0.6) * A, rel=1e-14)

    def test_q0_capped_nonneg_drift(self, bm):
        assert special_value_q0_capped(bm, 1.0, 1.0, -2.0, -1.0) == pytest.approx(math.e - 1.0)

    def test_q0_capped_phi_one_branch(self):
        m = LinearBrownian(0.0, SQRT2)
        A = special_value_q0_capped(m, 1.0, 1.0, 0.0, 0.0)
        assert A == pytest.approx(1.0)
        assert special_value_q0_capped(m, 1.0, 1.0, 0.2, 0.5) == pytest.approx(math.exp(0.5) - 1 + math.exp(0.2) * 0.5)

    def test_q0_capped_continuous_at_strike(self):
        a = special_value_q0_capped(self.neg, 1.0, LN2, -1e-12, -1e-12)
        b = special_value_q0_capped(self.neg, 1.0, LN2, 0.0, 1e-12)
        assert a == pytest.approx(b, abs=1e-10)

    def test_q0_capped_dispatch(self):
        vf = build_value_function(self.neg, 0.0, 1.0, LN2)
        assert vf.ctx is None and vf.A_const == pytest.approx(0.5)
        assert value(vf, 0.0, 0.0) == pytest.approx(0.5)
        assert region(vf, 0.0, LN2) == STOP

    def test_q0_uncapped_example(self):
        assert special_value_uncapped(self.neg, 0.0, 1.0, 0.0, 0.0) == pytest.approx(1.0)

    def test_q0_uncapped_nonneg_drift_infinite(self, bm):
        assert special_value_uncapped(bm, 0.0, 1.0, 0.0, 0.0) == math.inf

    def test_subcritical_uncapped_infinite(self, bm):
        assert special_value_uncapped(bm, 0.5, 1.0, 0.0, 0.0) == math.inf
        vf = build_value_function(bm, 0.5, 1.0, math.inf)
        assert vf.infinite
        with pytest.raises(InfiniteValue):
            value(vf, 0.0, 0.0)

    def test_mismatch(self, bm):
        with pytest.raises(RegimeMismatch):
            special_value_q0_capped(bm, 1.0, math.inf, 0.0, 0.0)
        with pytest.raises(RegimeMismatch):
            special_value_uncapped(bm, 4.0, 1.0, 0.0, 0.0)


class TestFiniteness:
    def test_nonneg_drift_is_one(self, vf_bm_capped):
        assert finiteness_probability(vf_bm_capped, -2.0, -1.0) == 1.0

    def test_negative_drift(self):
        vf = build_value_function(LinearBrownian(-1.0, SQRT2), 0.5, 1.0, 1.0)
        assert finiteness_probability(vf, -0.5, -0.5) == pytest.approx(math.exp(-1.0), rel=1e-14)
        assert finiteness_probability(vf, 0.2, 0.3) == 1.0
        rep = finiteness_report(vf, -0.5, -0.5)
        assert rep["first_passage"] == pytest.approx(math.exp(-1.0))
        assert rep["printed_phi_q"] == pytest.approx(math.exp(-vf.ctx.phi_q * 0.5))
        assert finiteness_report(vf, 0.2, 0.3)["printed_phi_q"] == 1.0


class TestExport:
    def test_surface_csv(self, vf_bv_capped, tmp_path):
        xs = np.linspace(-0.5, 1.0, 7)
        ss = np.linspace(-0.2, 1.0, 5)
        n = export_value_surface(vf_bv_capped, xs, ss, tmp_path / "v.csv")
        with open(tmp_path / "v.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == n == sum(1 for s in ss for x in xs if x <= s)
        for r in rows:
            x, s = float(r["x"]), float(r["s"])
            assert r["region"] == region(vf_bv_capped, x, s)
            assert float(r["value"]) == value(vf_bv_capped, x, s)
