"""Value function V*_eps(x, s) on E = {x <= s} for every parameter regime."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boundary_ode import Boundary, ODEConfig, solve_capped, solve_uncapped
from .errors import InfiniteValue, OutsideE, RegimeMismatch
from .excursion import ExcursionIntegrand, build_excursion, diagonal_value, naive_limit_sequence
from .levy_model import (
    LevyModel,
    Regime,
    classify_regime,
    phi_inverse,
    psi_prime_at_zero,
)
from .scale_fn import ScaleContext, build_scale_context

STOP = "StopD"
CONTINUE_I = "ContinueI"
CONTINUE_II = "ContinueII"


@dataclass(frozen=True)
class ValueFunction:
    """Assembled value function.

    ``A_const`` is the value at ``(log K, log K)``; it scales the value on
    ``{s <= log K}``.  ``infinite`` marks regimes where the value is +inf.
    """

    model: LevyModel
    q: float
    K: float
    eps: float
    regime: Regime
    A_const: float
    infinite: bool = False
    ctx: Optional[ScaleContext] = None
    boundary: Optional[Boundary] = None
    excursion: Optional[ExcursionIntegrand] = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def log_K(self) -> float:
        return math.log(self.K)

    def payoff(self, s):
        """(e^{s ^ eps} - K)^+."""
        s = np.minimum(np.asarray(s, dtype=float), self.eps)
        out = np.maximum(self.K * np.expm1(s - self.log_K), 0.0)
        return float(out) if out.ndim == 0 else out


def _check_E(x: float, s: float) -> None:
    if x > s:
        raise OutsideE(f"(x, s) = ({x}, {s}) violates x <= s")


# -- main cases ---------------------------------------------------------------


def a_const(ctx: ScaleContext, boundary: Boundary):
    """A via the excursion integral at s = log K, with the naive-limit sequence.

    Returns ``(A, excursion, naive)`` where ``naive`` holds
    ``(e^s - K) Z(g(s))`` at the five grid nodes nearest to log K.
    """
    exc = build_excursion(ctx, boundary)
    A = diagonal_value(exc, boundary.log_K)
    return A, exc, naive_limit_sequence(ctx, boundary, 5)


def build_value_function(
    model: LevyModel, q: float, K: float, eps: float, cfg: ODEConfig = ODEConfig()
) -> ValueFunction:
    """Solve the boundary (when there is one) and assemble V*_eps."""
    reg = classify_regime(model, q, K, eps)
    if reg.infinite:
        return ValueFunction(model, q, K, eps, reg, A_const=math.inf, infinite=True)
    if not reg.is_main:
        if reg.kind == "ZeroQCapped":
            A = special_value_q0_capped(model, K, eps, math.log(K), math.log(K))
        else:
            A = special_value_uncapped(model, q, K, math.log(K), math.log(K))
        return ValueFunction(model, q, K, eps, reg, A_const=A)
    ctx = build_scale_context(model, q)
    bnd = solve_capped(ctx, K, eps, cfg) if math.isfinite(eps) else solve_uncapped(ctx, K, cfg)
    A, exc, naive = a_const(ctx, bnd)
    diag = {"naive_limit": naive.tolist(), "naive_rel_gap": float(np.max(np.abs(naive - A)) / A)}
    return ValueFunction(model, q, K, eps, reg, A_const=A, ctx=ctx, boundary=bnd, excursion=exc, diagnostics=diag)


def region(vf: ValueFunction, x: float, s: float) -> str:
    """StopD, ContinueI or ContinueII for a point of E."""
    _check_E(x, s)
    if s <= vf.log_K:
        return CONTINUE_II
    if vf.boundary is not None:
        return STOP if x <= s - vf.boundary(s) else CONTINUE_I
    if vf.regime.kind == "ZeroQCapped":
        return STOP if s >= vf.eps else CONTINUE_I
    return CONTINUE_I


def value(vf: ValueFunction, x: float, s: float) -> float:
    """V*_eps(x, s); raises InfiniteValue in regimes where it is +inf."""
    _check_E(x, s)
    if vf.infinite:
        raise InfiniteValue(f"value is +inf in regime {vf.regime}")
    if vf.regime.kind == "ZeroQCapped":
        return special_value_q0_capped(vf.model, vf.K, vf.eps, x, s)
    if vf.regime.kind == "ZeroQUncapped":
        return special_value_uncapped(vf.model, vf.q, vf.K, x, s)
    log_K = vf.log_K
    if s <= log_K:
        return math.exp(-vf.ctx.phi_q * (log_K - x)) * vf.A_const
    y = x - s + float(vf.boundary(s))
    return vf.K * math.expm1(min(s, vf.eps) - log_K) * vf.ctx.Z(y)


def value_grid(vf: ValueFunction, x, s) -> np.ndarray:
    """Vectorised ``value`` over broadcast arrays; NaN outside E."""
    x, s = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(s, dtype=float))
    out = np.full(x.shape, np.nan)
    for idx in np.ndindex(x.shape):
        if x[idx] <= s[idx]:
            out[idx] = value(vf, float(x[idx]), float(s[idx]))
    return out


def finiteness_probability(vf: ValueFunction, x: float, s: float) -> float:
    """P_{x,s}[tau* < inf].

    When X drifts to -inf the optimal rule stops once the maximum has passed
    log K, which happens with probability ``exp(-Phi(0) (log K - x))`` from a
    point with ``s <= log K`` and with probability one when ``s > log K``.
    """
    _check_E(x, s)
    if vf.infinite or vf.regime.kind == "ZeroQUncapped":
        return 0.0
    if psi_prime_at_zero(vf.model) >= 0.0:
        return 1.0
    phi0 = phi_inverse(vf.model, 0.0)
    level = vf.eps if vf.regime.kind == "ZeroQCapped" else vf.log_K
    if s > level or (vf.regime.kind == "ZeroQCapped" and s >= level):
        return 1.0
    return math.exp(-phi0 * max(level - x, 0.0))


def finiteness_report(vf: ValueFunction, x: float, s: float) -> dict:
    """Both candidate probabilities: the first-passage one and ``exp(-Phi(q)(log K - x))``."""
    p = finiteness_probability(vf, x, s)
    printed = None
    if vf.ctx is not None and psi_prime_at_zero(vf.model) < 0.0:
        printed = math.exp(-vf.ctx.phi_q * max(vf.log_K - x, 0.0))
    elif vf.ctx is not None:
        printed = 1.0
    return {"first_passage": p, "printed_phi_q": printed}


# -- special cases ------------------------------------------------------------


def special_value_q0_capped(model: LevyModel, K: float, eps: float, x: float, s: float) -> float:
    """Closed form for q = 0 and a finite cap; the optimal rule is first passage above eps."""
    reg = classify_regime(model, 0.0, K, eps)
    if reg.kind != "ZeroQCapped":
        raise RegimeMismatch(f"q = 0 capped closed form does not apply to {reg}")
    _check_E(x, s)
    log_K = math.log(K)
    top = math.exp(eps) - K
    if reg.sub == "drift_nonneg" or s >= eps:
        return top
    phi0 = phi_inverse(model, 0.0)
    if reg.sub == "drift_neg_phi_eq_1":
        if s >= log_K:
            return math.exp(s) - K + math.exp(x) * (eps - s)
        return math.exp(-(log_K - x)) * K * (eps - log_K)
    one = 1.0 - phi0
    if s >= log_K:
        return math.exp(s) - K + math.exp(x * phi0) / (phi0 - 1.0) * (math.exp(s * one) - math.exp(eps * one))
    A = K**phi0 * (K**one - math.exp(eps * one)) / (phi0 - 1.0)
    return math.exp(-phi0 * (log_K - x)) * A


def special_value_uncapped(model: LevyModel, q: float, K: float, x: float, s: float) -> float:
    """Value for eps = inf when q = 0 or 0 < q <= psi(1); +inf unless q = 0 and Phi(0) > 1."""
    reg = classify_regime(model, q, K, math.inf)
    if reg.kind not in ("ZeroQUncapped", "SubcriticalUncapped"):
        raise RegimeMismatch(f"uncapped special case does not apply to {reg}")
    _check_E(x, s)
    if reg.infinite:
        return math.inf
    phi0 = phi_inverse(model, 0.0)
    log_K = math.log(K)
    if s >= log_K:
        return math.exp(s) - K + math.exp(x * phi0 + s * (1.0 - phi0)) / (phi0 - 1.0)
    return math.exp(-phi0 * (log_K - x)) * K / (phi0 - 1.0)


# -- export -------------------------------------------------------------------


def export_value_surface(vf: ValueFunction, xs, ss, path) -> int:
    """Write ``x,s,region,value`` rows for the grid points of xs x ss lying in E."""
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "s", "region", "value"])
        for s in ss:
            for x in xs:
                x, s = float(x), float(s)
                if x > s:
                    continue
                v = math.inf if vf.infinite else value(vf, x, s)
                w.writerow([f"{x:.17g}", f"{s:.17g}", region(vf, x, s), f"{v:.17g}"])
                rows += 1
    return rows
