"""Monte Carlo verification of prices, exit identities and stopping rules.

All estimators share one convention: a result is a deterministic function of
``(seed, n_paths, inputs)``.  Path ``p`` draws its random numbers from a
counter-based stream keyed by the seed, so the thread count never changes the
numbers, and sums use numpy's pairwise reduction over a per-path array.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy.optimize import brentq

from . import _mc_kernels as kern
from ._jsonio import encode_number
from .boundary_ode import Boundary, ODEConfig
from .errors import ConfigError, RegimeMismatch
from .levy_model import LevyModel, classify_regime, laplace_exponent
from .scale_fn import build_scale_context

# prefer OpenMP; an outdated TBB otherwise triggers a warning at first launch
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

DRAWDOWN_CUTOFF = 40.0
HORIZON_RATE = 12.0


@dataclass(frozen=True)
class SimConfig:
    """Path-simulation settings.

    ``horizon=None`` means ``12/q`` for q > 0 and no time truncation for q = 0.
    ``threads=None`` leaves numba's default worker count.
    """

    n_paths: int
    dt: float = 1e-4
    horizon: Optional[float] = None
    seed: int = 0
    bridge_refine: bool = True
    threads: Optional[int] = None

    def __post_init__(self):
        if not (isinstance(self.n_paths, (int, np.integer)) and self.n_paths > 0):
            raise ConfigError(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        if self.horizon is not None and not self.horizon > 0.0:
            raise ConfigError(f"horizon must be positive, got {self.horizon!r}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads!r}")

    def resolved_horizon(self, q: float) -> float:
        if self.horizon is not None:
            return float(self.horizon)
        return HORIZON_RATE / q if q > 0.0 else math.inf

    def to_dict(self) -> dict:
        out = asdict(self)
        out["horizon"] = encode_number(self.horizon)
        return out


@dataclass(frozen=True)
class SimResult:
    mean: float
    std_error: float
    n_effective: int
    truncation_bound: float
    p_tau_finite: float
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_effective": self.n_effective,
            "truncation_bound": encode_number(self.truncation_bound),
            "p_tau_finite": self.p_tau_finite,
            "config_echo": self.config_echo,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def within(self, target: float, n_se: float = 3.0) -> bool:
        return abs(self.mean - target) <= n_se * self.std_error


def mean_and_se(values: np.ndarray):
    """Pairwise-summed mean and ``sample std / sqrt(n)``."""
    n = values.shape[0]
    mean = float(np.sum(values) / n)
    if n < 2:
        return mean, 0.0
    var = float(np.sum((values - mean) ** 2) / (n - 1))
    return mean, math.sqrt(var / n)


def _set_threads(cfg: SimConfig) -> None:
    if cfg.threads is not None:
        numba.set_num_threads(min(cfg.threads, numba.config.NUMBA_NUM_THREADS))


def _boundary_arrays(boundary: Optional[Boundary]):
    """Flatten a boundary for the compiled kernels (empty arrays disable the drawdown rule)."""
    if boundary is None:
        empty = np.empty(0)
        return empty, np.empty((4, 0)), math.inf, 0.0, 0.0, 0.0, 1.0
    bx, bc = boundary.ppoly_arrays()
    return (
        np.ascontiguousarray(bx, dtype=float),
        np.ascontiguousarray(bc, dtype=float),
        float(boundary.s_end),
        float(boundary.tail_value),
        float(boundary.v_nodes[0]),
        float(boundary.g_nodes[0]),
        float(boundary.phi_q),
    )


def _forced_level(boundary: Optional[Boundary], delta: float) -> float:
    """Maximum level at which the (bumped) rule stops at once.

    The bumped rule uses ``g + delta`` extended by zero where it is not
    positive: for delta = 0 that is the terminal point of a capped boundary,
    for delta < 0 the level where ``g`` drops to ``|delta|``, and for
    delta > 0 there is none.
    """
    if boundary is None or delta > 0.0:
        return math.inf
    if delta == 0.0:
        return float(boundary.s_end) if boundary.capped else math.inf
    h = -delta
    if boundary.tail_value >= h:
        return math.inf
    lo, hi = math.exp(boundary.v_nodes[0]), float(boundary.s_end - boundary.log_K)
    if boundary.at_offset(lo) <= h:
        return boundary.log_K + lo
    u = brentq(lambda u: boundary.at_offset(u) - h, lo, hi, xtol=1e-14, rtol=1e-15)
    return boundary.log_K + u


def _run_drawdown(model, q, K, eps, boundary, x, s, cfg, delta=0.0, floor=None, q0_rule=False):
    """Per-path (discounted payoff, stopping time) arrays for the rule tau_g."""
    _set_threads(cfg)
    if floor is None:
        floor = ODEConfig().terminal_offset
    log_K = math.log(K)
    horizon = cfg.resolved_horizon(q)
    bx, bc, s_end, tail, v0, g0, phi = _boundary_arrays(boundary)
    if q0_rule:
        forced, cutoff, survivors = float(eps), DRAWDOWN_CUTOFF, True
    else:
        forced = _forced_level(boundary, delta)
        cutoff, survivors = math.inf, False
    key = kern.mix_seed(cfg.seed)
    n = int(cfg.n_paths)
    pay = np.empty(n)
    tau = np.empty(n)
    eps_f = float(eps)
    if model.unbounded_variation or model.sigma_gauss > 0.0:
        kern.drawdown_diffusion(
            key, n, float(x), float(s), model.linear_drift, model.sigma_gauss, model.jump_rate,
            model.jump_alpha, float(q), float(K), log_K, eps_f, float(cfg.dt), horizon,
            bool(cfg.bridge_refine), bx, bc, s_end, tail, v0, g0, phi, float(delta), float(floor),
            forced, cutoff, survivors, pay, tau,
        )
    else:
        kern.drawdown_bv(
            key, n, float(x), float(s), model.linear_drift, model.jump_rate, model.jump_alpha,
            float(q), float(K), log_K, eps_f, horizon, bx, bc, s_end, tail, v0, g0, phi,
            float(delta), float(floor), forced, cutoff, survivors, pay, tau,
        )
    return pay, tau, horizon


def _truncation_bound(model, q, K, eps, s, horizon) -> float:
    if not math.isfinite(horizon):
        return 0.0
    if math.isfinite(eps):
        return math.exp(-q * horizon) * max(math.exp(eps) - K, 0.0)
    # uncapped: E[e^{-qT + X_T}] = e^{x - (q - psi(1)) T}, a heuristic scale for the tail
    rate = q - float(laplace_exponent(model, 1.0))
    return math.exp(s - rate * horizon)


def simulate_price(
    model: LevyModel,
    q: float,
    K: float,
    eps: float,
    boundary: Optional[Boundary],
    x: float,
    s: float,
    cfg: SimConfig,
    *,
    delta: float = 0.0,
    floor: Optional[float] = None,
) -> SimResult:
    """Price of the drawdown stopping rule defined by ``boundary``.

    With ``boundary=None`` the rule is first passage of the maximum above
    ``eps`` (the optimal rule when q = 0); a path whose drawdown reaches 40
    first is stopped and paid on its current maximum.
    """
    if x > s:
        raise ConfigError(f"(x, s) = ({x}, {s}) is outside x <= s")
    q0_rule = boundary is None
    if q0_rule and not math.isfinite(eps):
        raise ConfigError("the first-passage rule needs a finite cap")
    pay, tau, horizon = _run_drawdown(model, q, K, eps, boundary, x, s, cfg, delta, floor, q0_rule)
    mean, se = mean_and_se(pay)
    return SimResult(
        mean=mean,
        std_error=se,
        n_effective=int(cfg.n_paths),
        truncation_bound=_truncation_bound(model, q, K, eps, s, horizon),
        p_tau_finite=float(np.count_nonzero(np.isfinite(tau)) / tau.shape[0]),
        config_echo={
            "sim": cfg.to_dict(),
            "model": model.to_dict(),
            "q": q,
            "K": K,
            "eps": encode_number(eps),
            "x": x,
            "s": s,
            "delta": delta,
            "rule": "first_passage" if q0_rule else "drawdown",
        },
    )


def simulate_max_law_q0(model: LevyModel, K: float, eps: float, cfg: SimConfig) -> SimResult:
    """q = 0 capped price from (0, 0) by sampling the all-time maximum directly.

    When X drifts to -inf the overall maximum is exponential with rate Phi(0),
    so the payoff of first passage above eps is ``(e^{min(Xbar, eps)} - K)^+``.
    """
    from .levy_model import phi_inverse, psi_prime_at_zero

    if psi_prime_at_zero(model) >= 0.0:
        raise RegimeMismatch("the maximum is infinite when psi'(0+) >= 0")
    rate = phi_inverse(model, 0.0)
    rng = np.random.default_rng(cfg.seed)
    top = rng.exponential(1.0 / rate, size=cfg.n_paths)
    pay = np.maximum(np.exp(np.minimum(top, eps)) - K, 0.0)
    mean, se = mean_and_se(pay)
    return SimResult(mean, se, int(cfg.n_paths), 0.0, 1.0, {"sim": cfg.to_dict(), "rule": "max_law"})


# -- exit identities ----------------------------------------------------------


def exit_identity_targets(model: LevyModel, q: float, a: float, b: float, x: float):
    """Scale-function right sides: W(x-a)/W(b-a) and Z(x-a) - Z(b-a) W(x-a)/W(b-a)."""
    ctx = build_scale_context(model, q)
    ratio = ctx.W(x - a) / ctx.W(b - a)
    return ratio, ctx.Z(x - a) - ctx.Z(b - a) * ratio


def verify_exit_identities(model: LevyModel, q: float, a: float, b: float, x: float, cfg: SimConfig) -> dict:
    """MC estimates of the two-sided exit transforms against their scale-function forms.

    The discount is realised as an independent exponential clock with rate q,
    so crossings inside a step need no time interpolation.
    """
    if not a < b:
        raise ConfigError(f"need a < b, got a={a}, b={b}")
    if not a < x <= b:
        raise ConfigError(f"need a < x <= b, got x={x}")
    _set_threads(cfg)
    key = kern.mix_seed(cfg.seed)
    n = int(cfg.n_paths)
    up = np.empty(n)
    dn = np.empty(n)
    horizon = cfg.resolved_horizon(q)
    if model.sigma_gauss > 0.0:
        kern.two_sided_exit(
            key, n, float(x), float(a), float(b), model.linear_drift, model.sigma_gauss,
            model.jump_rate, model.jump_alpha, float(q), float(cfg.dt), horizon, up, dn,
        )
    else:
        kern.two_sided_exit_bv(
            key, n, float(x), float(a), float(b), model.linear_drift, model.jump_rate,
            model.jump_alpha, float(q), horizon, up, dn,
        )
    t_up, t_dn = exit_identity_targets(model, q, a, b, x)
    m_up, se_up = mean_and_se(up)
    m_dn, se_dn = mean_and_se(dn)
    return {
        "upper": {"mean": m_up, "std_error": se_up, "target": t_up, "pass": abs(m_up - t_up) <= 3 * se_up + 1e-12},
        "lower": {"mean": m_dn, "std_error": se_dn, "target": t_dn, "pass": abs(m_dn - t_dn) <= 3 * se_dn + 1e-12},
        "n_paths": n,
        "seed": cfg.seed,
    }


# -- optimality by perturbation -----------------------------------------------


def perturbation_test(
    model: LevyModel,
    q: float,
    K: float,
    eps: float,
    boundary: Boundary,
    x: float,
    s: float,
    delta: float,
    cfg: SimConfig,
    floor: Optional[float] = None,
) -> dict:
    """Compare the rule for g against g + delta and g - delta on common paths.

    The lowered boundary stops at once from the level where g falls to delta;
    ``floor`` keeps it positive below that level.
    """
    if not delta > 0.0:
        raise ConfigError(f"delta must be positive, got {delta}")
    reg = classify_regime(model, q, K, eps)
    if not reg.is_main:
        raise RegimeMismatch(f"perturbation test needs a main-case regime, got {reg}")
    base, _, _ = _run_drawdown(model, q, K, eps, boundary, x, s, cfg, 0.0, floor)
    out = {"base": dict(zip(("mean", "std_error"), mean_and_se(base))), "delta": delta, "pass": True}
    for name, d in (("up", delta), ("down", -delta)):
        bumped, _, _ = _run_drawdown(model, q, K, eps, boundary, x, s, cfg, d, floor)
        diff_mean, diff_se = mean_and_se(base - bumped)
        ok = diff_mean >= -3.0 * diff_se
        out[name] = {
            "mean": mean_and_se(bumped)[0],
            "diff_mean": diff_mean,
            "diff_se": diff_se,
            "pass": bool(ok),
        }
        out["pass"] = out["pass"] and bool(ok)
    return out


# -- finiteness of the stopping time ------------------------------------------


def estimate_finiteness(
    model: LevyModel, q: float, K: float, boundary: Boundary, x: float, s: float, cfg: SimConfig
) -> dict:
    """Fraction of paths stopped by the horizon, with a saturation check on the tail.

    ``saturated`` is true when fewer stops happen in the last half of the
    horizon than three binomial standard errors; ``extrapolated`` adds a
    geometric continuation of the last two quarter-horizon increments.
    """
    eps = math.inf if not boundary.capped else boundary.eps
    _, tau, horizon = _run_drawdown(model, q, K, eps, boundary, x, s, cfg)
    n = tau.shape[0]
    fin = np.isfinite(tau)
    p = float(np.count_nonzero(fin) / n)
    se = math.sqrt(max(p * (1.0 - p), 0.0) / n)
    marks = [np.count_nonzero(tau <= f * horizon) / n for f in (0.5, 0.75, 1.0)]
    late = marks[2] - marks[0]
    d1, d2 = marks[1] - marks[0], marks[2] - marks[1]
    extra = 0.0
    if d1 > 0.0 and 0.0 < d2 < d1:
        r = d2 / d1
        extra = d2 * r / (1.0 - r)
    return {
        "p_tau_finite": p,
        "std_error": se,
        "saturated": bool(late <= 3.0 * math.sqrt(max(late * (1.0 - late), 1.0 / n) / n)),
        "extrapolated": min(p + extra, 1.0),
        "horizon": horizon,
    }


# -- integrability of the discounted maximum ----------------------------------


def check_integrability(model: LevyModel, q: float, cfg: SimConfig, x: float = 0.0) -> dict:
    """E[sup_{t<=T} e^{-qt + Xbar_t}] for T = H/4, H/2, H.

    ``saturated`` means every pair of estimates agrees within three combined
    standard errors.  The paired increment between H/4 and H is reported as
    well; it is nonnegative path by path and is far more sensitive.
    """
    if not q > float(laplace_exponent(model, 1.0)):
        raise RegimeMismatch(f"integrability needs q > psi(1), got q={q}")
    _set_threads(cfg)
    horizon = cfg.resolved_horizon(q)
    marks = np.array([horizon / 4.0, horizon / 2.0, horizon])
    key = kern.mix_seed(cfg.seed)
    n = int(cfg.n_paths)
    out = np.empty((n, 3))
    kern.discounted_sup(
        key, n, float(x), model.linear_drift, model.sigma_gauss, model.jump_rate, model.jump_alpha,
        float(q), float(cfg.dt), horizon, marks, out,
    )
    est = [mean_and_se(out[:, j]) for j in range(3)]
    inc = mean_and_se(out[:, 2] - out[:, 0])
    agree = all(
        abs(est[i][0] - est[j][0]) <= 3.0 * math.hypot(est[i][1], est[j][1])
        for i in range(3)
        for j in range(i + 1, 3)
    )
    return {
        "horizons": marks.tolist(),
        "means": [m for m, _ in est],
        "std_errors": [e for _, e in est],
        "increment": {"mean": inc[0], "std_error": inc[1]},
        "saturated": bool(agree),
    }
