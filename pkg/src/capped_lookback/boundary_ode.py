"""Free-boundary ODE g'(s) = 1 - e^s Z(g) / ((e^s - K) q W(g)).

Trajectories are integrated in the plane ``(v, g)`` with ``v = log(s - log K)``
and parametrised by arc length ``tau``.  Along a solution

    dv/dtau = D / |(D, N)|,   dg/dtau = N / |(D, N)|,

with ``D = q W(g)`` and ``N = u q W(g) - A(u) Z(g)``, ``u = s - log K`` and
``A(u) = u e^s / (e^s - K)``.  Both components are bounded, so the vertical
tangent at ``g = 0`` (unbounded variation), the stationary point at
``(beta, 0)`` and the logarithmic blow-up at ``s = log K`` are ordinary points
of the parametrised flow.  W and Z enter only through a common exponential
scaling, which cancels in the unit direction.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from ._jsonio import encode_number
from .errors import (
    BracketFailure,
    InvalidParameter,
    OutsideU,
    RegimeMismatch,
    StepFailure,
)
from .levy_model import Regime, beta_level, classify_regime
from .scale_fn import ScaleContext, isocline_inverse


@dataclass(frozen=True)
class ODEConfig:
    """Tolerances and extents for the boundary solvers.

    Parameters
    ----------
    rel_tol, abs_tol
        Tolerances handed to the embedded Runge-Kutta stepper (DOP853).
    terminal_offset
        Height ``delta_0`` treated as "hit zero" during classification; also
        the floor for perturbed boundaries in Monte Carlo tests.
    blow_up_cap
        Height at which diverging trajectories are declared divergent and
        at which backward solves stop.
    s_max_factor
        Uncapped grids extend to ``log K + s_max_factor``.
    shooting_tol
        Width of the final initial-height bracket in the shooting method.
    u_min
        Backward solves stop at ``s = log K + u_min``.
    n_grid
        Number of uniform arc-length nodes (terminal refinement is extra).
    separatrix_tol
        Probe offset used by :func:`classify_solution` to recognise the
        separatrix.
    k_margin
        A trajectory is put in the hitting class once it is below
        ``k* - k_margin``.
    shooting_offset
        Shooting anchor is ``s* = eta + shooting_offset``.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    terminal_offset: float = 1e-6
    blow_up_cap: float = 1e3
    s_max_factor: float = 40.0
    shooting_tol: float = 1e-12
    u_min: float = 1e-12
    n_grid: int = 6000
    separatrix_tol: float = 1e-8
    k_margin: float = 1e-9
    shooting_offset: float = 1.0

    def __post_init__(self):
        for name in (
            "rel_tol",
            "abs_tol",
            "terminal_offset",
            "blow_up_cap",
            "s_max_factor",
            "shooting_tol",
            "u_min",
            "separatrix_tol",
            "k_margin",
            "shooting_offset",
        ):
            val = getattr(self, name)
            if not (val > 0.0 and math.isfinite(val)):
                raise InvalidParameter(f"ODEConfig.{name} must be positive, got {val}")
        if int(self.n_grid) < 10:
            raise InvalidParameter("ODEConfig.n_grid must be at least 10")


# -- solution classes ---------------------------------------------------------


@dataclass(frozen=True)
class HitsZero:
    """Trajectory falls below ``k*`` and reaches ``delta_0`` at ``s = at``."""

    at: float


@dataclass(frozen=True)
class Diverges:
    """Trajectory meets the 0-isocline at ``isocline_at`` and grows past the cap at ``at``."""

    at: float
    isocline_at: float


@dataclass(frozen=True)
class Separatrix:
    pass


SolutionClass = Union[HitsZero, Diverges, Separatrix]


# -- direction field ----------------------------------------------------------


class _Field:
    """Scalar evaluation of the parametrised direction field for one (ctx, K)."""

    def __init__(self, ctx: ScaleContext, K: float):
        self.ctx = ctx
        self.q = ctx.q
        self.K = float(K)
        self.log_K = math.log(K)

    def parts(self, v: float, g: float):
        u = math.exp(v)
        wc, _, zc = self.ctx.scaled_scalar(max(g, 0.0))
        A = u / -math.expm1(-u)
        D = self.q * wc
        return D, u * D - A * zc

    def forward(self, tau, y):
        D, N = self.parts(y[0], y[1])
        n = math.hypot(D, N)
        return [D / n, N / n]

    def backward(self, tau, y):
        D, N = self.parts(y[0], y[1])
        n = math.hypot(D, N)
        return [-D / n, -N / n]

    def slope_v(self, v: float, g: float) -> float:
        """dg/dv = u g'(s); -inf at g = 0 under unbounded variation."""
        D, N = self.parts(v, g)
        if D == 0.0:
            return -math.inf
        return N / D


def ode_rhs(ctx: ScaleContext, K: float, s: float, H: float) -> float:
    """Right side of the boundary ODE at ``(s, H)``.

    Examples
    --------
    >>> import math
    >>> from capped_lookback.levy_model import LinearBrownian
    >>> from capped_lookback.scale_fn import build_scale_context
    >>> ctx = build_scale_context(LinearBrownian(1.0, math.sqrt(2.0)), 4.0)
    >>> round(ode_rhs(ctx, 1.0, 1.0, ctx.k_star), 6)
    -0.581977
    """
    log_K = math.log(K)
    if not (s > log_K and H > 0.0):
        raise OutsideU(f"(s, H) = ({s}, {H}) is outside U = {{s > log K, H > 0}}")
    u = s - log_K
    wc, _, zc = ctx.scaled_scalar(H)
    a = 1.0 / -math.expm1(-u)
    return 1.0 - a * zc / (ctx.q * wc)


# -- boundary container -------------------------------------------------------


@dataclass(frozen=True)
class Boundary:
    """Solved stopping boundary ``g`` on ``(log K, s_end)``.

    ``grid`` and ``g_values`` list the interior nodes; the terminal node
    ``(s_end, 0)`` of capped solutions is kept separately.  ``g`` is extended
    by 0 beyond a terminal point and by ``k*`` beyond the uncapped grid.
    """

    K: float
    eps: float
    beta: float
    regime: Regime
    grid: np.ndarray
    g_values: np.ndarray
    k_star: Optional[float]
    terminal_slope: float
    phi_q: float
    s_end: float
    tail_value: float
    v_nodes: np.ndarray = field(repr=False)
    g_nodes: np.ndarray = field(repr=False)
    tau_nodes: np.ndarray = field(repr=False)
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)
    _spline: CubicHermiteSpline = field(default=None, repr=False, compare=False)

    @property
    def log_K(self) -> float:
        return math.log(self.K)

    @property
    def s_nodes(self) -> np.ndarray:
        return self.log_K + np.exp(self.v_nodes)

    @property
    def capped(self) -> bool:
        return self.tail_value == 0.0

    def __call__(self, s):
        """Evaluate g at ``s`` (scalar or array); +inf for ``s <= log K``."""
        s = np.asarray(s, dtype=float)
        out = self.at_offset(s - self.log_K)
        out = np.where(s >= self.s_end, self.tail_value, out)
        return float(out) if out.ndim == 0 else out

    def at_offset(self, u):
        """g at ``s = log K + u``, keeping full precision for tiny ``u``."""
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        left = u <= 0.0
        right = u >= self.s_end - self.log_K
        mid = ~(left | right)
        out[left] = np.inf
        out[right] = self.tail_value
        if np.any(mid):
            v = np.log(u[mid])
            v0, vn = self.v_nodes[0], self.v_nodes[-1]
            gv = self._spline(np.clip(v, v0, vn))
            below = v < v0
            gv[below] = self.g_nodes[0] + (v0 - v[below]) / self.phi_q
            out[mid] = np.maximum(gv, 0.0)
        return float(out) if out.ndim == 0 else out

    def ppoly_arrays(self):
        """Breakpoints (in v) and cubic coefficients for compiled evaluation."""
        return np.ascontiguousarray(self._spline.x), np.ascontiguousarray(self._spline.c)

    def metadata(self) -> dict:
        return {
            "K": self.K,
            "eps": encode_number(self.eps),
            "beta": encode_number(self.beta),
            "k_star": encode_number(self.k_star),
            "regime": self.regime.to_dict(),
            "terminal_slope": encode_number(self.terminal_slope),
        }

    def to_csv(self, path) -> None:
        s = self.s_nodes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "g"])
            for si, gi in zip(s, self.g_nodes):
                w.writerow([f"{si:.17g}", f"{gi:.17g}"])

    def write(self, csv_path, json_path) -> None:
        self.to_csv(csv_path)
        with open(json_path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- solvers ------------------------------------------------------------------


def _tau_nodes(tau_lo: float, tau_hi: float, n: int, refine_at_lo: bool) -> np.ndarray:
    """Uniform arc-length nodes, plus geometric ones near a terminal point.

    Near an unbounded-variation terminal g behaves like a square root of the
    distance, so node spacing there is kept proportional to arc length.
    """
    nodes = np.linspace(tau_lo, tau_hi, n + 1)
    if refine_at_lo:
        step = (tau_hi - tau_lo) / n
        top = min(step / (_GEO_RATIO - 1.0), 0.5 * (tau_hi - tau_lo))
        k = np.arange(int(math.log(top / 1e-10) / math.log(_GEO_RATIO)) + 1)
        geo = top * _GEO_RATIO ** -k
        nodes = np.union1d(nodes[nodes > top], tau_lo + geo)
        nodes = np.union1d(nodes, [tau_lo])
    return nodes


_GEO_RATIO = 1.004
_MIN_DU = 1e-9
_MAX_DS = 0.02


def _integrate_backward(fld: _Field, y0, cfg: ODEConfig, v_min: float):
    def ev_left(t, y):
        return y[0] - v_min

    ev_left.terminal = True
    ev_left.direction = -1

    def ev_cap(t, y):
        return y[1] - cfg.blow_up_cap

    ev_cap.terminal = True
    ev_cap.direction = 1

    span = 4.0 * (abs(y0[0] - v_min) + cfg.blow_up_cap) + 10.0
    sol = solve_ivp(
        fld.backward,
        (0.0, span),
        list(y0),
        method="DOP853",
        rtol=cfg.rel_tol,
        atol=cfg.abs_tol,
        dense_output=True,
        events=(ev_left, ev_cap),
    )
    if sol.status == -1:
        raise StepFailure(f"backward integration failed: {sol.message}")
    return sol


def _assemble(
    fld: _Field,
    sol,
    tau_start: float,
    cfg: ODEConfig,
    terminal: bool,
):
    tau_end = sol.t[-1]
    tau = _tau_nodes(tau_start, tau_end, int(cfg.n_grid), refine_at_lo=terminal)
    y = sol.sol(tau)
    # cap the spacing in s so that quadrature along the grid stays resolved
    ds = np.abs(np.diff(np.exp(y[0])))
    split = np.ceil(ds / _MAX_DS).astype(int)
    if np.any(split > 1):
        extra = [
            np.linspace(tau[i], tau[i + 1], k + 1)[1:-1] for i, k in enumerate(split) if k > 1
        ]
        tau = np.union1d(tau, np.concatenate(extra))
        y = sol.sol(tau)
    v = y[0][::-1].copy()
    g = y[1][::-1].copy()
    tau = tau[::-1].copy()
    if terminal:
        g[-1] = 0.0
    # drop nodes closer than the relative resolution at which secants of g are meaningful
    u = np.exp(v)
    keep = np.ones(v.size, dtype=bool)
    if terminal:
        # the refined cells must stay geometric; the one cell closest to the
        # terminal point absorbs whatever lies below resolution
        keep[:-1] = u[-1] - u[:-1] > _MIN_DU * u[-1] / (_GEO_RATIO - 1.0)
    last = u[-1]
    for i in range(v.size - 2, -1, -1):
        if not keep[i]:
            continue
        if last - u[i] <= _MIN_DU * last:
            keep[i] = False
        else:
            last = u[i]
    v, g, tau = v[keep], g[keep], tau[keep]
    slopes = np.array([fld.slope_v(vi, max(gi, 0.0)) for vi, gi in zip(v, g)])
    if not np.isfinite(slopes[-1]):
        slopes[-1] = (g[-1] - g[-2]) / (v[-1] - v[-2])
    return v, g, tau, slopes


def _check_regime(ctx: ScaleContext, K: float, eps: float, kind: str) -> Regime:
    reg = classify_regime(ctx.model, ctx.q, K, eps)
    if reg.kind != kind:
        raise RegimeMismatch(f"expected a {kind} regime, got {reg}")
    return reg


def _terminal_boundary(ctx, K, eps, reg, cfg) -> Boundary:
    log_K = math.log(K)
    beta = beta_level(ctx.model, ctx.q, K)
    s_T = min(eps, beta)
    fld = _Field(ctx, K)
    v_T = math.log(s_T - log_K)
    sol = _integrate_backward(fld, (v_T, 0.0), cfg, math.log(cfg.u_min))
    v, g, tau, slopes = _assemble(fld, sol, 0.0, cfg, terminal=True)
    spline = CubicHermiteSpline(v, g, slopes)
    if ctx.model.unbounded_variation:
        slope = -math.inf
    else:
        a_T = 1.0 / -math.expm1(-(s_T - log_K))
        slope = 1.0 - a_T * ctx.model.d / ctx.q
    return Boundary(
        K=float(K),
        eps=float(eps),
        beta=float(beta),
        regime=reg,
        grid=log_K + np.exp(v[:-1]),
        g_values=g[:-1],
        k_star=ctx.k_star,
        terminal_slope=slope,
        phi_q=ctx.phi_q,
        s_end=s_T,
        tail_value=0.0,
        v_nodes=v,
        g_nodes=g,
        tau_nodes=tau,
        diagnostics={"left_u": float(math.exp(v[0])), "left_g": float(g[0])},
        _spline=spline,
    )


def solve_capped(ctx: ScaleContext, K: float, eps: float, cfg: ODEConfig = ODEConfig()) -> Boundary:
    """Boundary for q > 0 and a finite cap, integrated backward from ``(eps ^ beta, 0)``."""
    if not math.isfinite(eps):
        raise RegimeMismatch("solve_capped needs a finite cap")
    reg = _check_regime(ctx, K, eps, "MainCapped")
    return _terminal_boundary(ctx, K, eps, reg, cfg)


def _classify_raw(fld: _Field, s0: float, H0: float, cfg: ODEConfig, s_limit: float) -> SolutionClass:
    ctx = fld.ctx
    log_K = fld.log_K
    v0 = math.log(s0 - log_K)
    v_lim = math.log(s_limit - log_K)
    D0, N0 = fld.parts(v0, H0)
    if N0 < 0.0:

        def ev_iso(t, y):
            return fld.parts(y[0], y[1])[1]

        ev_iso.terminal = True
        ev_iso.direction = 1

        def ev_zero(t, y):
            return y[1] - cfg.terminal_offset

        ev_zero.terminal = True
        ev_zero.direction = -1

        def ev_far(t, y):
            return y[0] - v_lim

        ev_far.terminal = True
        ev_far.direction = 1

        span = 4.0 * (abs(v_lim - v0) + H0) + 10.0
        sol = solve_ivp(
            fld.forward,
            (0.0, span),
            [v0, H0],
            method="DOP853",
            rtol=cfg.rel_tol,
            atol=cfg.abs_tol,
            events=(ev_iso, ev_zero, ev_far),
        )
        if sol.status == -1:
            raise StepFailure(f"forward integration failed: {sol.message}")
        if sol.t_events[1].size:
            v_hit = sol.y_events[1][0][0]
            return HitsZero(at=log_K + math.exp(v_hit))
        if sol.t_events[0].size:
            v1, g1 = sol.y_events[0][0]
        else:
            return Separatrix()
    else:
        v1, g1 = v0, H0
    iso_at = log_K + math.exp(v1)
    below_k = ctx.k_star is not None and g1 < ctx.k_star - cfg.k_margin
    if below_k:
        # cannot happen analytically: below k* the field is strictly negative
        return HitsZero(at=math.nan)

    def ev_cap(t, y):
        return y[1] - cfg.blow_up_cap

    ev_cap.terminal = True
    ev_cap.direction = 1
    span = 8.0 * cfg.blow_up_cap * (1.0 + 1.0 / max(1e-12, 1.0 - 1.0 / ctx.phi_q)) + 100.0
    sol = solve_ivp(
        fld.forward,
        (0.0, span),
        [v1, g1],
        method="DOP853",
        rtol=cfg.rel_tol,
        atol=cfg.abs_tol,
        events=(ev_cap,),
    )
    if sol.t_events[0].size:
        return Diverges(at=log_K + math.exp(sol.y_events[0][0][0]), isocline_at=iso_at)
    return Diverges(at=math.inf, isocline_at=iso_at)


def _s_limit(K: float, s0: float, cfg: ODEConfig) -> float:
    return max(math.log(K) + cfg.s_max_factor, s0 + 10.0)


def classify_solution(
    ctx: ScaleContext, K: float, s0: float, H0: float, cfg: ODEConfig = ODEConfig()
) -> SolutionClass:
    """Classify the forward trajectory through ``(s0, H0)``.

    Returns :class:`HitsZero` (the trajectory drops below ``k*`` and reaches
    ``delta_0``), :class:`Diverges` (it meets the 0-isocline and grows past
    ``blow_up_cap``) or :class:`Separatrix`.  Forward integration amplifies any
    error off the separatrix, so a start is also labelled ``Separatrix`` when
    the starts ``H0 -/+ separatrix_tol`` fall in opposite classes.
    """
    if not (s0 > math.log(K) and H0 > 0.0):
        raise OutsideU(f"(s0, H0) = ({s0}, {H0}) is outside U")
    fld = _Field(ctx, K)
    s_lim = _s_limit(K, s0, cfg)
    raw = _classify_raw(fld, s0, H0, cfg, s_lim)
    if isinstance(raw, Separatrix):
        return raw
    tol = cfg.separatrix_tol
    lo = _classify_raw(fld, s0, H0 - tol, cfg, s_lim) if H0 > tol else raw
    hi = _classify_raw(fld, s0, H0 + tol, cfg, s_lim)
    if isinstance(lo, HitsZero) and isinstance(hi, Diverges):
        return Separatrix()
    return raw


def shoot_separatrix(ctx: ScaleContext, K: float, cfg: ODEConfig = ODEConfig()):
    """Bisect the initial height at ``s* = eta + shooting_offset``.

    Returns ``(s_star, H_star, iterations)``.
    """
    if ctx.k_star is None:
        raise RegimeMismatch("shooting needs k*, i.e. case D")
    s_star = ctx.eta(K) + cfg.shooting_offset
    fld = _Field(ctx, K)
    s_lim = _s_limit(K, s_star, cfg)
    lo = ctx.k_star
    hi = isocline_inverse(ctx, K, s_star)
    c_lo = _classify_raw(fld, s_star, lo, cfg, s_lim)
    c_hi = _classify_raw(fld, s_star, hi, cfg, s_lim)
    if not (isinstance(c_lo, HitsZero) and isinstance(c_hi, Diverges)):
        raise BracketFailure(f"bracket ends classify as {c_lo} and {c_hi}")
    it = 0
    while hi - lo > cfg.shooting_tol and it < 200:
        mid = 0.5 * (lo + hi)
        c = _classify_raw(fld, s_star, mid, cfg, s_lim)
        it += 1
        if isinstance(c, HitsZero):
            lo = mid
        elif isinstance(c, Diverges):
            hi = mid
        else:
            lo = hi = mid
    return s_star, 0.5 * (lo + hi), it


def solve_uncapped(ctx: ScaleContext, K: float, cfg: ODEConfig = ODEConfig()) -> Boundary:
    """Boundary for eps = inf and q > 0 v psi(1).

    Case E reuses the terminal solve at ``beta``.  In case D the separatrix is
    located by shooting at ``s*`` and the grid is built by integrating
    backward from far right, starting at height ``k*``.  Backward
    integration contracts onto the separatrix at rate ``W'/W(k*) - 1``, while
    forward integration would amplify errors at the same rate.
    """
    reg = _check_regime(ctx, K, math.inf, "MainUncapped")
    if reg.sub == "E":
        return _terminal_boundary(ctx, K, math.inf, reg, cfg)

    log_K = math.log(K)
    k_star = ctx.k_star
    s_star, H_star, iters = shoot_separatrix(ctx, K, cfg)

    lam = ctx.wprime_over_w(k_star) - 1.0
    s_max = log_K + cfg.s_max_factor
    s_far = s_max + max(10.0, 30.0 / lam)
    fld = _Field(ctx, K)
    sol = _integrate_backward(fld, (math.log(s_far - log_K), k_star), cfg, math.log(cfg.u_min))
    # arc length at which the trajectory passes s_max
    v_max = math.log(s_max - log_K)
    tau_max = brentq(lambda t: sol.sol(t)[0] - v_max, 0.0, sol.t[-1], xtol=1e-13)
    v, g, tau, slopes = _assemble(fld, sol, tau_max, cfg, terminal=False)
    v[-1] = v_max
    spline = CubicHermiteSpline(v, g, slopes)
    bnd = Boundary(
        K=float(K),
        eps=math.inf,
        beta=math.inf,
        regime=reg,
        grid=log_K + np.exp(v),
        g_values=g,
        k_star=k_star,
        terminal_slope=math.nan,
        phi_q=ctx.phi_q,
        s_end=s_max,
        tail_value=k_star,
        v_nodes=v,
        g_nodes=g,
        tau_nodes=tau,
        diagnostics={},
        _spline=spline,
    )
    g_star = float(bnd(s_star))
    bnd.diagnostics.update(
        {
            "s_star": s_star,
            "H_star": H_star,
            "shooting_iterations": iters,
            "shooting_mismatch": abs(g_star - H_star),
            "asymptote_error": abs(float(g[-1]) - k_star),
            "contraction_rate": lam,
            "left_u": float(math.exp(v[0])),
            "left_g": float(g[0]),
        }
    )
    return bnd
