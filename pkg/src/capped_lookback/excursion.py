"""Excursion representation of the diagonal value V(s, s).

    V(s, s) = int_s^U (e^t - K) hat_f(g(t)) exp(-int_s^t W'/W(g)) dt
              + (e^U - K) exp(-int_s^U W'/W(g))

with ``U = eps ^ beta``; the second term is absent when ``U = inf``.  Both
integrals are accumulated once along the boundary nodes.  The quadrature runs
in the arc-length parameter of the solved trajectory, where
``(W'/W)(g) ds/dtau`` and ``hat_f(g) ds/dtau`` stay bounded even at an
unbounded-variation terminal point (where W'/W(g) ~ 1/g).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, cumulative_simpson, quad

from .boundary_ode import Boundary
from .errors import NonpositiveArgument, OutsideDomain, QuadratureFailure
from .scale_fn import ScaleContext


def hat_f(ctx: ScaleContext, u):
    """Z(u) W'(u)/W(u) - q W(u) for u > 0.

    Examples
    --------
    >>> import math
    >>> from capped_lookback.levy_model import LinearBrownian
    >>> from capped_lookback.scale_fn import build_scale_context
    >>> ctx = build_scale_context(LinearBrownian(1.0, math.sqrt(2.0)), 4.0)
    >>> round(hat_f(ctx, ctx.k_star), 6)
    3.464102
    """
    ua = np.asarray(u, dtype=float)
    if np.any(ua <= 0.0):
        raise NonpositiveArgument("hat_f is defined on (0, inf)")
    c, wc, wpc, zc = ctx.scaled(ua)
    with np.errstate(over="ignore"):
        out = (zc * wpc / wc - ctx.q * wc) / c
    far = ua > 1.0
    if np.any(far):
        out = np.where(far, _hat_f_far(ctx, np.where(far, ua, 2.0), wc), out)
    return float(out) if out.ndim == 0 else out


def _hat_f_far(ctx: ScaleContext, u, wc):
    """hat_f = (Z W' - q W^2) / W from the pairwise expansion of the numerator.

    With W = sum w_i e^{z_i u} and Z = q sum (w_i/z_i) e^{z_i u}, the numerator
    is sum_{i<j} q w_i w_j (z_i - z_j)^2 / (z_i z_j) e^{(z_i + z_j) u}; the
    e^{2 Phi u} terms cancel exactly, which the direct difference cannot do
    once hat_f is small next to Z W'/W.
    """
    z = np.asarray(ctx.roots, dtype=float)
    w = np.asarray(ctx.weights, dtype=float)
    i, j = np.triu_indices(len(z), k=1)
    coef = ctx.q * w[i] * w[j] * (z[i] - z[j]) ** 2 / (z[i] * z[j])
    num = np.sum(coef * np.exp((z[i] + z[j] - ctx.phi_q) * u[..., None]), axis=-1)
    return num / wc


def _quad(f, a, b, what):
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, _ = quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=200)
        except IntegrationWarning as exc:
            raise QuadratureFailure(f"{what}: {exc}") from exc
    return val


@dataclass(frozen=True)
class ExcursionIntegrand:
    """Prefix sums of the excursion integrals along a solved boundary.

    Attributes
    ----------
    upper
        ``eps ^ beta`` for terminal boundaries, ``inf`` in the uncapped k*
        case (then an analytic tail with ``g = k*`` beyond the grid is used).
    """

    ctx: ScaleContext
    boundary: Boundary
    K: float
    upper: float
    s_nodes: np.ndarray = field(repr=False)
    log_surv: np.ndarray = field(repr=False)
    scaled_sum: np.ndarray = field(repr=False)
    shift: float = field(repr=False)
    end_term: float = field(repr=False)

    def _node_value(self, i: int) -> float:
        """V at node i, ``exp(-Lambda_i) (sum_i + end_term)`` in a stable form."""
        lam = self.log_surv[i]
        return math.exp(self.shift - lam) * self.scaled_sum[i] + math.exp(
            math.log(self.end_term) - lam if self.end_term > 0.0 else -math.inf
        )

    def w_ratio(self, t):
        g = self.boundary(t)
        return self.ctx.wprime_over_w(np.maximum(g, 0.0))

    def integrand(self, s: float, t: float) -> float:
        """(e^t - K) hat_f(g(t)) times the survival weight from s to t."""
        return (math.exp(t) - self.K) * hat_f(self.ctx, self.boundary(t)) * self.survival_weight(s, t)

    def survival_weight(self, s: float, t: float) -> float:
        """exp(-int_s^t W'/W(g(u)) du) for s <= t."""
        return math.exp(-(self._log_surv_at(s) - self._log_surv_at(t))) if t >= s else math.nan

    def _log_surv_at(self, s: float) -> float:
        """Lambda(s) = int_s^{s_ref} W'/W(g), s_ref the right end of the grid."""
        sn = self.s_nodes
        if s <= sn[0]:
            return self.log_surv[0] + self.ctx.phi_q * (sn[0] - max(s, self.boundary.log_K))
        if s >= sn[-1]:
            w = self.ctx.wprime_over_w(self.boundary.tail_value) if not self.boundary.capped else 0.0
            return -(s - sn[-1]) * w
        i = int(np.searchsorted(sn, s))  # sn[i-1] < s <= sn[i]
        return self.log_surv[i] + _quad(self.w_ratio, s, sn[i], "survival integral")


def build_excursion(ctx: ScaleContext, boundary: Boundary) -> ExcursionIntegrand:
    K = boundary.K
    v = boundary.v_nodes
    g = np.maximum(boundary.g_nodes, 0.0)
    tau = boundary.tau_nodes
    u = np.exp(v)
    q = ctx.q

    c, wc, wpc, zc = ctx.scaled(g)
    A = u / -np.expm1(-u)
    D = q * wc
    N = u * D - A * zc
    norm = np.hypot(D, N)
    # (W'/W)(g) ds/dtau and (e^t - K) hat_f(g) ds/dtau without dividing by W
    lam_rate = u * q * wpc / norm
    with np.errstate(over="ignore"):
        h = K * np.expm1(u) * u * q * (zc * wpc - q * wc * wc) / (c * norm)

    # tau decreases with s along every solved boundary
    order = np.argsort(tau)
    t_sorted = tau[order]
    lam = np.empty_like(tau)
    lam[order] = cumulative_simpson(lam_rate[order], x=t_sorted, initial=0.0)

    if boundary.capped:
        upper = boundary.s_end
        end_term = K * math.expm1(upper - boundary.log_K)
    else:
        upper = math.inf
        k = boundary.tail_value
        w = ctx.wprime_over_w(k)
        s_m = boundary.s_end
        end_term = hat_f(ctx, k) * (math.exp(s_m) / (w - 1.0) - K / w)
    shift = float(np.max(lam))
    integ = h * np.exp(lam - shift)
    acc = np.empty_like(tau)
    acc[order] = cumulative_simpson(integ[order], x=t_sorted, initial=0.0)
    if not (np.all(np.isfinite(acc)) and np.all(np.isfinite(lam))):
        raise QuadratureFailure("non-finite prefix sums along the boundary")
    return ExcursionIntegrand(
        ctx=ctx,
        boundary=boundary,
        K=float(K),
        upper=upper,
        s_nodes=boundary.log_K + u,
        log_surv=lam,
        scaled_sum=acc,
        shift=shift,
        end_term=float(end_term),
    )


def diagonal_value(exc: ExcursionIntegrand, s: float) -> float:
    """V(s, s) from the excursion integral, for log K <= s < upper (or s >= upper)."""
    b = exc.boundary
    log_K = b.log_K
    if s < log_K:
        raise OutsideDomain(f"s={s} is below log K")
    if b.capped and s >= exc.upper:
        return math.exp(exc.upper) - exc.K
    sn = exc.s_nodes
    if s <= sn[0]:
        # W'/W(g) -> Phi(q) and the outer integrand is bounded near log K
        v0 = exc._node_value(0)
        du = sn[0] - s
        f0 = (math.exp(sn[0]) - exc.K) * hat_f(exc.ctx, b.g_nodes[0])
        return math.exp(-exc.ctx.phi_q * du) * v0 + f0 * du
    if s >= sn[-1]:
        if b.capped:
            return math.exp(exc.upper) - exc.K
        # tail with g = k*: V(s) = hat_f(k*) (e^s/(w-1) - K/w)
        k = b.tail_value
        w = exc.ctx.wprime_over_w(k)
        return hat_f(exc.ctx, k) * (math.exp(s) / (w - 1.0) - exc.K / w)
    i = int(np.searchsorted(sn, s))
    if sn[i] == s:
        return exc._node_value(i)
    ti = sn[i]
    # partial cell [s, ti]: nested Gauss-Legendre, the cell is short and g smooth on it
    x, w = _GL
    half = 0.5 * (ti - s)
    t = s + half * (x + 1.0)
    tt = s + 0.5 * (t[:, None] - s) * (x[None, :] + 1.0)
    ratio = exc.ctx.wprime_over_w(np.maximum(b(tt.ravel()), 0.0)).reshape(tt.shape)
    inner = 0.5 * (t - s) * (ratio @ w)
    gt = np.maximum(b(t), 0.0)
    f = exc.K * np.expm1(t - log_K) * hat_f(exc.ctx, np.maximum(gt, 1e-300)) * np.exp(-inner)
    part = half * float(f @ w)
    inner_end = half * float(exc.w_ratio(t) @ w)
    return math.exp(-inner_end) * exc._node_value(i) + part


_GL = np.polynomial.legendre.leggauss(12)


def naive_limit_sequence(ctx: ScaleContext, boundary: Boundary, n: int = 5) -> np.ndarray:
    """(e^s - K) Z(g(s)) at the ``n`` grid nodes closest to log K."""
    u = np.exp(boundary.v_nodes[:n])
    g = boundary.g_nodes[:n]
    return boundary.K * np.expm1(u) * ctx.Z(g)


def max_diagonal_discrepancy(exc: ExcursionIntegrand, n: int = 50, margin: float = 0.05):
    """Largest relative gap between the excursion and closed-form diagonal values."""
    b = exc.boundary
    hi = exc.upper if math.isfinite(exc.upper) else b.s_end
    s = np.linspace(b.log_K + margin, hi - margin, n)
    ex = np.array([diagonal_value(exc, si) for si in s])
    cf = exc.K * np.expm1(s - b.log_K) * exc.ctx.Z(b(s))
    rel = np.abs(ex - cf) / np.abs(ex)
    return float(np.max(rel)), s, ex, cf
