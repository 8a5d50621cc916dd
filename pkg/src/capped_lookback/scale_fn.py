"""q-scale functions W^(q), Z^(q) by partial fractions over the roots of psi = q.

For the supported families ``1/(psi(theta) - q)`` is a proper rational
function with simple real poles ``zeta_i``, so

    W(x) = sum_i exp(zeta_i x) / psi'(zeta_i),      x >= 0,
    Z(x) = 1 + q sum_i (exp(zeta_i x) - 1) / (zeta_i psi'(zeta_i)).

Everything is evaluated in a form scaled by ``exp(-Phi(q) x)`` so that ratios
such as ``Z/(qW)`` and ``W'/W`` stay finite for large arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateRoots, NonpositiveArgument, OutsideDomain, RegimeMismatch
from .levy_model import (
    BoundedVariationCPP,
    JumpDiffusion,
    LevyModel,
    LinearBrownian,
    w0_at_least_inverse_q,
)

ROOT_SEPARATION = 1e-8


def _polynomial(model: LevyModel, q: float) -> np.ndarray:
    """Coefficients (highest first) of the numerator of psi(theta) - q."""
    if isinstance(model, LinearBrownian):
        return np.array([0.5 * model.sigma**2, model.linear_drift, -q])
    if isinstance(model, JumpDiffusion):
        if model.lam == 0.0:
            return np.array([0.5 * model.sigma**2, model.linear_drift, -q])
        b, s2, a, lam = model.linear_drift, model.sigma**2, model.alpha, model.lam
        return np.array([0.5 * s2, b + 0.5 * s2 * a, b * a - q - lam, -q * a])
    if isinstance(model, BoundedVariationCPP):
        d, a, lam = model.d, model.alpha, model.lam
        return np.array([d, d * a - q - lam, -q * a])
    raise TypeError(f"unsupported model {model!r}")


def _real_roots(coeffs: np.ndarray) -> np.ndarray:
    raw = np.roots(coeffs)
    if np.any(np.abs(raw.imag) > 1e-7 * np.maximum(1.0, np.abs(raw.real))):
        raise DegenerateRoots(f"psi = q has non-real roots {raw}")
    roots = np.sort(raw.real)
    dp = np.polyder(coeffs)
    for _ in range(3):
        slope = np.polyval(dp, roots)
        # a vanishing slope means a repeated root, which the caller rejects
        safe = np.where(slope != 0.0, slope, 1.0)
        roots = roots - np.where(slope != 0.0, np.polyval(coeffs, roots) / safe, 0.0)
    return np.sort(roots)


@dataclass(frozen=True)
class ScaleContext:
    model: LevyModel
    q: float
    roots: tuple
    weights: tuple
    phi_q: float
    w_at_zero: float
    k_star: Optional[float] = None
    _z: np.ndarray = field(default=None, repr=False, compare=False)
    _w: np.ndarray = field(default=None, repr=False, compare=False)

    # -- scaled primitives -------------------------------------------------

    def scaled(self, x):
        """Return ``(c, Wc, W'c, Zc)`` for x >= 0.

        ``c`` is 1 for x <= 1 and ``exp(-Phi(q) x)`` beyond, so the products
        never overflow and small arguments keep full relative accuracy.
        """
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return self._scaled(x)

    def _scaled(self, x):
        xe = x[..., None]
        z, w, phi = self._z, self._w, self.phi_q
        near = xe <= 1.0
        shift = np.where(near, 0.0, phi)
        c = np.exp(-shift * xe)
        a = z - shift
        wc = self.w_at_zero * c[..., 0] + np.sum(w * (np.exp(a * xe) - c), axis=-1)
        wc = np.where(near[..., 0], self.w_at_zero + np.sum(w * np.expm1(z * xe), axis=-1), wc)
        wpc = np.sum(w * z * np.exp(a * xe), axis=-1)
        q_sum = self.q * np.sum((w / z) * (np.exp(a * xe) - c), axis=-1)
        zc_far = c[..., 0] + q_sum
        zc_near = 1.0 + self.q * np.sum((w / z) * np.expm1(z * np.minimum(xe, 1.0)), axis=-1)
        zc = np.where(near[..., 0], zc_near, zc_far)
        return c[..., 0], wc, wpc, zc

    def scaled_scalar(self, x: float):
        """Pure-Python ``(Wc, W'c, Zc)`` at a single x >= 0 (same scaling as ``scaled``).

        Used inside ODE right-hand sides where numpy call overhead dominates.
        """
        wc = self.w_at_zero
        wpc = 0.0
        if x <= 1.0:
            zsum = 0.0
            for zi, wi in zip(self.roots, self.weights):
                e = math.expm1(zi * x)
                wc += wi * e
                wpc += wi * zi * (e + 1.0)
                zsum += wi / zi * e
            return wc, wpc, 1.0 + self.q * zsum
        c = math.exp(-self.phi_q * x)
        wc *= c
        zsum = 0.0
        for zi, wi in zip(self.roots, self.weights):
            e = math.exp((zi - self.phi_q) * x)
            wc += wi * (e - c)
            wpc += wi * zi * e
            zsum += wi / zi * (e - c)
        return wc, wpc, c + self.q * zsum

    # -- public evaluations ------------------------------------------------

    def W(self, x):
        xa = np.asarray(x, dtype=float)
        xp = np.maximum(xa, 0.0)
        c, wc, _, _ = self.scaled(xp)
        with np.errstate(over="ignore", divide="ignore"):
            out = np.where(xa < 0.0, 0.0, wc / c)
        return float(out) if out.ndim == 0 else out

    def W_prime(self, x):
        xa = np.asarray(x, dtype=float)
        if np.any(xa <= 0.0):
            raise NonpositiveArgument("W' is only defined on (0, inf)")
        c, _, wpc, _ = self.scaled(xa)
        with np.errstate(over="ignore", divide="ignore"):
            out = wpc / c
        return float(out) if out.ndim == 0 else out

    def Z(self, x):
        xa = np.asarray(x, dtype=float)
        xp = np.maximum(xa, 0.0)
        c, _, _, zc = self.scaled(xp)
        with np.errstate(over="ignore", divide="ignore"):
            out = np.where(xa <= 0.0, 1.0, zc / c)
        return float(out) if out.ndim == 0 else out

    def z_over_qw(self, x):
        """Z(x) / (q W(x)) for x >= 0 (``inf`` at 0 under unbounded variation)."""
        _, wc, _, zc = self.scaled(x)
        with np.errstate(divide="ignore"):
            out = zc / (self.q * wc)
        return float(out) if np.ndim(out) == 0 else out

    def wprime_over_w(self, x):
        _, wc, wpc, _ = self.scaled(x)
        with np.errstate(divide="ignore"):
            out = wpc / wc
        return float(out) if np.ndim(out) == 0 else out

    # -- derived quantities ------------------------------------------------

    @property
    def eta_offset(self) -> Optional[float]:
        """eta - log K, i.e. -log(1 - 1/Phi(q)); None when Phi(q) <= 1."""
        if self.phi_q <= 1.0:
            return None
        return -math.log1p(-1.0 / self.phi_q)

    def eta(self, K: float) -> float:
        off = self.eta_offset
        if off is None:
            raise RegimeMismatch("eta requires Phi(q) > 1, i.e. q > psi(1)")
        return math.log(K) + off

    def to_dict(self, K: Optional[float] = None) -> dict:
        out = {
            "roots": list(self.roots),
            "weights": list(self.weights),
            "phi_q": self.phi_q,
            "k_star": self.k_star,
            "eta": None,
        }
        if self.eta_offset is not None:
            out["eta"] = self.eta_offset if K is None else self.eta(K)
        return out


def _find_k_star(ctx: ScaleContext) -> float:
    q = ctx.q

    def h(x):
        _, wc, _, zc = ctx.scaled(x)
        return float(zc - q * wc)

    lo, hi = 0.0, 1.0
    while h(hi) > 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise RegimeMismatch("Z - qW has no root")
    return brentq(h, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def build_scale_context(model: LevyModel, q: float) -> ScaleContext:
    if not q > 0.0:
        raise RegimeMismatch(f"scale functions are built for q > 0 only, got q={q}")
    roots = _real_roots(_polynomial(model, q))
    for i in range(len(roots) - 1):
        scale = max(abs(roots[i]), abs(roots[i + 1]))
        if roots[i + 1] - roots[i] <= ROOT_SEPARATION * scale:
            raise DegenerateRoots(f"roots {roots[i]} and {roots[i + 1]} coincide")
    if roots[-1] <= 0.0 or (len(roots) > 1 and roots[-2] >= 0.0):
        raise DegenerateRoots(f"expected exactly one positive root, got {roots}")
    weights = 1.0 / np.asarray(model.psi_prime(roots), dtype=float)
    ctx = ScaleContext(
        model=model,
        q=float(q),
        roots=tuple(float(r) for r in roots),
        weights=tuple(float(w) for w in weights),
        phi_q=float(roots[-1]),
        w_at_zero=model.w_at_zero(),
        _z=roots.copy(),
        _w=weights.copy(),
    )
    if q > model.psi(1.0) and not w0_at_least_inverse_q(model, q):
        object.__setattr__(ctx, "k_star", _find_k_star(ctx))
    return ctx


# Functional aliases mirroring the method names.


def W(ctx: ScaleContext, x):
    return ctx.W(x)


def W_prime(ctx: ScaleContext, x):
    return ctx.W_prime(x)


def Z(ctx: ScaleContext, x):
    return ctx.Z(x)


def k_star(ctx: ScaleContext) -> float:
    if ctx.k_star is None:
        raise RegimeMismatch("k* exists only when q > psi(1) and W(0+) < 1/q")
    return ctx.k_star


def isocline_f(ctx: ScaleContext, K: float, H):
    """s-coordinate of the 0-isocline at height H: log(K / (1 - Z/(qW)))."""
    H = np.asarray(H, dtype=float)
    if np.any(H <= 0.0):
        raise OutsideDomain("isocline is defined for H > 0")
    r = np.asarray(ctx.z_over_qw(H))
    if np.any(r >= 1.0):
        raise OutsideDomain("Z(H) >= qW(H): no isocline point at this height")
    out = math.log(K) - np.log1p(-r)
    return float(out) if out.ndim == 0 else out


def isocline_inverse(ctx: ScaleContext, K: float, s: float) -> float:
    """Height H with isocline_f(H) = s; requires s > eta (and s < beta)."""
    target = 1.0 - K * math.exp(-s)  # Z/(qW) value on the isocline
    if target <= 1.0 / ctx.phi_q:
        raise OutsideDomain(f"s={s} is not above the isocline asymptote eta")
    lo = ctx.k_star if ctx.k_star is not None else 0.0
    g = lambda H: ctx.z_over_qw(H) - target
    hi = max(2.0 * lo, 1.0)
    while g(hi) > 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise OutsideDomain("isocline height not bracketed")
    if lo == 0.0:
        lo = 1e-300
        if g(lo) <= 0.0:
            raise OutsideDomain(f"s={s} is beyond the isocline's range")
    return brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
