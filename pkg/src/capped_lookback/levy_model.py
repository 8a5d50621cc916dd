"""Spectrally negative Lévy models with rational Laplace exponent.

Three families are supported:

``LinearBrownian(mu, sigma)``
    X_t = (mu - sigma^2/2) t + sigma B_t.
``JumpDiffusion(mu, sigma, lam, alpha)``
    The same Gaussian part minus a compound Poisson process with intensity
    ``lam`` and Exp(``alpha``) jump sizes.  With ``lam = 0`` it is the
    ``LinearBrownian`` model with the same ``(mu, sigma)``.
``BoundedVariationCPP(d, lam, alpha)``
    X_t = d t minus the same compound Poisson process.

All three have psi(theta) = polynomial / (alpha + theta), so the q-scale
functions reduce to finite exponential sums (see :mod:`scale_fn`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidCap, InvalidModel, InvalidParameter

# |Phi(0) - 1| below this counts as Phi(0) = 1 in the q = 0 classification.
PHI_ONE_TOL = 1e-12
# psi'(0+) within this many ulps of its terms is treated as exactly zero
DRIFT_ZERO_ULPS = 8


def _snap_zero(value: float, *terms: float) -> float:
    scale = max(abs(t) for t in terms)
    return 0.0 if abs(value) <= DRIFT_ZERO_ULPS * np.finfo(float).eps * scale else value


class Variation(str, Enum):
    BOUNDED = "BoundedVariation"
    UNBOUNDED = "UnboundedVariation"


@dataclass(frozen=True)
class ModelTraits:
    variation: Variation
    psi_prime_at_zero: float
    drift_d: Optional[float]
    w_at_zero: float


class _Base:
    family: str = ""

    def psi(self, theta):
        raise NotImplementedError

    def psi_prime(self, theta):
        raise NotImplementedError

    def psi_prime_at_zero(self) -> float:
        raise NotImplementedError

    @property
    def unbounded_variation(self) -> bool:
        return self.sigma_gauss > 0.0

    @property
    def sigma_gauss(self) -> float:
        return 0.0

    @property
    def jump_rate(self) -> float:
        return 0.0

    @property
    def jump_alpha(self) -> float:
        return math.inf

    @property
    def linear_drift(self) -> float:
        """Coefficient of t in X_t once the jump part is removed."""
        raise NotImplementedError

    def w_at_zero(self) -> float:
        """W^(q)(0+): 1/d for bounded variation, 0 otherwise (any q)."""
        return 0.0

    def w_prime_at_zero(self, q: float) -> float:
        raise NotImplementedError

    def stationary_point(self) -> float:
        """Largest theta with psi'(theta) = 0, clipped below at 0."""
        raise NotImplementedError

    def traits(self) -> ModelTraits:
        bv = not self.unbounded_variation
        return ModelTraits(
            variation=Variation.BOUNDED if bv else Variation.UNBOUNDED,
            psi_prime_at_zero=self.psi_prime_at_zero(),
            drift_d=getattr(self, "d", None) if bv else None,
            w_at_zero=self.w_at_zero(),
        )

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearBrownian(_Base):
    mu: float
    sigma: float

    family = "linear_brownian"

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise InvalidModel(f"sigma must be positive, got {self.sigma}")
        if not math.isfinite(self.mu):
            raise InvalidModel(f"mu must be finite, got {self.mu}")

    @property
    def sigma_gauss(self) -> float:
        return self.sigma

    @property
    def linear_drift(self) -> float:
        return self.mu - 0.5 * self.sigma**2

    def psi(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = self.linear_drift * theta + 0.5 * self.sigma**2 * theta**2
        return float(out) if out.ndim == 0 else out

    def psi_prime(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = self.linear_drift + self.sigma**2 * theta
        return float(out) if out.ndim == 0 else out

    def psi_prime_at_zero(self) -> float:
        return _snap_zero(self.linear_drift, self.mu, 0.5 * self.sigma**2)

    def w_prime_at_zero(self, q: float) -> float:
        return 2.0 / self.sigma**2

    def stationary_point(self) -> float:
        return max(-self.linear_drift / self.sigma**2, 0.0)

    def to_dict(self) -> dict:
        return {"family": self.family, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class JumpDiffusion(_Base):
    mu: float
    sigma: float
    lam: float
    alpha: float

    family = "jump_diffusion"

    def __post_init__(self):
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise InvalidModel(f"sigma must be positive, got {self.sigma}")
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise InvalidModel(f"lambda must be >= 0, got {self.lam}")
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise InvalidModel(f"alpha must be positive, got {self.alpha}")
        if not math.isfinite(self.mu):
            raise InvalidModel(f"mu must be finite, got {self.mu}")

    @property
    def sigma_gauss(self) -> float:
        return self.sigma

    @property
    def jump_rate(self) -> float:
        return self.lam

    @property
    def jump_alpha(self) -> float:
        return self.alpha

    @property
    def linear_drift(self) -> float:
        return self.mu - 0.5 * self.sigma**2

    def psi(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = (
            self.linear_drift * theta
            + 0.5 * self.sigma**2 * theta**2
            - self.lam * theta / (self.alpha + theta)
        )
        return float(out) if out.ndim == 0 else out

    def psi_prime(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = (
            self.linear_drift
            + self.sigma**2 * theta
            - self.lam * self.alpha / (self.alpha + theta) ** 2
        )
        return float(out) if out.ndim == 0 else out

    def psi_prime_at_zero(self) -> float:
        return _snap_zero(self.linear_drift - self.lam / self.alpha, self.mu, 0.5 * self.sigma**2, self.lam / self.alpha)

    def w_prime_at_zero(self, q: float) -> float:
        return 2.0 / self.sigma**2

    def stationary_point(self) -> float:
        # psi' is strictly increasing on (-alpha, inf)
        if self.psi_prime(0.0) >= 0.0:
            return 0.0
        hi = 1.0
        while self.psi_prime(hi) <= 0.0:
            hi *= 2.0
        return brentq(self.psi_prime, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "mu": self.mu,
            "sigma": self.sigma,
            "lambda": self.lam,
            "alpha": self.alpha,
        }


@dataclass(frozen=True)
class BoundedVariationCPP(_Base):
    d: float
    lam: float
    alpha: float

    family = "bv_cpp"

    def __post_init__(self):
        if not (self.d > 0.0 and math.isfinite(self.d)):
            raise InvalidModel(f"d must be positive, got {self.d}")
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise InvalidModel(f"lambda must be positive, got {self.lam}")
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise InvalidModel(f"alpha must be positive, got {self.alpha}")

    @property
    def jump_rate(self) -> float:
        return self.lam

    @property
    def jump_alpha(self) -> float:
        return self.alpha

    @property
    def linear_drift(self) -> float:
        return self.d

    def psi(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = self.d * theta - self.lam * theta / (self.alpha + theta)
        return float(out) if out.ndim == 0 else out

    def psi_prime(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = self.d - self.lam * self.alpha / (self.alpha + theta) ** 2
        return float(out) if out.ndim == 0 else out

    def psi_prime_at_zero(self) -> float:
        return _snap_zero(self.d - self.lam / self.alpha, self.d, self.lam / self.alpha)

    def w_at_zero(self) -> float:
        return 1.0 / self.d

    def w_prime_at_zero(self, q: float) -> float:
        return (q + self.lam) / self.d**2

    def stationary_point(self) -> float:
        return max(math.sqrt(self.lam * self.alpha / self.d) - self.alpha, 0.0)

    def to_dict(self) -> dict:
        return {"family": self.family, "d": self.d, "lambda": self.lam, "alpha": self.alpha}


LevyModel = Union[LinearBrownian, JumpDiffusion, BoundedVariationCPP]


def model_from_dict(data: dict) -> LevyModel:
    """Build a model from its JSON object form.

    >>> model_from_dict({"family": "linear_brownian", "mu": 1.0, "sigma": 2.0})
    LinearBrownian(mu=1.0, sigma=2.0)
    """
    try:
        family = data["family"]
        if family == "linear_brownian":
            return LinearBrownian(float(data["mu"]), float(data["sigma"]))
        if family == "jump_diffusion":
            return JumpDiffusion(
                float(data["mu"]), float(data["sigma"]), float(data["lambda"]), float(data["alpha"])
            )
        if family == "bv_cpp":
            return BoundedVariationCPP(float(data["d"]), float(data["lambda"]), float(data["alpha"]))
    except KeyError as exc:
        raise InvalidModel(f"missing model field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidModel):
            raise
        raise InvalidModel(str(exc)) from None
    raise InvalidModel(f"unknown family {data.get('family')!r}")


def laplace_exponent(model: LevyModel, theta):
    return model.psi(theta)


def psi_prime_at_zero(model: LevyModel) -> float:
    return model.psi_prime_at_zero()


def phi_inverse(model: LevyModel, q: float) -> float:
    """Right inverse Phi(q) = sup{lam >= 0 : psi(lam) = q}."""
    if q < 0.0:
        raise InvalidParameter(f"q must be >= 0, got {q}")
    if q == 0.0 and model.psi_prime_at_zero() >= 0.0:
        return 0.0
    lo = model.stationary_point()
    psi_lo = model.psi(lo)
    if psi_lo >= q:
        # only possible for q = 0 with psi increasing from the origin
        return lo
    hi = max(1.0, 2.0 * lo)
    while model.psi(hi) <= q:
        hi *= 2.0
    return brentq(lambda t: model.psi(t) - q, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


# --------------------------------------------------------------------------
# Parameter regimes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Regime:
    """Classification of ``(model, q, K, eps)``.

    ``kind`` is one of MainCapped, MainUncapped, ZeroQCapped,
    ZeroQUncapped, SubcriticalUncapped.  For the main kinds ``sub`` is the
    boundary case letter (A, B, C capped; D, E uncapped).
    """

    kind: str
    sub: Optional[str] = None

    @property
    def is_main(self) -> bool:
        return self.kind in ("MainCapped", "MainUncapped")

    @property
    def infinite(self) -> bool:
        return self.kind == "SubcriticalUncapped" or (
            self.kind == "ZeroQUncapped" and self.sub == "infinite_value"
        )

    @property
    def forced_stop_at_beta(self) -> bool:
        return self.sub in ("B", "E")

    def to_dict(self) -> dict:
        return {"regime": self.kind, "sub": self.sub}

    def __str__(self) -> str:
        return self.kind if self.sub is None else f"{self.kind}{{{self.sub}}}"


def _check_common(q: float, K: float, eps: float) -> None:
    if not (K > 0.0 and math.isfinite(K)):
        raise InvalidParameter(f"K must be positive, got {K}")
    if not (q >= 0.0 and math.isfinite(q)):
        raise InvalidParameter(f"q must be finite and >= 0, got {q}")
    if math.isnan(eps):
        raise InvalidCap("eps is NaN")
    if math.isfinite(eps) and eps <= math.log(K):
        raise InvalidCap(f"cap eps={eps} must exceed log K={math.log(K)}")
    if eps == -math.inf:
        raise InvalidCap("eps = -inf")


def w0_at_least_inverse_q(model: LevyModel, q: float) -> bool:
    """W^(q)(0+) >= 1/q, decided from the drift d rather than a limit."""
    return (not model.unbounded_variation) and q > 0.0 and model.d <= q


def classify_regime(model: LevyModel, q: float, K: float, eps: float) -> Regime:
    _check_common(q, K, eps)
    capped = math.isfinite(eps)
    if q == 0.0:
        if model.psi_prime_at_zero() < 0.0:
            phi0 = phi_inverse(model, 0.0)
            if capped:
                if abs(phi0 - 1.0) <= PHI_ONE_TOL:
                    return Regime("ZeroQCapped", "drift_neg_phi_eq_1")
                return Regime("ZeroQCapped", "drift_neg_phi_ne_1")
            return Regime("ZeroQUncapped", "finite_value" if phi0 > 1.0 else "infinite_value")
        if capped:
            return Regime("ZeroQCapped", "drift_nonneg")
        return Regime("ZeroQUncapped", "infinite_value")

    psi1 = model.psi(1.0)
    if capped:
        if w0_at_least_inverse_q(model, q):
            return Regime("MainCapped", "B")
        return Regime("MainCapped", "A" if q > psi1 else "C")
    if q <= psi1:
        return Regime("SubcriticalUncapped")
    return Regime("MainUncapped", "E" if w0_at_least_inverse_q(model, q) else "D")


def beta_level(model: LevyModel, q: float, K: float) -> float:
    """Forced stopping level log(K / (1 - d/q)); +inf unless d <= q."""
    if not w0_at_least_inverse_q(model, q):
        return math.inf
    if model.d == q:
        return math.inf
    return math.log(K) - math.log1p(-model.d / q)
