"""Capped lookback optimal stopping for spectrally negative Levy processes."""

from .boundary_ode import Boundary, ODEConfig, classify_solution, shoot_separatrix, solve_capped, solve_uncapped
from .errors import LookbackError
from .levy_model import (
    BoundedVariationCPP,
    JumpDiffusion,
    LinearBrownian,
    Regime,
    classify_regime,
    model_from_dict,
)
from .scale_fn import ScaleContext, build_scale_context
from .value_fn import ValueFunction, build_value_function, region, value

__all__ = [
    "Boundary",
    "BoundedVariationCPP",
    "JumpDiffusion",
    "LinearBrownian",
    "LookbackError",
    "ODEConfig",
    "Regime",
    "ScaleContext",
    "ValueFunction",
    "build_scale_context",
    "build_value_function",
    "classify_regime",
    "classify_solution",
    "model_from_dict",
    "region",
    "shoot_separatrix",
    "solve_capped",
    "solve_uncapped",
    "value",
]
