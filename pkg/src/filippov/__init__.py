"""Analysis toolkit for planar two-zone piecewise-smooth (Filippov) vector
fields: switching-set classification, sliding dynamics, canard-cycle
detection, smooth regularization with limit-cycle convergence checks,
Poincare index with discontinuity jumps, and blow-up to slow-fast form."""

from .expr import Expr, parse
from .system import (
    NonSmoothSystem, SigmaClass, Region, Stability,
    AxisChart, TracedChart, sigma_chart,
    classify_point, sliding_field, filippov_combination,
    direction_function, direction_samples, pseudo_equilibria,
)

__all__ = [
    "Expr", "parse",
    "NonSmoothSystem", "SigmaClass", "Region", "Stability",
    "AxisChart", "TracedChart", "sigma_chart",
    "classify_point", "sliding_field", "filippov_combination",
    "direction_function", "direction_samples", "pseudo_equilibria",
]

__version__ = "0.1.0"
