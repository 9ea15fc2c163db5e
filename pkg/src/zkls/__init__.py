"""Stability of line solitary waves of the 2D Zakharov-Kuznetsov equation on R x T_L."""

__version__ = "0.1.0"

from .soliton import SolitonProfile, eval_q, eval_phi, moment_integral
from .spectral import (Grid1D, Grid2D, StabilityVerdict, build_lc, build_dx_lc, eigen_extremal,
                       classify_threshold, critical_length)
from .evans import EvansProblem, evans_eval, evans_root

__all__ = [
    "__version__", "SolitonProfile", "eval_q", "eval_phi", "moment_integral",
    "Grid1D", "Grid2D", "StabilityVerdict", "build_lc", "build_dx_lc", "eigen_extremal",
    "classify_threshold", "critical_length", "EvansProblem", "evans_eval", "evans_root",
]
