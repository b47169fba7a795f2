"""Numerical verification of a photon-sphere-adapted Morawetz estimate on Schwarzschild."""

from .geometry import Geometry, MultiplierParams, point_from_r, point_from_rstar, r_of_rstar, rstar_of_r
from .multipliers import choose_cstar

__all__ = [
    "Geometry",
    "MultiplierParams",
    "choose_cstar",
    "point_from_r",
    "point_from_rstar",
    "r_of_rstar",
    "rstar_of_r",
]

__version__ = "0.1.0"
