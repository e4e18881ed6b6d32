"""Multilevel simulation and calibration of a capacitively shunted flux qubit."""

from importlib.metadata import PackageNotFoundError, version

from .bath import BathParams
from .circuit import DEVICE_1D, DEVICE_2D, CircuitParams, FluxPoint
from .dynamics import SolverConfig, evolve_ame, evolve_schrodinger
from .paths import PathSpec, make_path
from .readout import ReadoutModel

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "DEVICE_1D", "DEVICE_2D", "BathParams", "CircuitParams", "FluxPoint", "PathSpec", "ReadoutModel",
    "SolverConfig", "evolve_ame", "evolve_schrodinger", "make_path", "__version__",
]
