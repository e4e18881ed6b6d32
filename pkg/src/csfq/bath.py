"""Ohmic bath: spectral function and Lamb-shift principal-value integrals.

Unit convention: the spectral function takes angular frequencies (rad/ns,
hbar = 1) and returns a time in ns. The system-bath operator is the
persistent current expressed as -dH/dphi_z, either in GHz (cyclic, the
default) or in rad/ns, selected by ``coupling_units``. The two choices
differ by (2 pi)^2 in the effective coupling strength; see
``coupling_scale``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .constants import beta_ns


COUPLING_UNITS = ("GHz", "rad/ns")


class LambShiftNotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class BathParams:
    eta_g2: float = 3e-6
    temperature: float = 10.0  # mK
    omega_c: float = 15.0  # cutoff omega_c / 2 pi in GHz
    lamb_shift: bool = True
    bohr_bin_tol: float = 1e-3  # GHz
    coupling_units: str = "GHz"  # or "rad/ns"

    def __post_init__(self):
        if self.coupling_units not in COUPLING_UNITS:
            raise ValueError(f"coupling_units must be one of {COUPLING_UNITS}")
        if not self.eta_g2 >= 0:
            raise ValueError("eta_g2 must be >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not self.omega_c > 0:
            raise ValueError("omega_c must be positive")
        if not self.bohr_bin_tol >= 0:
            raise ValueError("bohr_bin_tol must be >= 0")

    @property
    def beta(self) -> float:
        """hbar / k_B T in ns/rad."""
        return beta_ns(self.temperature)

    @property
    def cutoff(self) -> float:
        """Angular cutoff in rad/ns."""
        return 2.0 * math.pi * self.omega_c

    @property
    def coupling_scale(self) -> float:
        """Factor turning -dH/dphi_z in GHz/rad into the coupling operator's units."""
        return 1.0 if self.coupling_units == "GHz" else 2.0 * math.pi

    def to_json(self) -> dict:
        return {
            "eta_g2": self.eta_g2,
            "temperature_mK": self.temperature,
            "omega_c_GHz": self.omega_c,
            "lamb_shift": self.lamb_shift,
            "bohr_bin_tol_GHz": self.bohr_bin_tol,
            "coupling_units": self.coupling_units,
        }

    @classmethod
    def from_json(cls, doc: dict) -> BathParams:
        known = {"eta_g2", "temperature_mK", "omega_c_GHz", "lamb_shift", "bohr_bin_tol_GHz", "coupling_units"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown bath field(s): {sorted(unknown)}")
        return cls(
            eta_g2=float(doc.get("eta_g2", 3e-6)),
            temperature=float(doc.get("temperature_mK", 10.0)),
            omega_c=float(doc.get("omega_c_GHz", 15.0)),
            lamb_shift=bool(doc.get("lamb_shift", True)),
            bohr_bin_tol=float(doc.get("bohr_bin_tol_GHz", 1e-3)),
            coupling_units=str(doc.get("coupling_units", "GHz")),
        )


def _bose_factor(beta, omega):
    """omega / (1 - exp(-beta omega)), with the limit 1/beta at omega = 0."""
    omega = np.asarray(omega, dtype=float)
    x = beta * omega
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = omega / -np.expm1(-x)
    return np.where(np.abs(x) < 1e-12, 1.0 / beta + 0.5 * omega, out)


def gamma(bath: BathParams, omega):
    """Ohmic spectral function eta g^2 2 pi omega exp(-|omega|/omega_c) / (1 - exp(-beta omega)).

    ``omega`` is an angular frequency in rad/ns; the result is in ns
    (multiply by a squared coupling matrix element in rad/ns to get a rate).
    """
    omega = np.asarray(omega, dtype=float)
    out = bath.eta_g2 * 2.0 * math.pi * _bose_factor(bath.beta, omega) * np.exp(-np.abs(omega) / bath.cutoff)
    return out[()] if out.ndim == 0 else out


def _excluded_window_integral(bath: BathParams, omega: float, eps: float) -> float:
    """(1/2 pi) [int_{-inf}^{omega-eps} + int_{omega+eps}^{inf}] gamma(x) / (omega - x) dx.

    Written as one integral over the distance u = |x - omega| >= eps.
    """
    eta, beta, wc = bath.eta_g2, bath.beta, bath.cutoff

    def g(w):
        x = beta * w
        bose = 1.0 / beta + 0.5 * w if abs(x) < 1e-12 else (w / -math.expm1(-x) if x > -700 else 0.0)
        return eta * 2.0 * math.pi * bose * math.exp(-abs(w) / wc)

    def f(u):
        return (g(omega - u) - g(omega + u)) / u

    split = abs(omega) + 10.0 * bath.cutoff
    opts = dict(epsabs=0.0, epsrel=1e-9, limit=200)
    a, _ = integrate.quad(f, eps, max(split, 2 * eps), **opts)
    b, _ = integrate.quad(f, max(split, 2 * eps), np.inf, **opts)
    return (a + b) / (2.0 * math.pi)


def lamb_shift_S(bath: BathParams, omega: float, window: float | None = None, rtol: float = 1e-6) -> float:
    """Principal-value integral S(omega) = int dw/2pi gamma(w) P 1/(omega - w).

    The integral is evaluated with a symmetric window of half-width ``window``
    around the pole excluded, for the window, half and a quarter of it, and
    Richardson-extrapolated (the truncation error is odd in the window).
    Raises :class:`LambShiftNotConverged` if the two last extrapolants differ
    by more than ``rtol`` relative.
    """
    if bath.eta_g2 == 0:
        return 0.0
    omega = float(omega)
    if window is None:
        window = 0.05 / bath.beta
    vals = [_excluded_window_integral(bath, omega, window / 2**k) for k in range(3)]
    r1 = [2.0 * vals[k + 1] - vals[k] for k in range(2)]
    r2 = (8.0 * r1[1] - r1[0]) / 7.0
    scale = max(abs(r2), 1e-300)
    if abs(r2 - r1[1]) > rtol * scale + 1e-14 * bath.eta_g2:
        raise LambShiftNotConverged(f"window extrapolation disagrees at omega={omega}: {r1[1]} vs {r2}")
    return r2


@functools.lru_cache(maxsize=32)
def _unit_table(temperature: float, omega_c: float, omega_max: float) -> CubicSpline:
    ref = BathParams(eta_g2=1.0, temperature=temperature, omega_c=omega_c)
    scale = 1.0 / ref.beta
    umax = math.asinh(omega_max / scale)
    grid = scale * np.sinh(np.linspace(-umax, umax, 321))
    vals = np.array([lamb_shift_S(ref, w) for w in grid])
    return CubicSpline(grid, vals)


class LambShiftTable:
    """Spline of S(omega) on [-omega_max, omega_max] (rad/ns), linear in eta_g2."""

    def __init__(self, bath: BathParams, omega_max: float = 2 * math.pi * 150.0):
        self.bath = bath
        self.omega_max = omega_max
        self._spline = None if bath.eta_g2 == 0 else _unit_table(bath.temperature, bath.omega_c, omega_max)

    def __call__(self, omega):
        omega = np.asarray(omega, dtype=float)
        if self._spline is None:
            return np.zeros_like(omega)
        if np.any(np.abs(omega) > self.omega_max):
            out = np.array([lamb_shift_S(self.bath, w) for w in np.ravel(omega)]).reshape(omega.shape)
            return out
        return self.bath.eta_g2 * self._spline(omega)
