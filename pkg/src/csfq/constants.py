"""Physical constants and unit conversions.

Energies are carried as ordinary frequencies in GHz (E/h), times in ns and
phases in rad. Every conversion between SI quantities and those units goes
through this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA 2018 exact SI values."""

    electron_charge: float = 1.602176634e-19  # C
    planck_h: float = 6.62607015e-34  # J s
    boltzmann_kB: float = 1.380649e-23  # J/K

    @property
    def flux_quantum(self) -> float:
        """Superconducting flux quantum h/2e in Wb (2.067833848e-15)."""
        return self.planck_h / (2.0 * self.electron_charge)

    @property
    def hbar(self) -> float:
        return self.planck_h / (2.0 * math.pi)


CONSTANTS = PhysicalConstants()


def charging_ghz(capacitance_fF: float) -> float:
    """e^2 / C expressed in GHz."""
    e = CONSTANTS.electron_charge
    return e * e / (capacitance_fF * 1e-15) / CONSTANTS.planck_h / 1e9


def josephson_ghz(current_nA: float) -> float:
    """I * Phi0 / (2 pi) expressed in GHz."""
    energy = current_nA * 1e-9 * CONSTANTS.flux_quantum / (2.0 * math.pi)
    return energy / CONSTANTS.planck_h / 1e9


def ghz_per_rad_to_nA(value: float) -> float:
    """Convert a derivative dE/dphi (GHz per rad) to a current in nA.

    I = dE/dPhi = (2 pi / Phi0) dE/dphi.
    """
    return value * 1e9 * CONSTANTS.planck_h * 2.0 * math.pi / CONSTANTS.flux_quantum * 1e9


def nA_to_ghz_per_rad(current_nA: float) -> float:
    return current_nA / ghz_per_rad_to_nA(1.0)


def beta_ns(temperature_mK: float) -> float:
    """hbar / (k_B T) in ns per rad, i.e. the inverse temperature for angular frequencies."""
    return CONSTANTS.hbar / (CONSTANTS.boltzmann_kB * temperature_mK * 1e-3) * 1e9


def mphi0_to_rad(value: float) -> float:
    """Flux in milli flux quanta to phase in rad."""
    return value * 1e-3 * 2.0 * math.pi


def rad_to_mphi0(value: float) -> float:
    return value / (2.0 * math.pi) * 1e3
