"""Effective temperature associated with an s-curve width."""

from __future__ import annotations

from ..constants import CONSTANTS


def effective_temperature(width_uphi0: float, ip_uA: float) -> float:
    """T_eff = w I_p / k_B in mK, with the width in micro-flux-quanta and I_p in uA."""
    if not (width_uphi0 > 0 and ip_uA > 0):
        raise ValueError("width and persistent current must be positive")
    flux = width_uphi0 * 1e-6 * CONSTANTS.flux_quantum  # Wb
    return flux * ip_uA * 1e-6 / CONSTANTS.boltzmann_kB * 1e3
