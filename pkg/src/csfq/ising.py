"""Two-level (Ising) description of the circuit in the persistent-current basis.

The two lowest eigenstates are rotated into the basis that diagonalizes the
persistent current restricted to them. In that basis the effective
Hamiltonian is ``A sigma_x + B sigma_z + alpha_I``, with the phase of the
second basis vector chosen so that the sigma_y part vanishes and A >= 0.
State |0> carries the negative current and |1> the positive one, which
makes B > 0 exactly when phi_z > phi_d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import (
    BasisMismatch,
    ChargeBasis,
    FluxPoint,
    OperatorMatrix,
    Spectrum,
    _applied,
    effective_x_factor,
    make_basis,
    persistent_current_op,
    phi_d,
    spectrum_at,
)
from .constants import josephson_ghz

DEGENERACY_TOL_NA = 1e-6
WELL_SUPPORT_MIN = 0.01
_GRID = 512


class DegenerateProjection(ValueError):
    """The projected current has (nearly) equal eigenvalues: no computational basis."""


class IsingMapInvalid(ValueError):
    """The two lowest levels do not both reach into each well."""


@dataclass(frozen=True)
class ComputationalBasis:
    vectors: np.ndarray  # columns |0>, |1> in the {|g>, |e>} basis
    currents: np.ndarray  # nA, ascending


@dataclass(frozen=True)
class IsingCoefficients:
    A: float  # GHz
    B: float  # GHz
    alpha_I: float  # GHz
    flux: FluxPoint
    valid: bool = True
    basis: ComputationalBasis | None = None
    gap: float = float("nan")  # E_e - E_g, GHz


def project_ip_low(spectrum: Spectrum, ip: OperatorMatrix) -> np.ndarray:
    """Current operator in the span of the two lowest levels (nA)."""
    if len(spectrum) < 2:
        raise ValueError("need at least two levels")
    if spectrum.basis is not None and ip.basis is not None and spectrum.basis != ip.basis:
        raise BasisMismatch("spectrum and current operator use different bases")
    if spectrum.vectors.shape[0] != ip.matrix.shape[0]:
        raise BasisMismatch("spectrum and current operator dimensions differ")
    v = spectrum.vectors[:, :2]
    m = v.conj().T @ ip.matrix @ v
    return 0.5 * (m + m.conj().T)


def computational_basis(ip_low: np.ndarray) -> ComputationalBasis:
    w, u = np.linalg.eigh(ip_low)
    if abs(w[1] - w[0]) < DEGENERACY_TOL_NA:
        raise DegenerateProjection(f"projected current eigenvalues {w} coincide")
    return ComputationalBasis(u, w)


def potential_1d(params, flux, phi):
    """Slow-mode potential in GHz on the phase grid ``phi`` (offsets applied)."""
    px, pz = _applied(params, flux)
    ej = josephson_ghz(params.I_z)
    x = float(effective_x_factor(params, px))
    pd = float(phi_d(params, px))
    return -2.0 * ej * np.cos(phi - 0.5 * pz) - 2.0 * params.alpha * ej * x * np.cos(2.0 * phi - pd)


def _well_labels(u: np.ndarray):
    """Label grid points by the arc between consecutive potential maxima (periodic)."""
    left, right = np.roll(u, 1), np.roll(u, -1)
    maxima = np.flatnonzero((u > left) & (u >= right))
    if maxima.size < 2:
        return None
    labels = np.searchsorted(maxima, np.arange(u.size), side="right") % maxima.size
    return labels


def phase_density(vectors: np.ndarray, basis: ChargeBasis, phi: np.ndarray) -> np.ndarray:
    """Probability density over the slow phase for each column of ``vectors``.

    For the two-mode model the fast phase is integrated over its fundamental
    domain [-pi/2, pi/2) (the charge-parity constraint identifies points
    shifted by pi in both phases).
    """
    if basis.model == "1d":
        n = basis.states
        amp = np.exp(1j * np.outer(phi, n)) @ vectors
        dens = np.abs(amp) ** 2
    else:
        states = basis.states
        n0_vals = np.unique(states[:, 0])
        fast = np.linspace(-0.5 * np.pi, 0.5 * np.pi, 64, endpoint=False)
        e1 = np.exp(1j * np.outer(phi, states[:, 1]))  # (M, dim)
        dens = np.zeros((phi.size, vectors.shape[1]))
        e0 = np.exp(1j * np.outer(fast, n0_vals))  # (F, N0)
        for col in range(vectors.shape[1]):
            partial = np.zeros((n0_vals.size, phi.size), dtype=complex)
            for i, n0 in enumerate(n0_vals):
                sel = states[:, 0] == n0
                partial[i] = e1[:, sel] @ vectors[sel, col]
            dens[:, col] = np.sum(np.abs(e0 @ partial) ** 2, axis=0)
    return dens / dens.sum(axis=0, keepdims=True)


def well_weights(params, flux, spectrum: Spectrum, levels: int = 2):
    """Weight of each of the lowest ``levels`` states in each well, or None for a single well."""
    phi = np.linspace(0.0, 2.0 * np.pi, _GRID, endpoint=False)
    labels = _well_labels(potential_1d(params, flux, phi))
    if labels is None:
        return None
    dens = phase_density(spectrum.vectors[:, :levels], spectrum.basis, phi)
    nwell = labels.max() + 1
    return np.array([[dens[labels == k, j].sum() for k in range(nwell)] for j in range(levels)])


def two_level_valid(params, flux, spectrum: Spectrum, threshold: float = WELL_SUPPORT_MIN) -> bool:
    w = well_weights(params, flux, spectrum)
    return True if w is None else bool(np.all(w >= threshold))


def ising_from_spectrum(spectrum: Spectrum, ip: OperatorMatrix, flux=(np.nan, np.nan), valid=True):
    ip_low = project_ip_low(spectrum, ip)
    cb = computational_basis(ip_low)
    u = cb.vectors
    h = u.conj().T @ np.diag(spectrum.energies[:2]) @ u
    a = float(abs(h[0, 1]))  # the phase of |1> is chosen to make this element real and positive
    if abs(h[0, 1]) > 0:
        phase = h[0, 1] / abs(h[0, 1])
        u = u * np.array([1.0, phase])[None, :]
    b = float(np.real(h[0, 0] - h[1, 1]) / 2.0)
    alpha_i = float(np.real(h[0, 0] + h[1, 1]) / 2.0)
    gap = float(spectrum.energies[1] - spectrum.energies[0])
    return IsingCoefficients(a, b, alpha_i, FluxPoint(*map(float, flux)), valid, ComputationalBasis(u, cb.currents), gap)


def ising_coefficients(params, flux, model: str = "1d", truncation=None, on_invalid: str = "raise",
                       threshold: float = WELL_SUPPORT_MIN) -> IsingCoefficients:
    """A, B and the identity offset at one flux point.

    ``on_invalid="flag"`` returns coefficients with ``valid=False`` instead of
    raising :class:`IsingMapInvalid` when a level lacks support in a well.
    """
    if on_invalid not in ("raise", "flag"):
        raise ValueError("on_invalid must be 'raise' or 'flag'")
    flux = FluxPoint(*map(float, flux))
    basis = make_basis(model, truncation)
    spec = spectrum_at(params, flux, model, 2, basis.truncation)
    ip = persistent_current_op(params, flux, model, basis.truncation)
    valid = two_level_valid(params, flux, spec, threshold)
    if not valid and on_invalid == "raise":
        raise IsingMapInvalid(f"two-level mapping invalid at {flux}")
    return ising_from_spectrum(spec, ip, flux, valid)


@dataclass(frozen=True)
class ScheduleRow:
    s: float
    A: float
    B: float
    valid: bool


def schedule_along_path(params, path, model: str = "1d", truncation=None, stride: int = 1) -> list[ScheduleRow]:
    """(s, A, B) along the anneal part of a path; invalid points are flagged, not fatal."""
    rows = []
    for t, px, pz in list(path.rows())[::stride]:
        if t > path.anneal_end + 1e-12:
            break
        c = ising_coefficients(params, (px, pz), model, truncation, on_invalid="flag")
        rows.append(ScheduleRow(float(t / path.anneal_end), c.A, c.B, c.valid))
    return rows
