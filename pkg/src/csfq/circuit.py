"""Four-junction capacitively shunted flux qubit in a truncated charge basis.

Two models are provided:

* ``"1d"``: single slow mode with conjugate charge ``n``,
  ``H = e^2/(2 C_sh) n^2 - 2 E_J cos(phi - phi_z/2)
  - 2 alpha E_J X(phi_x) cos(2 phi - phi_d)``.
* ``"2d"``: both circuit modes, written in the coordinates that diagonalize
  the kinetic term (fast mode ``n0' = n1``, slow mode ``n1' = 2 n0 + n1``).

All matrices are in GHz (value = energy / h).
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .constants import charging_ghz, josephson_ghz

DEFAULT_TRUNCATION_1D = 30
DEFAULT_TRUNCATION_2D = (10, 20)
HERMITIAN_RTOL = 1e-12


class InvalidParams(ValueError):
    pass


class BasisMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CircuitParams:
    """Circuit parameters. Currents in nA, capacitances in fF, offsets in rad."""

    I_z: float
    C_sh: float
    alpha: float
    d: float = 0.0
    C_z: float | None = None
    phi_x_offset: float = 0.0
    phi_z_offset: float = 0.0

    def __post_init__(self):
        if not self.I_z > 0:
            raise InvalidParams(f"I_z must be positive, got {self.I_z}")
        if not self.C_sh > 0:
            raise InvalidParams(f"C_sh must be positive, got {self.C_sh}")
        if self.C_z is not None and not self.C_z > 0:
            raise InvalidParams(f"C_z must be positive, got {self.C_z}")
        if not 0 < self.alpha < 1:
            raise InvalidParams(f"alpha must lie in (0, 1), got {self.alpha}")
        if not abs(self.d) < 1:
            raise InvalidParams(f"|d| must be < 1, got {self.d}")
        for name in ("phi_x_offset", "phi_z_offset"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParams(f"{name} must be finite")

    def replace(self, **changes) -> CircuitParams:
        return replace(self, **changes)

    def to_json(self) -> dict:
        out = {
            "I_z_nA": self.I_z,
            "C_sh_fF": self.C_sh,
            "C_z_fF": self.C_z,
            "alpha": self.alpha,
            "d": self.d,
            "phi_x_offset_rad": self.phi_x_offset,
            "phi_z_offset_rad": self.phi_z_offset,
        }
        if self.C_z is None:
            del out["C_z_fF"]
        return out

    @classmethod
    def from_json(cls, doc: dict) -> CircuitParams:
        known = {"I_z_nA", "C_sh_fF", "C_z_fF", "alpha", "d", "phi_x_offset_rad", "phi_z_offset_rad"}
        unknown = set(doc) - known
        if unknown:
            raise InvalidParams(f"unknown circuit parameter field(s): {sorted(unknown)}")
        missing = {"I_z_nA", "C_sh_fF", "alpha"} - set(doc)
        if missing:
            raise InvalidParams(f"missing circuit parameter field(s): {sorted(missing)}")
        return cls(
            I_z=float(doc["I_z_nA"]),
            C_sh=float(doc["C_sh_fF"]),
            C_z=None if doc.get("C_z_fF") is None else float(doc["C_z_fF"]),
            alpha=float(doc["alpha"]),
            d=float(doc.get("d", 0.0)),
            phi_x_offset=float(doc.get("phi_x_offset_rad", 0.0)),
            phi_z_offset=float(doc.get("phi_z_offset_rad", 0.0)),
        )


# Spectroscopy fit values of the measured device, asymmetry fixed at 0.102.
DEVICE_1D = CircuitParams(I_z=228.0, C_sh=70.0, alpha=0.452, d=0.102)
DEVICE_2D = CircuitParams(I_z=242.0, C_sh=62.0, C_z=4.85, alpha=0.423, d=0.102)


class FluxPoint(NamedTuple):
    phi_x: float
    phi_z: float


@dataclass(frozen=True)
class ChargeBasis:
    """Truncated charge basis.

    For ``"1d"`` the states are n in [-N, N]. For ``"2d"`` they are pairs
    (n0', n1') with |n0'| <= N0, |n1'| <= N1 and n0' = n1' (mod 2); the other
    parity sector corresponds to half-integer node charge and is not physical.
    """

    model: str
    truncation: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.states)

    @functools.cached_property
    def states(self) -> np.ndarray:
        if self.model == "1d":
            (n,) = self.truncation
            return np.arange(-n, n + 1)
        n0, n1 = self.truncation
        pairs = [(a, b) for a in range(-n0, n0 + 1) for b in range(-n1, n1 + 1) if (a - b) % 2 == 0]
        return np.array(pairs, dtype=int)


def make_basis(model: str, truncation=None) -> ChargeBasis:
    model = model.lower()
    if model == "1d":
        n = DEFAULT_TRUNCATION_1D if truncation is None else int(np.atleast_1d(truncation)[0])
        if n < 5:
            raise InvalidParams(f"1d truncation must be >= 5, got {n}")
        return _basis("1d", (n,))
    if model == "2d":
        n0, n1 = DEFAULT_TRUNCATION_2D if truncation is None else (int(truncation[0]), int(truncation[1]))
        if n0 < 4 or n1 < 4:
            raise InvalidParams(f"2d truncations must be >= 4, got {(n0, n1)}")
        return _basis("2d", (n0, n1))
    raise InvalidParams(f"unknown model {model!r}; expected '1d' or '2d'")


@functools.lru_cache(maxsize=None)
def _basis(model, truncation):
    return ChargeBasis(model, truncation)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    matrix: np.ndarray
    basis: ChargeBasis
    unit: str = "GHz"

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def is_hermitian(self, rtol: float = HERMITIAN_RTOL) -> bool:
        scale = max(np.max(np.abs(self.matrix)), 1e-300)
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T)) <= rtol * scale)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Lowest eigenpairs, ascending. Each eigenvector's largest component is real positive."""

    energies: np.ndarray
    vectors: np.ndarray
    basis: ChargeBasis | None = None
    phase_convention: str = field(default="max-component-real-positive")

    def __len__(self):
        return len(self.energies)


def phi_d(params: CircuitParams, phi_x):
    """Asymmetry phase shift, principal branch of arctan(d tan(phi_x/2)).

    At phi_x = (2k+1) pi exactly the limit sign(d) pi/2 is returned.
    """
    phi_x = np.asarray(phi_x, dtype=float)
    half = phi_x / 2.0
    c = np.cos(half)
    s = np.sin(half)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.arctan(params.d * s / c)
    out = np.where(c == 0.0, np.sign(params.d) * math.pi / 2.0, out)
    return out[()] if out.ndim == 0 else out


def effective_x_factor(params: CircuitParams, phi_x):
    """cos(phi_x/2) sqrt(1 + tan^2 phi_d) in the singularity-free form.

    Equals sign(cos(phi_x/2)) sqrt(cos^2(phi_x/2) + d^2 sin^2(phi_x/2)); where
    cos(phi_x/2) vanishes the sign is chosen so that the product with
    cos(2 phi - phi_d) reproduces the exact x-loop potential.
    """
    phi_x = np.asarray(phi_x, dtype=float)
    half = phi_x / 2.0
    c = np.cos(half)
    s = np.sin(half)
    mag = np.sqrt(c * c + params.d**2 * s * s)
    # exact potential is mag * cos(2 phi - theta), theta = atan2(d s, c)
    theta = np.arctan2(params.d * s, c)
    at_pole = mag * np.cos(theta - phi_d(params, phi_x))
    out = np.where(c == 0.0, at_pole, np.sign(c) * mag)
    return out[()] if out.ndim == 0 else out


def _applied(params: CircuitParams, flux) -> tuple[float, float]:
    phi_x, phi_z = flux
    return phi_x + params.phi_x_offset, phi_z + params.phi_z_offset


@functools.lru_cache(maxsize=None)
def _structure_1d(n: int):
    k = np.arange(-n, n + 1, dtype=float)
    dim = 2 * n + 1
    up1 = np.eye(dim, k=-1)  # <m+1|..|m>: e^{i phi}
    up2 = np.eye(dim, k=-2)  # e^{2 i phi}
    return k * k, up1, up2


@functools.lru_cache(maxsize=None)
def _structure_2d(n0: int, n1: int):
    basis = _basis("2d", (n0, n1))
    states = basis.states
    index = {tuple(s): i for i, s in enumerate(states)}
    dim = len(states)

    def shift(d0, d1):
        m = np.zeros((dim, dim))
        for j, (a, b) in enumerate(states):
            i = index.get((a + d0, b + d1))
            if i is not None:
                m[i, j] = 1.0
        return m

    return (
        states[:, 0].astype(float) ** 2,
        states[:, 1].astype(float) ** 2,
        {(s0, s1): shift(s0, s1) for s0 in (1, -1) for s1 in (1, -1)},
        shift(0, 2),
    )


def build_h_1d(params: CircuitParams, flux, truncation: int = DEFAULT_TRUNCATION_1D) -> OperatorMatrix:
    basis = make_basis("1d", truncation)
    (n,) = basis.truncation
    phi_x, phi_z = _applied(params, flux)
    n2, up1, up2 = _structure_1d(n)
    ec = charging_ghz(2.0 * params.C_sh)
    ej = josephson_ghz(params.I_z)
    x_amp = 2.0 * params.alpha * ej * float(effective_x_factor(params, phi_x))
    pd = float(phi_d(params, phi_x))
    # cos(phi - a) -> (e^{-ia} e^{i phi} + h.c.) / 2
    t1 = -2.0 * ej * 0.5 * np.exp(-0.5j * phi_z)
    t2 = -x_amp * 0.5 * np.exp(-1j * pd)
    low = t1 * up1 + t2 * up2
    h = np.diag(ec * n2).astype(complex) + low + low.conj().T
    return OperatorMatrix(h, basis, "GHz")


def build_h_2d(params: CircuitParams, flux, truncation=DEFAULT_TRUNCATION_2D) -> OperatorMatrix:
    if params.C_z is None:
        raise InvalidParams("the 2d model requires C_z")
    basis = make_basis("2d", truncation)
    phi_x, phi_z = _applied(params, flux)
    n0sq, n1sq, corner, up2 = _structure_2d(*basis.truncation)
    ec_fast = charging_ghz(params.C_z)
    ec_slow = charging_ghz(2.0 * params.C_sh + (4.0 * params.alpha + 1.0) * params.C_z)
    ej = josephson_ghz(params.I_z)
    x_amp = 2.0 * params.alpha * ej * float(effective_x_factor(params, phi_x))
    pd = float(phi_d(params, phi_x))
    h = np.diag(ec_fast * n0sq + ec_slow * n1sq).astype(complex)
    # cos(phi0') cos(phi1' - a) = 1/4 sum_{s0,s1} e^{i s0 phi0'} e^{i s1 (phi1' - a)}
    for (s0, s1), m in corner.items():
        h += -2.0 * ej * 0.25 * np.exp(-1j * s1 * 0.5 * phi_z) * m
    low = -x_amp * 0.5 * np.exp(-1j * pd) * up2
    h += low + low.conj().T
    return OperatorMatrix(h, basis, "GHz")


def build_hamiltonian(params: CircuitParams, flux, model: str = "1d", truncation=None) -> OperatorMatrix:
    basis = make_basis(model, truncation)
    if basis.model == "1d":
        return build_h_1d(params, flux, basis.truncation[0])
    return build_h_2d(params, flux, basis.truncation)


def persistent_current_op(params: CircuitParams, flux, model: str = "1d", truncation=None) -> OperatorMatrix:
    """Persistent-current operator -dU/dPhi_z in nA.

    1d: I_z sin(phi - phi_z/2); 2d: I_z cos(phi0') sin(phi1' - phi_z/2).
    Multiply by :func:`csfq.constants.nA_to_ghz_per_rad` for -dH/dphi_z in GHz/rad.
    """
    basis = make_basis(model, truncation)
    _, phi_z = _applied(params, flux)
    if basis.model == "1d":
        _, up1, _ = _structure_1d(basis.truncation[0])
        # sin(phi - a) -> (e^{-ia} e^{i phi} - h.c.) / 2i
        low = params.I_z * np.exp(-0.5j * phi_z) / 2j * up1
    else:
        _, _, corner, _ = _structure_2d(*basis.truncation)
        low = np.zeros_like(corner[(1, 1)], dtype=complex)
        for (s0, s1), m in corner.items():
            if s1 == 1:
                low += params.I_z * 0.5 * np.exp(-0.5j * phi_z) / 2j * m
    return OperatorMatrix(low + low.conj().T, basis, "nA")


def fix_phases(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    pivots = vectors[idx, np.arange(vectors.shape[1])]
    return vectors * (np.abs(pivots) / pivots)[None, :]


def eigensolve(h, k: int | None = None) -> Spectrum:
    """Lowest ``k`` eigenpairs of a Hermitian operator, ascending and phase fixed."""
    if isinstance(h, OperatorMatrix):
        mat, basis = h.matrix, h.basis
    else:
        mat, basis = np.asarray(h), None
    dim = mat.shape[0]
    if mat.ndim != 2 or mat.shape[1] != dim:
        raise ValueError("operator must be a square matrix")
    k = dim if k is None else int(k)
    if not 1 <= k <= dim:
        raise ValueError(f"k must be in [1, {dim}], got {k}")
    scale = max(np.max(np.abs(mat)), 1e-300)
    if np.max(np.abs(mat - mat.conj().T)) > 1e-10 * scale:
        raise ValueError("operator is not Hermitian")
    if k == dim or dim <= 400:
        # a full dense solve beats the subset driver at these sizes
        w, v = np.linalg.eigh(mat)
        w, v = w[:k], v[:, :k]
    else:
        w, v = scipy.linalg.eigh(mat, subset_by_index=[0, k - 1])
    return Spectrum(w, fix_phases(v), basis)


def spectrum_at(params, flux, model="1d", k=10, truncation=None) -> Spectrum:
    return eigensolve(build_hamiltonian(params, flux, model, truncation), k)


def transition_frequency(params, flux, model="1d", i=0, j=1, truncation=None) -> float:
    """omega_ij = eps_j - eps_i in GHz."""
    if i > j:
        raise ValueError("require i <= j")
    if i == j:
        return 0.0
    spec = spectrum_at(params, flux, model, j + 1, truncation)
    return float(spec.energies[j] - spec.energies[i])


def omega01(params, flux, model="1d", truncation=None) -> float:
    return transition_frequency(params, flux, model, 0, 1, truncation)


@dataclass(frozen=True, eq=False)
class GapMap:
    phi_x: np.ndarray
    phi_z: np.ndarray
    omega01: np.ndarray  # shape (len(phi_x), len(phi_z))

    def argmin_phi_z(self) -> np.ndarray:
        return self.phi_z[np.argmin(self.omega01, axis=1)]

    def rows(self):
        for i, px in enumerate(self.phi_x):
            for j, pz in enumerate(self.phi_z):
                yield px, pz, self.omega01[i, j]


def gap_map(params, phi_x_values, phi_z_values, model="1d", truncation=None) -> GapMap:
    phi_x_values = np.asarray(phi_x_values, dtype=float)
    phi_z_values = np.asarray(phi_z_values, dtype=float)
    if phi_x_values.size < 2 or phi_z_values.size < 2:
        raise ValueError("gap map needs at least two points per axis")
    if not (np.all(np.isfinite(phi_x_values)) and np.all(np.isfinite(phi_z_values))):
        raise ValueError("flux ranges must be finite")
    grid = np.array(
        [[omega01(params, (px, pz), model, truncation) for pz in phi_z_values] for px in phi_x_values]
    )
    return GapMap(phi_x_values, phi_z_values, grid)


def refine_min_gap(params, phi_x: float, bracket: tuple[float, float], model="1d", truncation=None,
                   xtol: float = 1e-7) -> float:
    """Locate the minimum of omega01 over phi_z inside ``bracket`` by bounded Brent search."""
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(
        lambda pz: omega01(params, (phi_x, pz), model, truncation),
        bounds=bracket,
        method="bounded",
        options={"xatol": xtol},
    )
    return float(res.x)


def params_dict(params: CircuitParams) -> dict:
    return asdict(params)
