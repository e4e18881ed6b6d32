"""Persistent-current readout as a smoothed projector (POVM)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import BasisMismatch, OperatorMatrix


@dataclass(frozen=True)
class ReadoutModel:
    delta_I: float = 10.0  # nA

    def __post_init__(self):
        if not self.delta_I > 0:
            raise ValueError("delta_I must be positive")


def _as_matrix(op):
    if isinstance(op, OperatorMatrix):
        return op.matrix, op.basis
    return np.asarray(op), None


def response(x):
    """f(x) = (tanh x + 1) / 2."""
    return 0.5 * (np.tanh(x) + 1.0)


def _povm(ip_subspace, model: ReadoutModel, sign: float) -> OperatorMatrix:
    mat, basis = _as_matrix(ip_subspace)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("current operator must be square")
    scale = max(float(np.max(np.abs(mat))), 1e-300)
    if np.max(np.abs(mat - mat.conj().T)) > 1e-10 * scale:
        raise ValueError("current operator is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    weights = response(sign * w / model.delta_I)
    m = (v * weights) @ v.conj().T
    return OperatorMatrix(0.5 * (m + m.conj().T), basis, "1")


def povm_right(ip_subspace, model: ReadoutModel = ReadoutModel()) -> OperatorMatrix:
    """M_r = sum_l f(I_l / delta_I) |l><l| over eigenpairs of the current operator."""
    return _povm(ip_subspace, model, 1.0)


def povm_left(ip_subspace, model: ReadoutModel = ReadoutModel()) -> OperatorMatrix:
    """Complement M_l = I - M_r, built from f(-x)."""
    return _povm(ip_subspace, model, -1.0)


def p_right(rho, m_r) -> float:
    """Tr(rho M_r), clipped to [0, 1] only against rounding."""
    r, rb = _as_matrix(rho)
    m, mb = _as_matrix(m_r)
    if r.shape != m.shape:
        raise BasisMismatch(f"density matrix {r.shape} vs POVM {m.shape}")
    if rb is not None and mb is not None and rb != mb:
        raise BasisMismatch("density matrix and POVM live in different bases")
    p = float(np.real(np.sum(r * m.T)))
    if p < -1e-9 or p > 1 + 1e-9:
        raise ValueError(f"P_right = {p} outside [0, 1]; is rho normalized?")
    return min(max(p, 0.0), 1.0)
