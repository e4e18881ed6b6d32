"""Closed- and open-system evolution along an anneal path.

Both propagators share one stepper. The unitary part uses the fourth-order
commutator-free Magnus exponential (two exponentials per step evaluated at
the Gauss points). The open-system propagator wraps it in a symmetric
(Strang) splitting with the Davies dissipator, which is built in the
instantaneous truncated eigenbasis at the step ends. For a static
Hamiltonian the Davies generator commutes with the unitary part, so the
splitting is exact there; with the coupling switched off it reduces to the
closed-system step. Step sizes are controlled by step doubling.

Energies enter the propagators as angular frequencies (rad/ns). The bath
couples through the persistent current written as -dH/dphi_z, in the units
selected by ``BathParams.coupling_units``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .bath import BathParams, LambShiftTable, gamma
from .circuit import (
    BasisMismatch,
    OperatorMatrix,
    Spectrum,
    build_hamiltonian,
    fix_phases,
    make_basis,
    persistent_current_op,
)
from .constants import nA_to_ghz_per_rad
from .paths import AnnealPath
from .readout import ReadoutModel, p_right, povm_right

TWO_PI = 2.0 * math.pi

# Commutator-free Magnus, order 4: Gauss nodes and mixing weights.
_C1 = 0.5 - math.sqrt(3.0) / 6.0
_C2 = 0.5 + math.sqrt(3.0) / 6.0
_A1 = (3.0 - 2.0 * math.sqrt(3.0)) / 12.0
_A2 = (3.0 + 2.0 * math.sqrt(3.0)) / 12.0


class StepSizeError(RuntimeError):
    pass


class PositivityViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Propagator settings.

    ``rel_tol``/``abs_tol`` bound the local error per step (max-norm of the
    state). ``n_output`` output points are spread uniformly over the anneal;
    idle samples of the path are added on top.
    """

    levels: int = 10
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    max_step: float = 0.25  # ns
    min_step: float = 1e-7  # ns
    initial_step: float = 0.01  # ns
    truncation: object = None
    n_output: int = 101
    positivity_tol: float = 1e-6

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_step > 0 or not 0 < self.min_step <= self.max_step:
            raise ValueError("need 0 < min_step <= max_step")
        if self.n_output < 2:
            raise ValueError("n_output must be >= 2")


@dataclass(frozen=True, eq=False)
class EvolutionResult:
    """Output of a propagation, sampled at ``times``.

    ``rho`` holds the state restricted to the instantaneous K lowest levels
    (phase-tracked eigenvectors), ``currents`` the persistent current in the
    same subspace (nA) and ``energies`` the level energies (GHz).
    """

    times: np.ndarray
    populations: np.ndarray  # (n_t, K)
    rho: np.ndarray  # (n_t, K, K)
    currents: np.ndarray  # (n_t, K, K)
    energies: np.ndarray  # (n_t, K)
    final_spectrum: Spectrum
    state: np.ndarray  # final state (vector or matrix) in the full basis
    steps: int = 0
    rejected: int = 0

    @property
    def final_rho(self) -> np.ndarray:
        return self.rho[-1]

    @property
    def final_ip(self) -> np.ndarray:
        return self.currents[-1]

    @property
    def final_populations(self) -> np.ndarray:
        return self.populations[-1]

    def index_at(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not an output time")
        return i

    def p_right(self, readout: ReadoutModel = ReadoutModel(), index: int = -1) -> float:
        return p_right(self.rho[index], povm_right(self.currents[index], readout))

    def p_right_series(self, readout: ReadoutModel = ReadoutModel()) -> np.ndarray:
        return np.array([self.p_right(readout, i) for i in range(len(self.times))])

    def rows(self):
        for t, pops in zip(self.times, self.populations):
            yield (t, *pops)


class HamiltonianSource:
    """Time-dependent Hamiltonian (GHz) and bath coupling operator (nA)."""

    duration: float
    anneal_end: float

    def hamiltonian(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def current(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def idle_times(self) -> np.ndarray:
        return np.empty(0)


class CircuitSource(HamiltonianSource):
    def __init__(self, params, path: AnnealPath, model: str = "1d", truncation=None):
        self.params, self.path, self.model = params, path, model
        self.truncation = make_basis(model, truncation).truncation
        self.duration = path.duration
        self.anneal_end = path.anneal_end

    def hamiltonian(self, t):
        return build_hamiltonian(self.params, self.path.flux(t), self.model, self.truncation).matrix

    def current(self, t):
        return persistent_current_op(self.params, self.path.flux(t), self.model, self.truncation).matrix

    def idle_times(self):
        return self.path.t[self.path.t > self.anneal_end]


class MatrixSource(HamiltonianSource):
    """Wrap plain callables ``h(t)`` (GHz) and optional ``current(t)`` (nA)."""

    def __init__(self, h, duration: float, current=None, anneal_end: float | None = None):
        self._h, self._c = h, current
        self.duration = float(duration)
        self.anneal_end = self.duration if anneal_end is None else float(anneal_end)

    def hamiltonian(self, t):
        return np.asarray(self._h(t), dtype=complex)

    def current(self, t):
        if self._c is None:
            raise ValueError("this source has no coupling operator")
        return np.asarray(self._c(t), dtype=complex)


def output_grid(source: HamiltonianSource, n_output: int, extra=()) -> np.ndarray:
    t = np.concatenate([np.linspace(0.0, source.anneal_end, n_output), source.idle_times(), np.asarray(extra, float)])
    t = t[(t >= 0) & (t <= source.duration * (1 + 1e-12))]
    t = np.unique(np.round(t, 12))
    return t


# --- Bohr-frequency binning and Lindblad operators -------------------------------------------


def _bin_frequencies(values: np.ndarray, tol: float):
    """Single-linkage clustering of sorted values with gap > tol starting a new bin."""
    flat = np.ravel(values)
    order = np.argsort(flat, kind="stable")
    sorted_vals = flat[order]
    new = np.concatenate([[True], np.diff(sorted_vals) > tol])
    ids_sorted = np.cumsum(new) - 1
    labels = np.empty_like(ids_sorted)
    labels[order] = ids_sorted
    counts = np.bincount(ids_sorted)
    centers = np.bincount(ids_sorted, weights=sorted_vals) / counts
    return labels.reshape(np.shape(values)), centers


def _subspace_coupling(vectors: np.ndarray, ip_matrix: np.ndarray) -> np.ndarray:
    return vectors.conj().T @ ip_matrix @ vectors


def lindblad_ops(spectrum: Spectrum, ip: OperatorMatrix, bin_tol: float = 1e-3):
    """Jump operators in the eigenbasis of ``spectrum``.

    Returns a list of (omega, L_omega) with omega = eps_b - eps_a in GHz (bin
    centre) and L_omega = sum <a|I_p|b> |a><b| over the pairs in the bin, as
    K x K matrices in nA. Sorted by omega.
    """
    if spectrum.basis is not None and ip.basis is not None and spectrum.basis != ip.basis:
        raise BasisMismatch("spectrum and current operator use different bases")
    if spectrum.vectors.shape[0] != ip.matrix.shape[0]:
        raise BasisMismatch("spectrum and current operator dimensions differ")
    a = _subspace_coupling(spectrum.vectors, ip.matrix)
    e = np.asarray(spectrum.energies)
    labels, centers = _bin_frequencies(e[None, :] - e[:, None], bin_tol)
    out = []
    for k, omega in enumerate(centers):
        out.append((float(omega), np.where(labels == k, a, 0.0)))
    return out


class _Dissipator:
    """Davies generator at one instant, split into invariant blocks."""

    def __init__(self, vectors, energies, liouvillian, damping, labels):
        self.vectors = vectors  # D x K eigenvectors
        self.energies = energies  # GHz
        self.liouvillian = liouvillian  # K^2 x K^2, row-major vectorization
        self.damping = damping  # M = Gamma/2 + i H_LS
        counts = np.bincount(labels)
        single = counts[labels] == 1
        self.scalar_idx = np.flatnonzero(single)
        self.scalar_rate = liouvillian[self.scalar_idx, self.scalar_idx]
        self.blocks = [np.flatnonzero(labels == lab) for lab in np.flatnonzero(counts > 1)]
        self._props = {}

    def propagator(self, tau):
        hit = self._props.get(tau)
        if hit is None:
            hit = (
                np.exp(tau * self.scalar_rate),
                [expm(tau * self.liouvillian[np.ix_(b, b)]) for b in self.blocks],
                expm(-tau * self.damping),
            )
            self._props[tau] = hit
        return hit


def davies_generator(energies_ghz, coupling, bath: BathParams, lamb: LambShiftTable | None):
    """Superoperator of the Davies dissipator plus Lamb shift on a K-level subspace.

    ``coupling`` is the system-bath operator in the eigenbasis (GHz or rad/ns).
    Returns (L, M) with L acting on row-major vec(rho) and M = Gamma/2 + i H_LS
    the non-Hermitian damping matrix (Gamma = sum L^dag L weighted by gamma).
    """
    e = np.asarray(energies_ghz, dtype=float)
    k = e.size
    labels, centers = _bin_frequencies(e[None, :] - e[:, None], bath.bohr_bin_tol)
    g = np.asarray(gamma(bath, TWO_PI * centers))[labels]
    a = np.asarray(coupling)
    same = labels[:, :, None, None] == labels[None, None, :, :]
    jump = np.where(same, (g * a)[:, :, None, None] * a.conj()[None, None, :, :], 0.0)
    jump = jump.transpose(0, 2, 1, 3).reshape(k * k, k * k)
    pair = labels[:, :, None] == labels[:, None, :]
    w = np.where(pair, a.conj()[:, :, None] * a[:, None, :], 0.0)
    big_gamma = np.einsum("ab,abd->bd", g, w)
    damping = 0.5 * big_gamma
    if lamb is not None and bath.lamb_shift:
        s = np.asarray(lamb(TWO_PI * centers))[labels]
        h_ls = np.einsum("ab,abd->bd", s, w)
        damping = damping + 1j * h_ls
    eye = np.eye(k)
    liou = jump - np.kron(damping, eye) - np.kron(eye, damping.conj())
    return liou, damping


def _coherence_blocks(energies_ghz, tol: float):
    """Partition of coherences (a, c) that the Davies generator cannot mix.

    The generator only couples coherences whose frequencies eps_a - eps_c
    differ by at most the width of one Bohr bin, so clustering those
    frequencies with that width as the gap threshold gives invariant blocks.
    """
    e = np.asarray(energies_ghz, dtype=float)
    w = e[None, :] - e[:, None]
    labels, _ = _bin_frequencies(w, tol)
    flat = np.ravel(w)
    lo = np.full(labels.max() + 1, np.inf)
    hi = np.full(labels.max() + 1, -np.inf)
    np.minimum.at(lo, labels.ravel(), flat)
    np.maximum.at(hi, labels.ravel(), flat)
    gap = max(tol, float(np.max(hi - lo)))
    # coherence (a, c) has frequency eps_a - eps_c = -w[a, c]
    coh, _ = _bin_frequencies(-w, gap * (1.0 + 1e-9) + 1e-12)
    return coh.ravel()


def _graph_blocks(liou: np.ndarray):
    """Connected components of the generator's sparsity graph (reference partition)."""
    struct = csr_matrix(np.abs(liou) > 0)
    _, labels = connected_components(struct, directed=False)
    order = np.argsort(labels, kind="stable")
    cuts = np.flatnonzero(np.diff(labels[order])) + 1
    return np.split(order, cuts)


# --- propagator core -----------------------------------------------------------------------


class _Propagator:
    def __init__(self, source: HamiltonianSource, config: SolverConfig, bath: BathParams | None = None):
        self.src = source
        self.cfg = config
        self.bath = bath
        self.lamb = None
        if bath is not None and bath.eta_g2 > 0 and bath.lamb_shift:
            self.lamb = LambShiftTable(bath)
        self._eig_cache: OrderedDict = OrderedDict()
        self._diss_cache: OrderedDict = OrderedDict()
        self._prev_vectors = None

    # eigen-decomposition of H(t), cached for reuse across step halves
    def eig(self, t):
        key = float(t)
        hit = self._eig_cache.get(key)
        if hit is not None:
            return hit
        h = self.src.hamiltonian(t)
        w, v = np.linalg.eigh(h)
        hit = (w, v)
        self._eig_cache[key] = hit
        if len(self._eig_cache) > 8:
            self._eig_cache.popitem(last=False)
        return hit

    def unitary(self, t, dt):
        h1 = self.src.hamiltonian(t + _C1 * dt)
        h2 = self.src.hamiltonian(t + _C2 * dt)
        u = np.eye(h1.shape[0], dtype=complex)
        for m in (_A2 * h1 + _A1 * h2, _A1 * h1 + _A2 * h2):
            w, v = np.linalg.eigh(m)
            u = (v * np.exp(-1j * TWO_PI * dt * w)) @ v.conj().T @ u
        return u

    def dissipator(self, t):
        key = float(t)
        hit = self._diss_cache.get(key)
        if hit is not None:
            return hit
        w, v = self.eig(t)
        k = self.cfg.levels
        vk = v[:, :k]
        coupling = _subspace_coupling(vk, self.src.current(t)) * (self.bath.coupling_scale * nA_to_ghz_per_rad(1.0))
        liou, damping = davies_generator(w[:k], coupling, self.bath, self.lamb)
        labels = _coherence_blocks(w[:k], self.bath.bohr_bin_tol)
        hit = _Dissipator(vk, w[:k], liou, damping, labels)
        self._diss_cache[key] = hit
        if len(self._diss_cache) > 8:
            self._diss_cache.popitem(last=False)
        return hit

    def apply_dissipator(self, rho, t, tau):
        d = self.dissipator(t)
        vk = d.vectors
        k = vk.shape[1]
        x = vk.conj().T @ rho  # K x D
        rkk = x @ vk
        z = x - rkk @ vk.conj().T  # <K| rho Q
        scal, mats, e = d.propagator(tau)
        vec = rkk.reshape(-1)
        new = vec.copy()
        new[d.scalar_idx] = scal * vec[d.scalar_idx]
        for idx, m in zip(d.blocks, mats):
            new[idx] = m @ vec[idx]
        delta_kk = new.reshape(k, k) - rkk
        cross = vk @ ((e - np.eye(k)) @ z)
        out = rho + vk @ delta_kk @ vk.conj().T + cross + cross.conj().T
        return 0.5 * (out + out.conj().T)

    # single steps
    def step_closed(self, psi, t, dt):
        return self.unitary(t, dt) @ psi

    def step_open(self, rho, t, dt):
        rho = self.apply_dissipator(rho, t, 0.5 * dt)
        u = self.unitary(t, dt)
        rho = u @ rho @ u.conj().T
        return self.apply_dissipator(rho, t + dt, 0.5 * dt)

    # output sampling
    def observe(self, state, t, is_density):
        w, v = self.eig(t)
        k = self.cfg.levels
        vk = fix_phases(v[:, :k].copy())
        if self._prev_vectors is not None:
            ov = np.einsum("ij,ij->j", self._prev_vectors.conj(), vk)
            mag = np.abs(ov)
            ok = mag > 0.5
            vk[:, ok] *= (ov[ok].conj() / mag[ok])[None, :]
        self._prev_vectors = vk
        if is_density:
            rho = vk.conj().T @ state @ vk
        else:
            amp = vk.conj().T @ state
            rho = np.outer(amp, amp.conj())
        cur = vk.conj().T @ self.src.current(t) @ vk if self._has_current() else np.zeros((k, k))
        return w[:k].copy(), vk, rho, cur

    def _has_current(self):
        try:
            self.src.current(0.0)
        except ValueError:
            return False
        return True


def _integrate(prop: _Propagator, step, y0, t_out, order: int, check=None):
    cfg = prop.cfg
    t = 0.0
    y = y0
    dt = min(cfg.initial_step, cfg.max_step)
    outputs = []
    steps = rejected = 0
    frac = 1.0 / (order + 1)
    denom = 2.0**order - 1.0
    for target in t_out:
        while target - t > 1e-12:
            h = min(dt, cfg.max_step, target - t)
            truncated = h < dt
            full = step(y, t, h)
            half = step(step(y, t, 0.5 * h), t + 0.5 * h, 0.5 * h)
            if full.ndim == 1:
                # a global phase is unobservable; compare state vectors modulo it
                ov = np.vdot(half, full)
                if ov != 0:
                    full = full * (ov.conjugate() / abs(ov))
            err = np.max(np.abs(full - half)) / denom
            tol = cfg.abs_tol + cfg.rel_tol * np.max(np.abs(half))
            factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * (tol / err) ** frac))
            if err <= tol:
                t += h
                y = half
                steps += 1
                new_dt = h * factor
                dt = max(dt, new_dt) if truncated else new_dt
            else:
                rejected += 1
                dt = h * factor
                if dt < cfg.min_step:
                    raise StepSizeError(f"step size fell below {cfg.min_step} ns at t={t:.6g} ns")
        if check is not None:
            check(y, target)
        outputs.append(y)
    return outputs, steps, rejected


def _result(prop, states, t_out, is_density, steps, rejected):
    prop._prev_vectors = None
    energies, rhos, curs = [], [], []
    vk = None
    for s, t in zip(states, t_out):
        w, vk, rho, cur = prop.observe(s, t, is_density)
        energies.append(w)
        rhos.append(rho)
        curs.append(cur)
    rhos = np.array(rhos)
    pops = np.clip(np.real(np.einsum("tii->ti", rhos)), 0.0, 1.0)
    basis = getattr(prop.src, "truncation", None)
    final_basis = make_basis(prop.src.model, basis) if isinstance(prop.src, CircuitSource) else None
    final = Spectrum(np.array(energies[-1]), vk, final_basis)
    return EvolutionResult(
        times=np.asarray(t_out), populations=pops, rho=rhos, currents=np.array(curs),
        energies=np.array(energies), final_spectrum=final, state=states[-1], steps=steps, rejected=rejected,
    )


def propagate_closed(source: HamiltonianSource, config: SolverConfig = SolverConfig(), psi0=None,
                     extra_times=()) -> EvolutionResult:
    """Schrodinger propagation; starts in the ground state of H(0) unless ``psi0`` is given."""
    prop = _Propagator(source, config)
    if psi0 is None:
        psi0 = prop.eig(0.0)[1][:, 0].astype(complex)
    psi0 = np.asarray(psi0, dtype=complex)
    t_out = output_grid(source, config.n_output, extra_times)
    states, steps, rejected = _integrate(prop, prop.step_closed, psi0, t_out, order=4)
    return _result(prop, states, t_out, False, steps, rejected)


def propagate_open(source: HamiltonianSource, bath: BathParams, config: SolverConfig = SolverConfig(),
                   rho0=None, extra_times=()) -> EvolutionResult:
    """Adiabatic-master-equation propagation of the full density matrix.

    The dissipator acts on the K lowest instantaneous levels. Positivity is
    checked at every output time; a violation beyond ``positivity_tol`` raises
    :class:`PositivityViolation` rather than being clipped.
    """
    prop = _Propagator(source, config, bath)
    if rho0 is None:
        g = prop.eig(0.0)[1][:, 0]
        rho0 = np.outer(g, g.conj())
    rho0 = np.asarray(rho0, dtype=complex)
    t_out = output_grid(source, config.n_output, extra_times)

    def check(rho, t):
        lo = float(np.linalg.eigvalsh(rho)[0])
        if lo < -config.positivity_tol:
            raise PositivityViolation(f"density matrix eigenvalue {lo:.3e} at t={t:.6g} ns")

    order = 4 if bath.eta_g2 == 0 else 2
    states, steps, rejected = _integrate(prop, prop.step_open, rho0, t_out, order=order, check=check)
    return _result(prop, states, t_out, True, steps, rejected)


def evolve_schrodinger(params, path: AnnealPath, model: str = "1d", config: SolverConfig = SolverConfig(),
                       extra_times=()) -> EvolutionResult:
    return propagate_closed(CircuitSource(params, path, model, config.truncation), config, extra_times=extra_times)


def evolve_ame(params, path: AnnealPath, model: str = "1d", bath: BathParams = BathParams(),
               config: SolverConfig = SolverConfig(), rho0=None, extra_times=()) -> EvolutionResult:
    src = CircuitSource(params, path, model, config.truncation)
    return propagate_open(src, bath, config, rho0=rho0, extra_times=extra_times)


def gibbs_state(energies_ghz, temperature_mK: float) -> np.ndarray:
    """Diagonal Gibbs populations for the given level energies."""
    from .constants import beta_ns

    e = TWO_PI * (np.asarray(energies_ghz, float) - np.min(energies_ghz))
    p = np.exp(-beta_ns(temperature_mK) * e)
    return p / p.sum()


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a - b))))
