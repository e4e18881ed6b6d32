import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csfq.bath import BathParams, LambShiftTable, gamma
from csfq.circuit import DEVICE_1D, FluxPoint, persistent_current_op, phi_d, spectrum_at
from csfq.dynamics import (
    MatrixSource,
    SolverConfig,
    _coherence_blocks,
    _graph_blocks,
    davies_generator,
    evolve_ame,
    evolve_schrodinger,
    gibbs_state,
    lindblad_ops,
    propagate_closed,
    propagate_open,
    trace_distance,
)
from csfq.paths import PathSpec, make_path

BATH = BathParams()
SZ = np.diag([1.0, -1.0])
SX = np.array([[0.0, 1.0], [1.0, 0.0]])


def _device_spectrum(k=6, flux=(1.45 * math.pi, 0.03)):
    s = spectrum_at(DEVICE_1D, flux, "1d", k, 15)
    ip = persistent_current_op(DEVICE_1D, flux, "1d", 15)
    return s, ip


def test_jump_operators_rebuild_coupling():
    s, ip = _device_spectrum()
    ops = lindblad_ops(s, ip)
    a = s.vectors.conj().T @ ip.matrix @ s.vectors
    assert sum(L for _, L in ops) == pytest.approx(a, abs=1e-9)
    freqs = [w for w, _ in ops]
    assert freqs == sorted(freqs)


def test_jump_operator_pairs_are_adjoint():
    s, ip = _device_spectrum()
    ops = dict(lindblad_ops(s, ip))
    for w, L in ops.items():
        partner = min(ops, key=lambda x: abs(x + w))
        assert partner == pytest.approx(-w, abs=1e-9)
        assert ops[partner] == pytest.approx(L.conj().T, abs=1e-12)


def _explicit_generator(energies, coupling, bath, lamb):
    """Apply the dissipator written operator by operator, for comparison with the superoperator."""
    from csfq.circuit import Spectrum

    k = len(energies)
    spec = Spectrum(np.asarray(energies), np.eye(k), None)
    from csfq.circuit import OperatorMatrix

    ops = lindblad_ops(spec, OperatorMatrix(coupling, None, "x"), bath.bohr_bin_tol)

    def apply(rho):
        out = np.zeros_like(rho)
        h_ls = np.zeros_like(rho)
        for w, L in ops:
            g = gamma(bath, 2 * math.pi * w)
            LdL = L.conj().T @ L
            out += g * (L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL))
            if lamb is not None:
                h_ls += float(lamb(2 * math.pi * w)) * LdL
        return out - 1j * (h_ls @ rho - rho @ h_ls)

    return apply


@pytest.mark.parametrize("lamb_on", [False, True])
def test_superoperator_matches_explicit_dissipator(lamb_on):
    s, ip = _device_spectrum(5)
    coupling = s.vectors.conj().T @ ip.matrix @ s.vectors * 0.5
    lamb = LambShiftTable(BATH) if lamb_on else None
    liou, _ = davies_generator(s.energies, coupling, BATH, lamb)
    explicit = _explicit_generator(s.energies, coupling, BATH, lamb)
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    fast = (liou @ rho.reshape(-1)).reshape(5, 5)
    assert fast == pytest.approx(explicit(rho), abs=1e-12 * np.max(np.abs(fast)))
    assert abs(np.trace(fast)) < 1e-12 * np.max(np.abs(fast))


def test_gibbs_state_is_stationary_for_generator():
    s, ip = _device_spectrum(5)
    coupling = s.vectors.conj().T @ ip.matrix @ s.vectors
    liou, _ = davies_generator(s.energies, coupling, BATH, LambShiftTable(BATH))
    g = np.diag(gibbs_state(s.energies, BATH.temperature)).astype(complex)
    assert np.max(np.abs(liou @ g.reshape(-1))) < 1e-10 * np.max(np.abs(liou))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(-5.0, 5.0), min_size=3, max_size=6, unique=True), st.integers(0, 1000))
def test_block_partition_refines_nothing_the_generator_couples(levels, seed):
    e = np.sort(np.array(levels))
    # force some equal gaps so that several coherences share a Bohr frequency
    e = np.round(e * 4) / 4
    if np.unique(e).size < e.size:
        return
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(e.size, e.size))
    a = a + a.T
    liou, _ = davies_generator(e, a, BathParams(eta_g2=1e-3, bohr_bin_tol=1e-6), None)
    labels = _coherence_blocks(e, 1e-6)
    for comp in _graph_blocks(liou):
        assert np.unique(labels[comp]).size == 1


def test_gibbs_state_oracle():
    p = gibbs_state([0.0, 0.2], 10.0)
    x = math.exp(-0.2e9 * 6.62607015e-34 / (1.380649e-23 * 0.01))
    assert p == pytest.approx([1 / (1 + x), x / (1 + x)], rel=1e-12)


def test_landau_zener_half_probability():
    v = 1.0  # GHz/ns
    gap = math.sqrt(math.log(2)) / math.pi  # exp(-pi^2 gap^2 / v) = 1/2
    T = 100.0
    src = MatrixSource(lambda t: 0.5 * v * (t - T) * SZ + 0.5 * gap * SX, 2 * T)
    r = propagate_closed(src, SolverConfig(levels=2, rel_tol=1e-6, max_step=0.5))
    p_lz = math.exp(-math.pi**2 * gap**2 / v)
    assert r.final_populations[1] == pytest.approx(p_lz, rel=0.01)


def test_adiabatic_limit_stays_in_ground_state():
    src = MatrixSource(lambda t: 0.5 * 0.05 * (t - 50) * SZ + 0.5 * 2.0 * SX, 100.0)
    r = propagate_closed(src, SolverConfig(levels=2, rel_tol=1e-7))
    assert r.final_populations[0] > 1 - 1e-4


def test_open_system_matches_closed_without_coupling():
    f0, f1 = FluxPoint(1.2 * math.pi, 0.0), FluxPoint(1.8 * math.pi, 0.0)
    path = make_path(PathSpec(f0, f1, 5.0, tilt_amplitude=0.2, idle_after_ns=0.5, n_samples=50, n_idle_samples=2))
    cfg = SolverConfig(levels=6, truncation=12, rel_tol=1e-8)
    a = evolve_schrodinger(DEVICE_1D, path, "1d", cfg)
    b = evolve_ame(DEVICE_1D, path, "1d", BathParams(eta_g2=0.0), cfg)
    assert np.max(np.abs(a.populations - b.populations)) < 1e-7


def test_idle_without_coupling_keeps_populations():
    f0, f1 = FluxPoint(1.2 * math.pi, -0.6), FluxPoint(2.0 * math.pi, -0.6)
    path = make_path(PathSpec(f0, f1, 10.0, tilt_amplitude=1.0, idle_after_ns=3.0, n_samples=50, n_idle_samples=3))
    cfg = SolverConfig(levels=6, truncation=14, rel_tol=1e-7)
    r = evolve_ame(DEVICE_1D, path, "1d", BathParams(eta_g2=0.0), cfg)
    i = r.index_at(10.0)
    assert r.populations[-1] == pytest.approx(r.populations[i], abs=1e-7)


def _small_gap_point():
    # at the symmetry point with a ~0.13 GHz gap: both levels share the wells
    px = 1.53 * math.pi
    return FluxPoint(px, float(phi_d(DEVICE_1D, px)))


def test_relaxes_to_gibbs_state_and_preserves_trace():
    f = _small_gap_point()
    path = make_path(PathSpec(f, f, 300.0, n_samples=2))
    cfg = SolverConfig(levels=4, truncation=15, rel_tol=1e-6, max_step=2.0, n_output=7)
    ex = spectrum_at(DEVICE_1D, f, "1d", 4, 15).vectors[:, 1]
    r = evolve_ame(DEVICE_1D, path, "1d", BATH, cfg, rho0=np.outer(ex, ex.conj()))
    g = gibbs_state(r.energies[-1], BATH.temperature)
    assert 0.05 < g[1] < 0.49  # genuinely mixed
    assert trace_distance(r.final_rho, np.diag(g)) < 1e-3
    assert np.all(np.abs(np.einsum("tii->t", r.rho) - 1) < 1e-9)


def test_open_propagation_from_matrix_source_needs_current():
    src = MatrixSource(lambda t: SZ, 1.0)
    with pytest.raises(ValueError):
        propagate_open(src, BATH, SolverConfig(levels=2))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(levels=1)
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=0)
    with pytest.raises(ValueError):
        SolverConfig(min_step=1.0, max_step=0.1)
