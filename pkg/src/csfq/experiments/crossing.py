"""Level-crossing scans: tilted anneals into the excited-state manifold.

Each scan point anneals the barrier from ``phi_x_start`` to ``phi_x_end``
while the tilt ramps as phi_z(t) = phi_z(0) + amp * t / t_f. As phi_z(0)
grows, avoided crossings between excited levels are pushed into the end of
the anneal one after another, and the final right-well probability shows a
feature each time one of them enters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import find_peaks

from ..bath import BathParams
from ..circuit import FluxPoint, make_basis, persistent_current_op, spectrum_at
from ..constants import mphi0_to_rad
from ..dynamics import SolverConfig, evolve_ame, evolve_schrodinger
from ..paths import AnnealPath, PathSpec, make_path
from ..readout import ReadoutModel
from .parallel import ordered_map

DEFAULT_AMP = 0.326 * math.pi


@dataclass(frozen=True)
class AvoidedCrossing:
    phi_z0: float  # rad, initial tilt of the path on which the minimum sits
    s: float  # t / t_f at the minimum
    lower: int
    upper: int
    gap: float  # GHz
    coupling: float  # |<lower| I_p |upper>| at the minimum, nA
    avoided: bool


@dataclass(frozen=True)
class CrossingScanConfig:
    phi_x_start: float = 1.2 * math.pi
    phi_x_end: float = 2.0 * math.pi
    amp: float = DEFAULT_AMP
    t_f: float = 60.0
    idle_ns: float = 2.0
    model: str = "1d"
    evolution: str = "open"  # or "closed"
    bath: BathParams = BathParams()
    readout: ReadoutModel = ReadoutModel()
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(levels=10, truncation=22, rel_tol=1e-4))
    gap_threshold: float = 0.01  # GHz
    coupling_floor: float = 1e-6  # nA
    n_samples: int = 1000
    n_idle_samples: int = 50

    def __post_init__(self):
        if self.evolution not in ("open", "closed"):
            raise ValueError("evolution must be 'open' or 'closed'")
        if not self.t_f > 0 or not self.idle_ns >= 0:
            raise ValueError("need t_f > 0 and idle_ns >= 0")

    @property
    def levels(self) -> int:
        return self.solver.levels

    def path_spec(self, phi_z0: float, idle_ns: float | None = None) -> PathSpec:
        return PathSpec(
            FluxPoint(self.phi_x_start, phi_z0), FluxPoint(self.phi_x_end, phi_z0), self.t_f,
            tilt_amplitude=self.amp, idle_after_ns=self.idle_ns if idle_ns is None else idle_ns,
            n_samples=self.n_samples, n_idle_samples=self.n_idle_samples,
        )

    def replace(self, **changes) -> CrossingScanConfig:
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class CrossingScanResult:
    phi_z0: np.ndarray  # rad
    p_right: np.ndarray
    populations: np.ndarray  # (n, K) final eigenpopulations
    catalog: tuple  # AvoidedCrossing entries inside the scanned range
    idle_ns: float

    def rows(self):
        for z, p, pops in zip(self.phi_z0, self.p_right, self.populations):
            yield (z, p, *pops)

    @property
    def avoided(self) -> list:
        return [c for c in self.catalog if c.avoided]


# avoided-crossing location

def gap_minima(energy_fn, s_grid, levels: int, gap_threshold: float = 0.01, coupling_fn=None,
               coupling_floor: float = 1e-6, phi_z0: float = float("nan")) -> list[AvoidedCrossing]:
    """Interior local minima of every adjacent gap along a one-parameter family.

    ``energy_fn(s)`` returns ascending energies (GHz, at least ``levels``);
    ``coupling_fn(s, k)`` optionally returns the transition matrix element
    between levels k and k+1. Each coarse minimum is refined by a bounded
    scalar search between its neighbours.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if levels < 2:
        raise ValueError("levels must be >= 2")
    e = np.array([np.asarray(energy_fn(s))[:levels] for s in s_grid])
    gaps = np.diff(e, axis=1)
    out = []
    for k in range(levels - 1):
        g = gaps[:, k]
        idx = np.flatnonzero((g[1:-1] < g[:-2]) & (g[1:-1] <= g[2:])) + 1
        for i in idx:
            res = minimize_scalar(lambda s: float(np.diff(np.asarray(energy_fn(s))[k:k + 2])[0]),
                                  bounds=(s_grid[i - 1], s_grid[i + 1]), method="bounded",
                                  options={"xatol": 1e-10 * max(1.0, abs(s_grid[i]))})
            s_star, gap = (float(res.x), float(res.fun)) if res.fun <= g[i] else (float(s_grid[i]), float(g[i]))
            c = float(coupling_fn(s_star, k)) if coupling_fn is not None else math.inf
            out.append(AvoidedCrossing(phi_z0, s_star, k, k + 1, gap, c,
                                       bool(gap > gap_threshold and c > coupling_floor)))
    out.sort(key=lambda c: (c.s, c.lower))
    return out


def _circuit_fns(params, flux_of, model, truncation, levels):
    basis = make_basis(model, truncation)

    def energies(u):
        return spectrum_at(params, flux_of(u), model, levels, basis.truncation).energies

    def coupling(u, k):
        flux = flux_of(u)
        spec = spectrum_at(params, flux, model, levels, basis.truncation)
        ip = persistent_current_op(params, flux, model, basis.truncation).matrix
        v = spec.vectors
        return abs(v[:, k].conj() @ ip @ v[:, k + 1])

    return energies, coupling


def locate_avoided_crossings(params, path: AnnealPath, levels: int = 10, gap_threshold: float = 0.01,
                             model: str = "1d", truncation=None, n_s: int = 401,
                             coupling_floor: float = 1e-6) -> list[AvoidedCrossing]:
    """Avoided and actual crossings among the ``levels`` lowest states along the anneal part of a path."""
    if levels < 3:
        raise ValueError("levels must be >= 3")
    t_end = path.anneal_end
    energies, coupling = _circuit_fns(params, lambda s: path.flux(s * t_end), model, truncation, levels)
    return gap_minima(energies, np.linspace(0.0, 1.0, n_s), levels, gap_threshold, coupling,
                      coupling_floor, phi_z0=float(path.flux(0.0).phi_z))


def end_of_anneal_crossings(params, cfg: CrossingScanConfig, z0_range: tuple[float, float],
                            step: float = 5e-4) -> list[AvoidedCrossing]:
    """Initial tilts at which an avoided crossing sits exactly at the end of the anneal.

    The end point of the path is (phi_x_end, phi_z0 + amp), so the catalog is
    found by scanning phi_z0 at that barrier height. For phi_z0 on one side of
    an entry the crossing is swept through during the anneal, on the other
    side it is never reached; this is where a scan feature is expected.
    """
    lo, hi = z0_range
    n = max(3, int(math.ceil((hi - lo) / step)) + 1)
    grid = np.linspace(lo, hi, n)
    energies, coupling = _circuit_fns(params, lambda z: FluxPoint(cfg.phi_x_end, z + cfg.amp), cfg.model,
                                      cfg.solver.truncation, cfg.levels)
    found = gap_minima(energies, grid, cfg.levels, cfg.gap_threshold, coupling, cfg.coupling_floor)
    return sorted((replace(c, phi_z0=c.s, s=1.0) for c in found), key=lambda c: (c.phi_z0, c.lower))


# scans

def _scan_job(job):
    params, cfg, z0, idles = job
    path = make_path(cfg.path_spec(z0, max(idles)))
    marks = [cfg.t_f + i for i in idles]
    if cfg.evolution == "open":
        res = evolve_ame(params, path, cfg.model, cfg.bath, cfg.solver, extra_times=marks)
    else:
        res = evolve_schrodinger(params, path, cfg.model, cfg.solver, extra_times=marks)
    out = []
    for t in marks:
        i = res.index_at(t)
        out.append((res.p_right(cfg.readout, i), res.populations[i].copy()))
    return out


def _scan(params, phi_z0, cfg, idles, workers, catalog):
    phi_z0 = np.asarray(phi_z0, dtype=float)
    if phi_z0.ndim != 1 or phi_z0.size == 0 or np.any(np.diff(phi_z0) <= 0):
        raise ValueError("phi_z0 grid must be 1-D and strictly increasing")
    jobs = [(params, cfg, float(z), tuple(idles)) for z in phi_z0]
    per_point = ordered_map(_scan_job, jobs, workers)
    cat = ()
    if catalog:
        cat = tuple(end_of_anneal_crossings(params, cfg, (float(phi_z0[0]), float(phi_z0[-1]))))
    results = []
    for j, idle in enumerate(idles):
        p = np.array([pp[j][0] for pp in per_point])
        pops = np.array([pp[j][1] for pp in per_point])
        results.append(CrossingScanResult(phi_z0, p, pops, cat, float(idle)))
    return results


def run_crossing_scan(params, phi_z0, cfg: CrossingScanConfig = CrossingScanConfig(), workers: int = 1,
                      catalog: bool = True) -> CrossingScanResult:
    """P_right and final eigenpopulations for each initial tilt, after ``cfg.idle_ns`` of idling."""
    return _scan(params, phi_z0, cfg, [cfg.idle_ns], workers, catalog)[0]


def scan_idle_times(params, phi_z0, idle_list, cfg: CrossingScanConfig = CrossingScanConfig(),
                    workers: int = 1, catalog: bool = True) -> list[CrossingScanResult]:
    """One crossing scan per idle duration.

    Idling happens at fixed flux after the anneal, so a single evolution per
    point idling for the longest duration is sampled at every requested idle
    time instead of re-running the anneal.
    """
    idle_list = [float(i) for i in idle_list]
    if not idle_list or min(idle_list) < 0:
        raise ValueError("idle_list must be non-empty and non-negative")
    return _scan(params, phi_z0, cfg, idle_list, workers, catalog)


# feature analysis

def detect_features(phi_z0, p, min_prominence: float = 0.05):
    """Initial tilts of peaks in a scanned P_right curve.

    A peak is a local maximum standing at least ``min_prominence`` above the
    higher of its two flanking minima. Single-sample peaks are expected: a
    crossing sitting at the end of the anneal is hit only in a narrow window
    of initial tilt.
    """
    x = np.asarray(phi_z0, dtype=float)
    idx, _ = find_peaks(np.asarray(p, dtype=float), prominence=min_prominence)
    return x[idx]


def detect_steps(phi_z0, p, n: int = 3):
    """Initial tilts of the ``n`` steepest rises or falls of a scanned curve.

    Steps are ranked by the prominence of |dP/dphi_z0| peaks and returned in
    increasing tilt order.
    """
    x = np.asarray(phi_z0, dtype=float)
    slope = np.abs(np.gradient(np.asarray(p, dtype=float), x))
    idx, props = find_peaks(slope, prominence=0.0)
    top = idx[np.argsort(-props["prominences"], kind="stable")[:n]]
    return np.sort(x[top])


def align_features(features, catalog, tolerance_mphi0: float = 1.0):
    """For each feature, the nearest avoided crossing and whether it lies within tolerance."""
    tol = mphi0_to_rad(tolerance_mphi0)
    centers = np.array([c.phi_z0 for c in catalog if c.avoided])
    out = []
    for f in np.asarray(features, dtype=float):
        if centers.size == 0:
            out.append((float(f), None, False))
            continue
        j = int(np.argmin(np.abs(centers - f)))
        out.append((float(f), float(centers[j]), bool(abs(centers[j] - f) <= tol)))
    return out


def non_monotonic_excess(p) -> float:
    """Total variation beyond the net change: zero for staircases, positive for peaks."""
    p = np.asarray(p, dtype=float)
    return float(np.sum(np.abs(np.diff(p))) - abs(p[-1] - p[0]))


def peak_prominences(p, min_prominence: float = 0.0):
    """Heights of local maxima above the higher of their two flanking minima."""
    _, props = find_peaks(np.asarray(p, dtype=float), prominence=0.0)
    return [float(v) for v in props["prominences"] if v > min_prominence]
