"""Fitting circuit parameters to transition-frequency spectroscopy."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from ..circuit import CircuitParams, InvalidParams, make_basis, phi_d, spectrum_at
from .scurve import FitDiverged

# design densities used by the junction-area parametrization of the 2D model
CURRENT_DENSITY = 3000.0  # nA / um^2
CAPACITANCE_DENSITY = 60.0  # fF / um^2

CSV_COLUMNS = ("phi_x_rad", "phi_z_rad", "omega01_GHz", "omega02_GHz", "sigma_GHz")


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpectroscopyDataset:
    phi_x: np.ndarray
    phi_z: np.ndarray
    omega01: np.ndarray  # GHz
    omega02: np.ndarray  # GHz, nan where not measured
    sigma: np.ndarray  # GHz

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=float) for k in ("phi_x", "phi_z", "omega01", "omega02", "sigma")]
        n = arrs[0].size
        if any(a.shape != (n,) for a in arrs):
            raise ValueError("dataset columns must be 1-D and equally long")
        for k, a in zip(("phi_x", "phi_z", "omega01", "omega02", "sigma"), arrs):
            object.__setattr__(self, k, a)
        if np.any(~(self.omega01 > 0)):
            raise ValueError("omega01 must be positive")
        ok02 = np.isnan(self.omega02) | (self.omega02 > 0)
        if not np.all(ok02):
            raise ValueError("omega02 must be positive where present")
        if np.any(~(self.sigma > 0)):
            raise ValueError("sigma must be positive")

    def __len__(self):
        return self.phi_x.size

    @property
    def n_residuals(self) -> int:
        return len(self) + int(np.sum(~np.isnan(self.omega02)))

    def without_omega02(self) -> SpectroscopyDataset:
        return SpectroscopyDataset(self.phi_x, self.phi_z, self.omega01, np.full(len(self), np.nan), self.sigma)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in zip(self.phi_x, self.phi_z, self.omega01, self.omega02, self.sigma):
            w.writerow(["" if math.isnan(v) else f"{v:.12g}" for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> SpectroscopyDataset:
        reader = csv.DictReader(io.StringIO(text))
        required = {"phi_x_rad", "phi_z_rad", "omega01_GHz", "sigma_GHz"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(f"spectroscopy CSV needs columns {sorted(required)} (omega02_GHz optional)")
        extra = set(reader.fieldnames) - set(CSV_COLUMNS)
        if extra:
            raise ValueError(f"unknown spectroscopy column(s): {sorted(extra)}")
        cols = {k: [] for k in CSV_COLUMNS}
        for line, row in enumerate(reader, start=2):
            try:
                for k in CSV_COLUMNS:
                    v = (row.get(k) or "").strip()
                    cols[k].append(float(v) if v else math.nan)
            except ValueError as exc:
                raise ValueError(f"line {line}: {exc}") from exc
        return cls(*(np.array(cols[k]) for k in CSV_COLUMNS))


def model_frequencies(params, phi_x, phi_z, model="1d", truncation=None):
    """(omega01, omega02) in GHz at each flux point."""
    basis = make_basis(model, truncation)
    out = np.empty((len(phi_x), 2))
    for i, (px, pz) in enumerate(zip(phi_x, phi_z)):
        e = spectrum_at(params, (px, pz), model, 3, basis.truncation).energies
        out[i] = e[1] - e[0], e[2] - e[0]
    return out


def synthesize_dataset(params, phi_x_list, dz_list, model="1d", truncation=None, noise_ghz=0.0,
                       sigma_ghz=0.01, seed=0, include_omega02=True) -> SpectroscopyDataset:
    """Frequencies on a grid of barrier biases and tilts measured from the nominal symmetry point.

    ``dz_list`` offsets phi_z from phi_d(phi_x) of the circuit; Gaussian noise
    of ``noise_ghz`` is added to every frequency.
    """
    rng = np.random.default_rng(seed)
    px, pz = [], []
    for x in phi_x_list:
        for dz in dz_list:
            px.append(float(x))
            pz.append(float(phi_d(params, x)) + float(dz))
    f = model_frequencies(params, px, pz, model, truncation)
    f = f + noise_ghz * rng.standard_normal(f.shape)
    w02 = f[:, 1] if include_omega02 else np.full(len(px), np.nan)
    return SpectroscopyDataset(np.array(px), np.array(pz), f[:, 0], w02, np.full(len(px), sigma_ghz))


@dataclass(frozen=True)
class _Layout:
    """Maps between the free-parameter vector and CircuitParams."""

    model: str
    area: bool
    d: float
    names: tuple

    @classmethod
    def make(cls, model, area, d):
        if model == "1d":
            names = ("I_z", "C_sh", "alpha", "phi_x_offset", "phi_z_offset")
        elif area:
            names = ("area_um2", "C_sh", "alpha", "phi_x_offset", "phi_z_offset")
        else:
            names = ("I_z", "C_sh", "C_z", "alpha", "phi_x_offset", "phi_z_offset")
        return cls(model, bool(area and model == "2d"), d, names)

    def to_params(self, x) -> CircuitParams:
        v = dict(zip(self.names, map(float, x)))
        if "area_um2" in v:
            a = v.pop("area_um2")
            v["I_z"] = CURRENT_DENSITY * a
            v["C_z"] = CAPACITANCE_DENSITY * a
        return CircuitParams(d=self.d, **v)

    def from_params(self, p: CircuitParams) -> np.ndarray:
        out = []
        for n in self.names:
            if n == "area_um2":
                out.append(p.I_z / CURRENT_DENSITY)
            else:
                out.append(getattr(p, n))
        return np.array(out, dtype=float)

    def scale(self, x) -> np.ndarray:
        return np.array([max(abs(v), 1e-3) if not n.endswith("offset") else 1e-2 for n, v in zip(self.names, x)])


@dataclass(frozen=True, eq=False)
class SpectroscopyFitResult:
    params: CircuitParams
    residual_norm: float  # sqrt of the weighted sum of squared residuals
    uncertainties: dict = field(default_factory=dict)  # parameter name -> 1 sigma
    model: str = "1d"
    names: tuple = ()
    n_starts_converged: int = 0

    def value(self, name: str) -> float:
        if name == "area_um2":
            return self.params.I_z / CURRENT_DENSITY
        return getattr(self.params, name)


def _residual_fn(layout, data, truncation):
    has02 = ~np.isnan(data.omega02)

    def resid(x):
        try:
            p = layout.to_params(x)
        except InvalidParams:
            return np.full(data.n_residuals, 1e6)
        f = model_frequencies(p, data.phi_x, data.phi_z, layout.model, truncation)
        r01 = (f[:, 0] - data.omega01) / data.sigma
        r02 = (f[has02, 1] - data.omega02[has02]) / data.sigma[has02]
        return np.concatenate([r01, r02])

    return resid


def _solve(resid, x0, layout, bounds):
    return least_squares(resid, x0, x_scale=layout.scale(x0), bounds=bounds, method="trf",
                         xtol=1e-12, ftol=1e-12, gtol=1e-12, diff_step=1e-7, max_nfev=400)


def _bounds(layout):
    lo, hi = [], []
    for n in layout.names:
        if n.endswith("offset"):
            lo.append(-0.5)
            hi.append(0.5)
        elif n == "alpha":
            lo.append(1e-3)
            hi.append(0.999)
        else:
            lo.append(1e-6)
            hi.append(np.inf)
    return np.array(lo), np.array(hi)


def fit_spectroscopy(data: SpectroscopyDataset, model: str, guess: CircuitParams, d: float | None = None,
                     truncation=None, area_parametrization: bool = True, n_starts: int = 4,
                     start_spread: float = 0.03, n_boot: int = 20, seed: int = 0,
                     max_reduced_chi2: float = 100.0) -> SpectroscopyFitResult:
    """Weighted least-squares fit of omega01 (and omega02 where present), asymmetry held fixed.

    The 2D fit ties I_z and C_z to one junction area through the design
    current and capacitance densities; pass ``area_parametrization=False`` to
    fit them separately (C_z is then only weakly constrained by spectra).

    Local trust-region searches start from ``guess`` and from ``n_starts - 1``
    seeded perturbations of it (relative spread ``start_spread``, offsets
    jittered by a few mPhi0); the lowest-cost solution wins. Uncertainties
    are the spread of refits to ``n_boot`` parametric resamples (best-fit
    model plus Gaussian noise of the per-point sigma).
    """
    if model not in ("1d", "2d"):
        raise ValueError("model must be '1d' or '2d'")
    d = guess.d if d is None else float(d)
    if model == "2d" and guess.C_z is None:
        raise ValueError("2D fit needs a C_z in the initial guess")
    layout = _Layout.make(model, area_parametrization, d)
    n_par = len(layout.names)
    if data.n_residuals < n_par + 3:
        raise InsufficientData(f"{data.n_residuals} residuals for {n_par} parameters; need at least {n_par + 3}")
    rng = np.random.default_rng(seed)
    resid = _residual_fn(layout, data, truncation)
    bounds = _bounds(layout)
    x0 = np.clip(layout.from_params(guess), bounds[0], bounds[1])
    starts = [x0]
    for _ in range(max(n_starts, 1) - 1):
        jitter = np.where([n.endswith("offset") for n in layout.names],
                          x0 + rng.normal(0, 0.01, n_par),
                          x0 * (1 + start_spread * rng.standard_normal(n_par)))
        starts.append(np.clip(jitter, bounds[0] + 1e-9, np.minimum(bounds[1] - 1e-9, 1e9)))
    best, converged = None, 0
    for x in starts:
        try:
            res = _solve(resid, x, layout, bounds)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if res.status > 0:
            converged += 1
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise FitDiverged("no start converged")
    dof = max(data.n_residuals - n_par, 1)
    chi2 = 2.0 * best.cost
    if not np.all(np.isfinite(best.x)) or chi2 / dof > max_reduced_chi2:
        raise FitDiverged(f"reduced chi^2 {chi2 / dof:.3g} exceeds {max_reduced_chi2}")
    try:
        fitted = layout.to_params(best.x)
    except InvalidParams as exc:
        raise FitDiverged(str(exc)) from exc

    sd = {}
    if n_boot > 1:
        truth = model_frequencies(fitted, data.phi_x, data.phi_z, model, truncation)
        has02 = ~np.isnan(data.omega02)
        draws = []
        for _ in range(n_boot):
            noise = rng.standard_normal(truth.shape) * data.sigma[:, None]
            w02 = np.where(has02, truth[:, 1] + noise[:, 1], np.nan)
            fake = SpectroscopyDataset(data.phi_x, data.phi_z, truth[:, 0] + noise[:, 0], w02, data.sigma)
            r = _solve(_residual_fn(layout, fake, truncation), best.x, layout, bounds)
            draws.append(r.x)
        sd = dict(zip(layout.names, np.std(np.array(draws), axis=0, ddof=1)))
    return SpectroscopyFitResult(fitted, float(math.sqrt(chi2)), sd, model, layout.names, converged)
