"""S-curves: right-well probability against the applied tilt, width fits and
the applied-correction sweep."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import OptimizeWarning, brentq, curve_fit

from ..bath import BathParams
from ..circuit import FluxPoint
from ..constants import mphi0_to_rad
from ..dynamics import SolverConfig, evolve_ame, evolve_schrodinger
from ..paths import PathSpec, gaussian_ramp_duration, make_path
from ..readout import ReadoutModel
from .parallel import ordered_map


class FitDiverged(RuntimeError):
    pass


def tanh_model(phi, center, width):
    return 0.5 * (1.0 + np.tanh((np.asarray(phi) - center) / width))


@dataclass(frozen=True)
class WidthFit:
    width: float  # same unit as the input grid (mPhi0 by convention)
    center: float
    width_err: float
    center_err: float
    chi2: float


def fit_scurve_width(phi, p, sigma=None, n_boot: int = 200, seed: int = 0, max_rms: float = 0.1) -> WidthFit:
    """Weighted least-squares fit of P = (1 + tanh((phi - phi0)/w)) / 2.

    Uncertainties are the standard deviation over ``n_boot`` case-resampled
    refits. Raises :class:`FitDiverged` on failure, non-positive width or an
    rms residual above ``max_rms``.
    """
    phi = np.asarray(phi, dtype=float)
    p = np.asarray(p, dtype=float)
    if phi.size < 5 or phi.shape != p.shape:
        raise ValueError("need at least 5 matching (phi, P) points")
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")

    span = float(np.ptp(phi))

    def one_fit(x, y, s, guess):
        try:
            with warnings.catch_warnings():
                # the covariance is not used; exact data make it singular
                warnings.simplefilter("ignore", OptimizeWarning)
                popt, _ = curve_fit(tanh_model, x, y, p0=guess, sigma=s, absolute_sigma=s is not None,
                                    xtol=1e-14, ftol=1e-14, gtol=1e-14, maxfev=20000)
        except (RuntimeError, ValueError) as exc:
            raise FitDiverged(str(exc)) from exc
        return popt

    # initial guess from the crossing of 1/2 and the 25-75% span
    c0 = float(phi[np.argmin(np.abs(p - 0.5))])
    w0 = max(span / 10.0, 1e-6)
    popt = one_fit(phi, p, sigma, (c0, w0))
    center, width = float(popt[0]), float(popt[1])
    if width < 0:  # tanh is odd: a falling curve fits with negative width
        raise FitDiverged("fitted width is negative (curve decreases with phi)")
    resid = p - tanh_model(phi, center, width)
    rms = float(np.sqrt(np.mean(resid**2)))
    if not np.isfinite(rms) or rms > max_rms or width == 0:
        raise FitDiverged(f"s-curve fit failed: rms residual {rms:.3g}, width {width:.3g}")
    chi2 = float(np.sum((resid / sigma) ** 2)) if sigma is not None else float(np.sum(resid**2))

    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        idx = rng.integers(0, phi.size, phi.size)
        if np.unique(phi[idx]).size < 3:
            continue
        try:
            b = one_fit(phi[idx], p[idx], None if sigma is None else sigma[idx], (center, width))
        except FitDiverged:
            continue
        if b[1] > 0:
            boots.append(b)
    boots = np.array(boots) if boots else np.full((1, 2), np.nan)
    return WidthFit(width, center, float(np.std(boots[:, 1])), float(np.std(boots[:, 0])), chi2)


def gaussian_broaden(x, y, width: float, cutoff: float = 5.0):
    """Convolve samples with a unit-area Gaussian of standard deviation ``width``.

    ``x`` must be uniform (non-uniform input is resampled onto a uniform grid
    of the same length). Near the edges the truncated kernel is renormalized.
    Returns (x, y_broadened).
    """
    if not width > 0:
        raise ValueError("width must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return x.copy(), y.copy()
    dx = np.diff(x)
    if not np.allclose(dx, dx[0], rtol=1e-9, atol=0):
        xu = np.linspace(x[0], x[-1], x.size)
        y = np.interp(xu, x, y)
        x = xu
    h = (x[-1] - x[0]) / (x.size - 1)
    half = int(math.ceil(cutoff * width / h))
    offsets = np.arange(-half, half + 1) * h
    kernel = np.exp(-0.5 * (offsets / width) ** 2)
    num = np.convolve(y, kernel, mode="same") if half < x.size else _direct(y, kernel, half)
    den = np.convolve(np.ones_like(y), kernel, mode="same") if half < x.size else _direct(np.ones_like(y), kernel, half)
    return x, num / den


def _direct(y, kernel, half):
    n = y.size
    out = np.zeros(n)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        out[i] = np.dot(y[lo:hi], kernel[lo - i + half: hi - i + half])
    return out


def quasistatic_average(phi_mphi0, clean_x, clean_p, sigma_mphi0: float, n_nodes: int = 401):
    """Average a clean curve over Gaussian static tilt offsets (sd ``sigma_mphi0``).

    The clean curve is interpolated linearly and held constant beyond its ends.
    """
    phi = np.asarray(phi_mphi0, dtype=float)
    if sigma_mphi0 == 0:
        return np.interp(phi, clean_x, clean_p)
    u = np.linspace(-6.0, 6.0, n_nodes)
    w = np.exp(-0.5 * u * u)
    w /= w.sum()
    shifted = phi[:, None] + sigma_mphi0 * u[None, :]
    return np.interp(shifted, clean_x, clean_p) @ w


@dataclass(frozen=True)
class SCurveConfig:
    """One s-curve protocol. Fluxes in rad except where marked mPhi0."""

    phi_x_start: float = 1.2 * math.pi
    phi_x_end: float = 2.0 * math.pi
    rise_time_ns: float = 20.0
    rise_shape: str = "gaussian"
    correction: bool = True
    correction_d: float | None = None
    noise_mphi0: float = 1.0
    shots: int | None = 1000
    n_points: int = 41
    span_widths: float = 4.0  # output grid covers center +- span_widths * width
    search_window_mphi0: tuple = (-40.0, 40.0)
    resolution_mphi0: float = 0.05
    evolution: str = "closed"
    model: str = "1d"
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(truncation=18, rel_tol=1e-5))
    bath: BathParams = field(default_factory=BathParams)
    readout: ReadoutModel = field(default_factory=ReadoutModel)

    def __post_init__(self):
        if self.evolution not in ("closed", "open"):
            raise ValueError("evolution must be 'closed' or 'open'")
        if self.noise_mphi0 < 0:
            raise ValueError("noise must be >= 0")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be positive")
        if self.n_points < 5:
            raise ValueError("need at least 5 points")

    def path_spec(self, phi_z0: float) -> PathSpec:
        t_f = gaussian_ramp_duration(self.rise_time_ns) if self.rise_shape == "gaussian" else self.rise_time_ns / 0.9
        return PathSpec(
            start=FluxPoint(self.phi_x_start, phi_z0),
            end=FluxPoint(self.phi_x_end, phi_z0),
            t_f=t_f,
            rise_shape=self.rise_shape,
            rise_time_ns=self.rise_time_ns if self.rise_shape == "gaussian" else None,
            correction=self.correction,
            correction_d=self.correction_d,
        )

    def replace(self, **changes) -> SCurveConfig:
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SCurveResult:
    phi_z: np.ndarray  # mPhi0
    p_right: np.ndarray  # measured (sampled) or exact
    p_expected: np.ndarray  # noise-averaged probability before shot sampling
    sigma: np.ndarray
    shots: int | None
    fit: WidthFit
    clean_phi: np.ndarray  # mPhi0, samples of the noiseless curve
    clean_p: np.ndarray
    correction: bool

    @property
    def width(self) -> float:
        return self.fit.width

    @property
    def center(self) -> float:
        return self.fit.center

    def rows(self):
        return zip(self.phi_z, self.p_right, self.p_expected, self.sigma)


def clean_probability(params, cfg: SCurveConfig, phi_z0_mphi0: float) -> float:
    path = make_path(cfg.path_spec(mphi0_to_rad(phi_z0_mphi0)), params)
    if cfg.evolution == "closed":
        res = evolve_schrodinger(params, path, cfg.model, cfg.solver)
    else:
        res = evolve_ame(params, path, cfg.model, cfg.bath, cfg.solver)
    return res.p_right(cfg.readout)


def clean_curve(params, cfg: SCurveConfig, tail: float = 1e-3):
    """Sample the noiseless s-curve densely across its transition.

    Locates P = 1/2 by root bracketing, walks outward until P is within
    ``tail`` of 0 and 1, then fills the transition at ``resolution_mphi0``.
    Returns sorted (phi_mphi0, P) samples.
    """
    cache: dict[float, float] = {}

    def f(x):
        x = round(float(x), 9)
        if x not in cache:
            cache[x] = clean_probability(params, cfg, x)
        return cache[x]

    lo, hi = cfg.search_window_mphi0
    if not (f(lo) < 0.5 < f(hi)):
        raise FitDiverged(f"s-curve does not cross 1/2 inside {cfg.search_window_mphi0} mPhi0")
    center = brentq(lambda x: f(x) - 0.5, lo, hi, xtol=cfg.resolution_mphi0 / 4)
    step = cfg.resolution_mphi0
    left = center
    while f(left) > tail and left > lo:
        step *= 2
        left = max(center - step, lo)
    step = cfg.resolution_mphi0
    right = center
    while f(right) < 1 - tail and right < hi:
        step *= 2
        right = min(center + step, hi)
    n = int(min(60, max(8, math.ceil((right - left) / cfg.resolution_mphi0))))
    for x in np.linspace(left, right, n + 1):
        f(x)
    xs = np.array(sorted(cache))
    return xs, np.array([cache[x] for x in xs])


def run_scurve(params, cfg: SCurveConfig = SCurveConfig(), seed: int = 0, n_boot: int = 200) -> SCurveResult:
    """Simulate one s-curve with quasistatic tilt noise and binomial shot noise, and fit it."""
    cx, cp = clean_curve(params, cfg)
    # place the output grid around the noisy transition
    probe = np.linspace(cx[0] - 8 * cfg.noise_mphi0 - 1, cx[-1] + 8 * cfg.noise_mphi0 + 1, 801)
    pp = quasistatic_average(probe, cx, cp, cfg.noise_mphi0)
    mid = float(np.interp(0.5, pp, probe))
    lo_q, hi_q = np.interp([0.1192, 0.8808], pp, probe)  # tanh(+-1) points
    w_est = max(0.5 * (hi_q - lo_q), cfg.resolution_mphi0)
    grid = np.linspace(mid - cfg.span_widths * w_est, mid + cfg.span_widths * w_est, cfg.n_points)
    expected = np.clip(quasistatic_average(grid, cx, cp, cfg.noise_mphi0), 0.0, 1.0)
    if cfg.shots is None:
        measured = expected
        sigma = np.full_like(expected, 1e-3)
    else:
        rng = np.random.default_rng(seed)
        measured = rng.binomial(cfg.shots, expected) / cfg.shots
        # Wilson-style floor keeps weights finite at P = 0 or 1
        sigma = np.sqrt((measured * (1 - measured) + 1.0 / cfg.shots) / cfg.shots)
    fit = fit_scurve_width(grid, measured, sigma, n_boot=n_boot, seed=seed)
    return SCurveResult(grid, measured, expected, sigma, cfg.shots, fit, cx, cp, cfg.correction)


@dataclass(frozen=True)
class CorrectionRow:
    rise_time_ns: float
    d_applied: float | None  # None: uncorrected
    width: float
    width_err: float
    center: float


def scan_correction_parameter(params, d_applied, rise_times=(20.0,), cfg: SCurveConfig = SCurveConfig(),
                              seed: int = 0, n_boot: int = 100, include_uncorrected: bool = True,
                              workers: int = 1) -> list[CorrectionRow]:
    """S-curve width against the asymmetry value used to build the correction."""
    jobs = []
    for rt in rise_times:
        if include_uncorrected:
            jobs.append((rt, None))
        jobs.extend((rt, float(d)) for d in d_applied)

    args = [(params, cfg, rt, d, seed, n_boot) for rt, d in jobs]
    return ordered_map(_correction_job, args, workers)


def _correction_job(args):
    params, cfg, rt, d, seed, n_boot = args
    c = cfg.replace(rise_time_ns=rt, correction=d is not None, correction_d=d)
    r = run_scurve(params, c, seed=seed, n_boot=n_boot)
    return CorrectionRow(rt, d, r.fit.width, r.fit.width_err, r.fit.center)
