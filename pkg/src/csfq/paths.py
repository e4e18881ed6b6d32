"""Time-parametrized flux trajectories and the asymmetry correction."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .circuit import CircuitParams, FluxPoint, phi_d

# Gaussian ramp is truncated at +-TRUNC_SIGMA standard deviations.
TRUNC_SIGMA = 2.0


class InvalidPath(ValueError):
    pass


def _rise_fraction_span() -> float:
    """Width in units of sigma between the 5% and 95% points of the truncated ramp."""
    lo, hi = ndtr(-TRUNC_SIGMA), ndtr(TRUNC_SIGMA)
    u05 = ndtri(lo + 0.05 * (hi - lo))
    return -2.0 * u05


def gaussian_ramp_duration(rise_time_ns: float) -> float:
    """Total duration of a truncated Gaussian ramp with the given 5-95% rise time."""
    sigma = rise_time_ns / _rise_fraction_span()
    return 2.0 * TRUNC_SIGMA * sigma


@dataclass(frozen=True)
class PathSpec:
    """Description of an anneal.

    ``tilt_amplitude`` adds ``amp * t / t_f`` to phi_z on top of the start/end
    interpolation. With ``correction`` on, phi_d(phi_x(t)) computed with
    ``correction_d`` (device d when None) is added to phi_z.
    """

    start: FluxPoint
    end: FluxPoint
    t_f: float
    rise_shape: str = "linear"
    rise_time_ns: float | None = None
    tilt_amplitude: float = 0.0
    correction: bool = False
    correction_d: float | None = None
    idle_after_ns: float = 0.0
    n_samples: int = 1000
    n_idle_samples: int = 50

    def __post_init__(self):
        object.__setattr__(self, "start", FluxPoint(*map(float, self.start)))
        object.__setattr__(self, "end", FluxPoint(*map(float, self.end)))
        if not self.t_f > 0:
            raise InvalidPath(f"t_f must be positive, got {self.t_f}")
        if self.rise_shape not in ("linear", "gaussian"):
            raise InvalidPath(f"rise_shape must be 'linear' or 'gaussian', got {self.rise_shape!r}")
        if self.rise_time_ns is not None:
            if not self.rise_time_ns > 0 or self.rise_time_ns > self.t_f:
                raise InvalidPath("rise_time_ns must lie in (0, t_f]")
            if self.rise_shape == "gaussian" and gaussian_ramp_duration(self.rise_time_ns) > self.t_f * (1 + 1e-12):
                raise InvalidPath(
                    f"gaussian ramp with rise {self.rise_time_ns} ns needs "
                    f"t_f >= {gaussian_ramp_duration(self.rise_time_ns):.6g} ns"
                )
        if not self.idle_after_ns >= 0:
            raise InvalidPath("idle_after_ns must be >= 0")
        if self.n_samples < 2 or self.n_idle_samples < 1:
            raise InvalidPath("sample counts too small")
        vals = [*self.start, *self.end, self.tilt_amplitude]
        if not all(math.isfinite(v) for v in vals):
            raise InvalidPath("fluxes must be finite")

    @property
    def anneal_time(self) -> float:
        """The 5-95% rise time, which is what an 'anneal time' refers to."""
        if self.rise_shape == "gaussian":
            if self.rise_time_ns is not None:
                return self.rise_time_ns
            return self.t_f / (2.0 * TRUNC_SIGMA) * _rise_fraction_span()
        return 0.9 * self.t_f

    @property
    def total_time(self) -> float:
        return self.t_f + self.idle_after_ns

    def replace(self, **changes) -> PathSpec:
        return replace(self, **changes)

    def to_json(self) -> dict:
        return {
            "start": {"phi_x_rad": self.start.phi_x, "phi_z_rad": self.start.phi_z},
            "end": {"phi_x_rad": self.end.phi_x, "phi_z_rad": self.end.phi_z},
            "t_f_ns": self.t_f,
            "rise_shape": self.rise_shape,
            "rise_time_ns": self.rise_time_ns,
            "tilt_amplitude_rad": self.tilt_amplitude,
            "correction": self.correction,
            "correction_d": self.correction_d,
            "idle_after_ns": self.idle_after_ns,
            "n_samples": self.n_samples,
            "n_idle_samples": self.n_idle_samples,
        }

    @classmethod
    def from_json(cls, doc: dict) -> PathSpec:
        known = {"start", "end", "t_f_ns", "rise_shape", "rise_time_ns", "tilt_amplitude_rad",
                 "correction", "correction_d", "idle_after_ns", "n_samples", "n_idle_samples"}
        unknown = set(doc) - known
        if unknown:
            raise InvalidPath(f"unknown path field(s): {sorted(unknown)}")

        def point(p):
            return FluxPoint(float(p["phi_x_rad"]), float(p["phi_z_rad"]))

        return cls(
            start=point(doc["start"]),
            end=point(doc["end"]),
            t_f=float(doc["t_f_ns"]),
            rise_shape=doc.get("rise_shape", "linear"),
            rise_time_ns=doc.get("rise_time_ns"),
            tilt_amplitude=float(doc.get("tilt_amplitude_rad", 0.0)),
            correction=bool(doc.get("correction", False)),
            correction_d=doc.get("correction_d"),
            idle_after_ns=float(doc.get("idle_after_ns", 0.0)),
            n_samples=int(doc.get("n_samples", 1000)),
            n_idle_samples=int(doc.get("n_idle_samples", 50)),
        )


class AnnealPath:
    """Sampled (t, phi_x, phi_z) trajectory.

    Paths built from a :class:`PathSpec` also keep the exact flux function,
    which :meth:`flux` uses; :meth:`sample` always interpolates the samples.
    """

    def __init__(self, t, phi_x, phi_z, spec: PathSpec | None = None, func=None):
        t = np.array(t, dtype=float)
        phi_x = np.array(phi_x, dtype=float)
        phi_z = np.array(phi_z, dtype=float)
        if not (t.shape == phi_x.shape == phi_z.shape) or t.ndim != 1 or t.size < 2:
            raise InvalidPath("t, phi_x, phi_z must be equal-length 1d arrays")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise InvalidPath("times must start at 0 and increase strictly")
        if not (np.all(np.isfinite(phi_x)) and np.all(np.isfinite(phi_z))):
            raise InvalidPath("fluxes must be finite")
        for a in (t, phi_x, phi_z):
            a.flags.writeable = False
        self.t, self.phi_x, self.phi_z = t, phi_x, phi_z
        self.spec = spec
        self._func = func

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    @property
    def anneal_end(self) -> float:
        """End of the anneal proper (start of the idle segment)."""
        return self.spec.t_f if self.spec is not None else self.duration

    def s(self) -> np.ndarray:
        return self.t / self.anneal_end

    def sample(self, t: float) -> FluxPoint:
        if not 0.0 <= t <= self.duration:
            raise InvalidPath(f"t={t} outside [0, {self.duration}]")
        return FluxPoint(float(np.interp(t, self.t, self.phi_x)), float(np.interp(t, self.t, self.phi_z)))

    def flux(self, t: float) -> FluxPoint:
        if self._func is None:
            return self.sample(t)
        t = min(max(t, 0.0), self.duration)
        return self._func(t)

    def with_func(self, func) -> AnnealPath:
        return AnnealPath(self.t, self.phi_x, self.phi_z, self.spec, func)

    def rows(self):
        return zip(self.t, self.phi_x, self.phi_z)


def _time_grid(spec: PathSpec) -> np.ndarray:
    t = np.linspace(0.0, spec.t_f, spec.n_samples)
    if spec.idle_after_ns > 0:
        idle = spec.t_f + np.linspace(0.0, spec.idle_after_ns, spec.n_idle_samples + 1)[1:]
        idle = np.unique(idle[idle > spec.t_f])  # an idle below float resolution adds nothing
        t = np.concatenate([t, idle])
    return t


def _build(spec: PathSpec, profile) -> AnnealPath:
    """``profile(tau)`` maps anneal time in [0, t_f] to progress in [0, 1]."""
    (x0, z0), (x1, z1) = spec.start, spec.end

    def func(t):
        tau = min(t, spec.t_f)
        u = profile(tau)
        return FluxPoint(x0 + (x1 - x0) * u, z0 + (z1 - z0) * u + spec.tilt_amplitude * tau / spec.t_f)

    t = _time_grid(spec)
    pts = np.array([func(ti) for ti in t])
    return AnnealPath(t, pts[:, 0], pts[:, 1], spec, func)


def make_linear_path(spec: PathSpec) -> AnnealPath:
    if spec.rise_shape != "linear":
        raise InvalidPath("make_linear_path needs rise_shape='linear'")
    return _build(spec, lambda tau: tau / spec.t_f)


def gaussian_profile(spec: PathSpec):
    """Truncated cumulative-Gaussian progress function centred in [0, t_f]."""
    rise = spec.rise_time_ns if spec.rise_time_ns is not None else spec.t_f / (2 * TRUNC_SIGMA) * _rise_fraction_span()
    sigma = rise / _rise_fraction_span()
    centre = 0.5 * spec.t_f
    lo, hi = ndtr(-TRUNC_SIGMA), ndtr(TRUNC_SIGMA)

    def profile(tau):
        u = (tau - centre) / sigma
        if u <= -TRUNC_SIGMA:
            return 0.0
        if u >= TRUNC_SIGMA:
            return 1.0
        return float((ndtr(u) - lo) / (hi - lo))

    return profile


def make_gaussian_x_pulse(spec: PathSpec) -> AnnealPath:
    if spec.rise_shape != "gaussian":
        raise InvalidPath("make_gaussian_x_pulse needs rise_shape='gaussian'")
    return _build(spec, gaussian_profile(spec))


def apply_asymmetry_correction(path: AnnealPath, params: CircuitParams) -> AnnealPath:
    """Add phi_d(phi_x) to every phi_z. Not idempotent: applying twice adds 2 phi_d."""
    new_z = path.phi_z + phi_d(params, path.phi_x)
    func = None
    if path._func is not None:
        inner = path._func

        def func(t):
            px, pz = inner(t)
            return FluxPoint(px, pz + float(phi_d(params, px)))

    return AnnealPath(path.t, path.phi_x, new_z, path.spec, func)


def make_path(spec: PathSpec, params: CircuitParams | None = None) -> AnnealPath:
    """Build the path described by ``spec`` including its correction, if requested."""
    path = make_linear_path(spec) if spec.rise_shape == "linear" else make_gaussian_x_pulse(spec)
    if spec.correction:
        if params is None and spec.correction_d is None:
            raise InvalidPath("correction requested without an asymmetry value")
        d = spec.correction_d if spec.correction_d is not None else params.d
        base = params if params is not None else CircuitParams(I_z=1.0, C_sh=1.0, alpha=0.5)
        path = apply_asymmetry_correction(path, base.replace(d=d, phi_x_offset=0.0, phi_z_offset=0.0))
    return path


def sample(path: AnnealPath, t: float) -> FluxPoint:
    return path.sample(t)
