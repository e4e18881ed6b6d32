"""Command-line entry point: ``csfq spectrum`` and ``csfq run <experiment>``.

Every run writes CSV files plus ``manifest.json`` into ``--out``. Exit codes:
0 on success, 2 for configuration errors, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bath import BathParams, LambShiftNotConverged
from .circuit import DEVICE_1D, DEVICE_2D, CircuitParams, InvalidParams, gap_map, phi_d, spectrum_at
from .constants import mphi0_to_rad
from .dynamics import PositivityViolation, SolverConfig, StepSizeError
from .experiments.asymmetry import GaussianFitFailed, SignalModel, extract_asymmetry
from .experiments.crossing import CrossingScanConfig, run_crossing_scan, scan_idle_times
from .experiments.scurve import FitDiverged, SCurveConfig, run_scurve, scan_correction_parameter
from .experiments.spectroscopy import InsufficientData, SpectroscopyDataset, fit_spectroscopy, synthesize_dataset
from .io import ConfigError, RunManifest, check_keys, grid, load_config, write_csv
from .ising import IsingMapInvalid, schedule_along_path
from .paths import InvalidPath, PathSpec, make_path
from .readout import ReadoutModel

EXPERIMENTS = ("scurve", "crossing", "asymmetry", "fit-spectroscopy", "schedule-map", "idle-scan", "correction-scan")
TOP_LEVEL = {"schema_version", "model", "circuit", "truncation", "levels", "bath", "readout", "solver",
             "spectrum", "scurve", "crossing", "idle_scan", "asymmetry", "spectroscopy", "schedule_map",
             "correction_scan"}
GAP_MAP_HEADER = ("phi_x_rad", "phi_z_rad", "omega01_GHz")

NUMERICAL_ERRORS = (FitDiverged, GaussianFitFailed, PositivityViolation, StepSizeError, LambShiftNotConverged,
                    IsingMapInvalid, np.linalg.LinAlgError)


class Context:
    """Validated view of a config document with command-line overrides applied."""

    def __init__(self, doc: dict, args):
        check_keys(doc, TOP_LEVEL, "config")
        self.doc = doc
        self.args = args
        model = args.model or doc.get("model", "1d")
        if model not in ("1d", "2d"):
            raise ConfigError(f"model must be '1d' or '2d', got {model!r}")
        self.model = model
        try:
            if "circuit" in doc:
                self.params = CircuitParams.from_json(doc["circuit"])
            else:
                self.params = DEVICE_1D if model == "1d" else DEVICE_2D
        except (InvalidParams, TypeError, ValueError) as exc:
            raise ConfigError(f"circuit: {exc}") from exc
        if model == "2d" and self.params.C_z is None:
            raise ConfigError("circuit: the 2d model needs C_z_fF")
        self.truncation = doc.get("truncation")
        if self.truncation is not None and not isinstance(self.truncation, (int, list)):
            raise ConfigError("truncation must be an integer or [n0, n1]")
        try:
            bath = BathParams.from_json(doc.get("bath", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bath: {exc}") from exc
        if args.no_lamb_shift:
            bath = replace(bath, lamb_shift=False)
        self.bath = bath
        ro = doc.get("readout", {})
        check_keys(ro, {"delta_I_nA"}, "readout")
        try:
            self.readout = ReadoutModel(float(ro.get("delta_I_nA", 10.0)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"readout: {exc}") from exc
        self.levels = args.levels if args.levels is not None else doc.get("levels")
        self.seed = args.seed
        self.workers = max(1, args.workers)

    def section(self, name: str, allowed) -> dict:
        sec = self.doc.get(name, {})
        check_keys(sec, allowed, name)
        return sec

    def solver(self, default: SolverConfig) -> SolverConfig:
        sec = self.section("solver", {"rel_tol", "abs_tol", "max_step_ns", "truncation", "n_output"})
        changes = {}
        for key, attr in (("rel_tol", "rel_tol"), ("abs_tol", "abs_tol"), ("max_step_ns", "max_step"),
                          ("n_output", "n_output")):
            if key in sec:
                changes[attr] = type(getattr(default, attr))(sec[key])
        if "truncation" in sec:
            changes["truncation"] = sec["truncation"]
        if self.levels is not None:
            changes["levels"] = int(self.levels)
        try:
            return replace(default, **changes)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"solver: {exc}") from exc


def _num(sec, key, default, where, cast=float):
    v = sec.get(key, default)
    if v is None:
        return None
    try:
        return cast(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}") from exc


# commands

def cmd_spectrum(ctx: Context, out: Path, manifest: RunManifest):
    sec = ctx.section("spectrum", {"phi_x_rad", "phi_z_rad", "slice_levels"})
    px = grid(sec.get("phi_x_rad", {"start": 1.1 * math.pi, "stop": 1.5 * math.pi, "num": 5}), "spectrum.phi_x_rad")
    pz = grid(sec.get("phi_z_rad", {"start": -0.05, "stop": 0.05, "num": 11}), "spectrum.phi_z_rad")
    k = _num(sec, "slice_levels", 5, "spectrum", int)
    if k < 2:
        raise ConfigError("spectrum.slice_levels must be >= 2")
    gm = gap_map(ctx.params, px, pz, ctx.model, ctx.truncation)
    files = [write_csv(out / "gap_map.csv", GAP_MAP_HEADER, gm.rows())]
    rows = []
    for x in px:
        z = float(phi_d(ctx.params, x + ctx.params.phi_x_offset)) - ctx.params.phi_z_offset
        e = spectrum_at(ctx.params, (x, z), ctx.model, k, ctx.truncation).energies
        rows.append((x, z, *(e[1:] - e[0])))
    header = ("phi_x_rad", "phi_z_rad", *(f"E{j}_minus_E0_GHz" for j in range(1, k)))
    files.append(write_csv(out / "spectrum_slices.csv", header, rows))
    manifest.results["min_gap_phi_z_rad"] = gm.argmin_phi_z().tolist()
    return files


SCURVE_KEYS = {"phi_x_start_rad", "phi_x_end_rad", "rise_time_ns", "rise_shape", "noise_mphi0", "shots", "n_points",
               "correction_d", "evolution", "n_boot", "resolution_mphi0"}


def _scurve_config(ctx: Context) -> tuple[SCurveConfig, int]:
    sec = ctx.section("scurve", SCURVE_KEYS)
    base = SCurveConfig()
    try:
        cfg = base.replace(
            phi_x_start=_num(sec, "phi_x_start_rad", base.phi_x_start, "scurve"),
            phi_x_end=_num(sec, "phi_x_end_rad", base.phi_x_end, "scurve"),
            rise_time_ns=_num(sec, "rise_time_ns", base.rise_time_ns, "scurve"),
            rise_shape=sec.get("rise_shape", base.rise_shape),
            noise_mphi0=_num(sec, "noise_mphi0", base.noise_mphi0, "scurve"),
            shots=_num(sec, "shots", base.shots, "scurve", int),
            n_points=_num(sec, "n_points", base.n_points, "scurve", int),
            correction_d=_num(sec, "correction_d", None, "scurve"),
            resolution_mphi0=_num(sec, "resolution_mphi0", base.resolution_mphi0, "scurve"),
            evolution=sec.get("evolution", base.evolution),
            model=ctx.model,
            solver=ctx.solver(base.solver),
            bath=ctx.bath,
            readout=ctx.readout,
        )
    except (TypeError, ValueError, InvalidPath) as exc:
        raise ConfigError(f"scurve: {exc}") from exc
    return cfg, _num(sec, "n_boot", 200, "scurve", int)


def cmd_scurve(ctx, out, manifest):
    cfg, n_boot = _scurve_config(ctx)
    modes = {"on": [True], "off": [False], None: [True, False]}[ctx.args.correction]
    files = []
    header = ("phi_z_mphi0", "P_right", "P_expected", "sigma")
    for corr in modes:
        r = run_scurve(ctx.params, cfg.replace(correction=corr), seed=ctx.seed, n_boot=n_boot)
        tag = "corrected" if corr else "uncorrected"
        files.append(write_csv(out / f"scurve_{tag}.csv", header, r.rows()))
        manifest.results[tag] = {"width_mphi0": r.fit.width, "width_err_mphi0": r.fit.width_err,
                                 "center_mphi0": r.fit.center, "center_err_mphi0": r.fit.center_err}
    return files


def cmd_correction_scan(ctx, out, manifest):
    cfg, n_boot = _scurve_config(ctx)
    sec = ctx.section("correction_scan", {"d_applied", "rise_times_ns", "include_uncorrected"})
    d_list = grid(sec.get("d_applied", {"start": 0.0, "stop": 0.2, "num": 11}), "correction_scan.d_applied")
    rts = grid(sec.get("rise_times_ns", [cfg.rise_time_ns]), "correction_scan.rise_times_ns")
    rows = scan_correction_parameter(ctx.params, d_list, rts, cfg, ctx.seed, n_boot,
                                     bool(sec.get("include_uncorrected", True)), ctx.workers)
    header = ("rise_time_ns", "d_applied", "width_mphi0", "width_err_mphi0", "center_mphi0")
    return [write_csv(out / "correction_scan.csv", header,
                      ((r.rise_time_ns, r.d_applied, r.width, r.width_err, r.center) for r in rows))]


CROSSING_KEYS = {"phi_z0_rad", "phi_x_start_rad", "phi_x_end_rad", "amp_rad", "t_f_ns", "idle_ns", "evolution",
                 "gap_threshold_GHz"}


def _crossing_config(ctx) -> tuple[CrossingScanConfig, np.ndarray]:
    sec = ctx.section("crossing", CROSSING_KEYS)
    base = CrossingScanConfig()
    try:
        cfg = base.replace(
            phi_x_start=_num(sec, "phi_x_start_rad", base.phi_x_start, "crossing"),
            phi_x_end=_num(sec, "phi_x_end_rad", base.phi_x_end, "crossing"),
            amp=_num(sec, "amp_rad", base.amp, "crossing"),
            t_f=_num(sec, "t_f_ns", base.t_f, "crossing"),
            idle_ns=_num(sec, "idle_ns", base.idle_ns, "crossing"),
            evolution=sec.get("evolution", base.evolution),
            gap_threshold=_num(sec, "gap_threshold_GHz", base.gap_threshold, "crossing"),
            model=ctx.model,
            bath=ctx.bath,
            readout=ctx.readout,
            solver=ctx.solver(base.solver),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"crossing: {exc}") from exc
    z0 = grid(sec.get("phi_z0_rad", {"start": -0.8, "stop": -0.44, "num": 145}), "crossing.phi_z0_rad")
    return cfg, z0


def _catalog_rows(catalog):
    return ((c.phi_z0, c.s, c.lower, c.upper, c.gap, c.coupling, c.avoided) for c in catalog)


CATALOG_HEADER = ("phi_z0_rad", "s", "lower", "upper", "gap_GHz", "coupling_nA", "avoided")


def cmd_crossing(ctx, out, manifest):
    cfg, z0 = _crossing_config(ctx)
    res = run_crossing_scan(ctx.params, z0, cfg, workers=ctx.workers)
    header = ("phi_z0_rad", "P_right", *(f"pop_{k}" for k in range(cfg.levels)))
    manifest.results["n_avoided_crossings"] = len(res.avoided)
    return [write_csv(out / "crossing.csv", header, res.rows()),
            write_csv(out / "crossing_catalog.csv", CATALOG_HEADER, _catalog_rows(res.catalog))]


def cmd_idle_scan(ctx, out, manifest):
    cfg, z0 = _crossing_config(ctx)
    sec = ctx.section("idle_scan", {"idle_ns"})
    idles = grid(sec.get("idle_ns", [0.0, 2.0]), "idle_scan.idle_ns")
    results = scan_idle_times(ctx.params, z0, idles, cfg, workers=ctx.workers)
    header = ("phi_z0_rad", *(f"P_right_idle_{i:g}ns" for i in idles))
    rows = zip(z0, *(r.p_right for r in results))
    return [write_csv(out / "idle_scan.csv", header, rows),
            write_csv(out / "crossing_catalog.csv", CATALOG_HEADER, _catalog_rows(results[0].catalog))]


def cmd_asymmetry(ctx, out, manifest):
    sec = ctx.section("asymmetry", {"phi_x_rad", "window_rad", "width_GHz", "noise", "n_resample"})
    px = grid(sec.get("phi_x_rad", {"start": 1.2 * math.pi, "stop": 2.8 * math.pi, "num": 17}), "asymmetry.phi_x_rad")
    window = sec.get("window_rad", [-0.6, 0.6])
    if not (isinstance(window, list) and len(window) == 2):
        raise ConfigError("asymmetry.window_rad must be [low, high]")
    signal = SignalModel(width_ghz=_num(sec, "width_GHz", 0.5, "asymmetry"),
                         noise=_num(sec, "noise", 0.02, "asymmetry"))
    if ctx.model != "1d":
        raise ConfigError("asymmetry synthesis uses the 1d model")
    r = extract_asymmetry(ctx.params, px, tuple(map(float, window)), signal, seed=ctx.seed,
                          n_resample=_num(sec, "n_resample", 50, "asymmetry", int))
    manifest.results.update(d=r.d, d_err=r.d_err, phi_x_offset_rad=r.ox, phi_z_offset_rad=r.oz,
                            phi_x_offset_err_rad=r.ox_err, phi_z_offset_err_rad=r.oz_err,
                            skipped_phi_x_rad=list(r.skipped))
    return [write_csv(out / "asymmetry_points.csv", ("phi_x_rad", "phi_z_center_rad", "center_err_rad"), r.rows())]


def cmd_fit_spectroscopy(ctx, out, manifest):
    sec = ctx.section("spectroscopy", {"data_csv", "synthetic", "guess", "area_parametrization", "n_starts",
                                       "n_boot", "d"})
    if "data_csv" in sec:
        try:
            data = SpectroscopyDataset.from_csv(Path(sec["data_csv"]).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"spectroscopy.data_csv: {exc.strerror}") from exc
        except ValueError as exc:
            raise ConfigError(f"spectroscopy.data_csv: {exc}") from exc
    else:
        syn = sec.get("synthetic", {})
        check_keys(syn, {"phi_x_rad", "dz_rad", "noise_GHz", "sigma_GHz", "include_omega02"}, "spectroscopy.synthetic")
        px = grid(syn.get("phi_x_rad", [1.1 * math.pi, 1.2 * math.pi, 1.3 * math.pi, 1.4 * math.pi]),
                  "spectroscopy.synthetic.phi_x_rad")
        dz = grid(syn.get("dz_rad", {"start": -0.02, "stop": 0.02, "num": 5}), "spectroscopy.synthetic.dz_rad")
        data = synthesize_dataset(ctx.params, px, dz, ctx.model, ctx.truncation,
                                  _num(syn, "noise_GHz", 0.0, "spectroscopy.synthetic"),
                                  _num(syn, "sigma_GHz", 0.01, "spectroscopy.synthetic"), ctx.seed,
                                  bool(syn.get("include_omega02", True)))
        write_csv(out / "spectroscopy_data.csv", ("phi_x_rad", "phi_z_rad", "omega01_GHz", "omega02_GHz",
                                                  "sigma_GHz"),
                  zip(data.phi_x, data.phi_z, data.omega01, data.omega02, data.sigma))
    try:
        guess = CircuitParams.from_json(sec["guess"]) if "guess" in sec else ctx.params
    except (InvalidParams, TypeError, ValueError) as exc:
        raise ConfigError(f"spectroscopy.guess: {exc}") from exc
    try:
        r = fit_spectroscopy(data, ctx.model, guess, d=_num(sec, "d", None, "spectroscopy"),
                             truncation=ctx.truncation,
                             area_parametrization=bool(sec.get("area_parametrization", True)),
                             n_starts=_num(sec, "n_starts", 4, "spectroscopy", int),
                             n_boot=_num(sec, "n_boot", 20, "spectroscopy", int), seed=ctx.seed)
    except InsufficientData as exc:
        raise ConfigError(f"spectroscopy: {exc}") from exc
    rows = [(n, r.value(n), r.uncertainties.get(n, math.nan)) for n in r.names]
    manifest.results.update(residual_norm=r.residual_norm, params=r.params.to_json())
    files = [write_csv(out / "spectroscopy_fit.csv", ("parameter", "value", "sigma"), rows)]
    if "data_csv" not in sec:
        files.append(out / "spectroscopy_data.csv")
    return files


def cmd_schedule_map(ctx, out, manifest):
    sec = ctx.section("schedule_map", {"phi_x_start_rad", "phi_x_end_rad", "phi_z_rad", "t_f_ns", "rise_shape",
                                       "rise_time_ns", "stride", "n_samples"})
    corr = ctx.args.correction != "off"
    try:
        spec = PathSpec((_num(sec, "phi_x_start_rad", 1.2 * math.pi, "schedule_map"),
                         _num(sec, "phi_z_rad", 0.0, "schedule_map")),
                        (_num(sec, "phi_x_end_rad", 2.0 * math.pi, "schedule_map"),
                         _num(sec, "phi_z_rad", 0.0, "schedule_map")),
                        _num(sec, "t_f_ns", 20.0, "schedule_map"), rise_shape=sec.get("rise_shape", "linear"),
                        rise_time_ns=_num(sec, "rise_time_ns", None, "schedule_map"), correction=corr,
                        n_samples=_num(sec, "n_samples", 201, "schedule_map", int))
    except InvalidPath as exc:
        raise ConfigError(f"schedule_map: {exc}") from exc
    path = make_path(spec, ctx.params)
    rows = schedule_along_path(ctx.params, path, ctx.model, ctx.truncation, _num(sec, "stride", 1, "schedule_map", int))
    return [write_csv(out / "schedule.csv", ("s", "A_GHz", "B_GHz", "valid"),
                      ((r.s, r.A, r.B, r.valid) for r in rows))]


COMMANDS = {
    "spectrum": cmd_spectrum,
    "scurve": cmd_scurve,
    "crossing": cmd_crossing,
    "asymmetry": cmd_asymmetry,
    "fit-spectroscopy": cmd_fit_spectroscopy,
    "schedule-map": cmd_schedule_map,
    "idle-scan": cmd_idle_scan,
    "correction-scan": cmd_correction_scan,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1, help="processes for independent scan points")
    common.add_argument("--levels", type=int, default=None, help="levels K kept by the dynamics")
    common.add_argument("--model", choices=("1d", "2d"), default=None)
    common.add_argument("--no-lamb-shift", action="store_true")
    common.add_argument("--correction", choices=("on", "off"), default=None)

    parser = argparse.ArgumentParser(prog="csfq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("spectrum", parents=[common], help="gap map and spectrum slices")
    run = sub.add_parser("run", parents=[common], help="run a virtual experiment")
    run.add_argument("experiment", choices=EXPERIMENTS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    name = args.command if args.command == "spectrum" else args.experiment
    out = Path(args.out)
    try:
        doc = load_config(args.config)
        ctx = Context(doc, args)
        manifest = RunManifest(command=" ".join(["csfq", args.command] + ([name] if args.command == "run" else [])),
                               config=doc, seed=args.seed, version=__version__)
        files = COMMANDS[name](ctx, out, manifest)
        manifest.outputs = [Path(f).name for f in files] + ["manifest.json"]
        manifest.write(out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InvalidParams, InvalidPath) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure in {name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
