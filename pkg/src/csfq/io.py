"""Config loading, CSV emission and run manifests."""

from __future__ import annotations

import datetime as _dt
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed or invalid configuration; maps to exit code 2."""


def format_value(v) -> str:
    """Render one CSV cell: floats with 12 significant digits, bools as 0/1."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        out = f"{v:.12g}"
        return "0" if out == "-0" else out
    return str(v)


def csv_text(header, rows) -> str:
    header = list(header)
    lines = [",".join(header)]
    for row in rows:
        row = list(row)
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        lines.append(",".join(format_value(v) for v in row))
    return "\n".join(lines) + "\n"


def atomic_write(path, text: str) -> Path:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows) -> Path:
    return atomic_write(path, csv_text(header, rows))


def read_csv(path):
    """(header, rows of floats) from a file written by :func:`write_csv`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    rows = [[float(c) if c else math.nan for c in ln.split(",")] for ln in lines[1:] if ln]
    return header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def load_config(path) -> dict:
    """Parse a JSON config, reporting the line and column of syntax errors."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def parse_config(text: str, name: str = "<config>") -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{name}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{name}: top level must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{name}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    return doc


def check_keys(section: dict, allowed, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}; allowed: {sorted(allowed)}")


def grid(spec, where: str) -> np.ndarray:
    """A list of numbers, or {"start", "stop", "num"} for an inclusive linear grid."""
    if isinstance(spec, list):
        try:
            return np.array([float(v) for v in spec])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: grid entries must be numbers") from exc
    if isinstance(spec, dict):
        check_keys(spec, {"start", "stop", "num"}, where)
        try:
            n = int(spec["num"])
            out = np.linspace(float(spec["start"]), float(spec["stop"]), n)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: grid needs numeric start, stop and num") from exc
        if n < 1:
            raise ConfigError(f"{where}: num must be >= 1")
        return out
    raise ConfigError(f"{where}: expected a list or {{start, stop, num}}")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str
    outputs: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    timestamp: str = ""

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "timestamp": self.timestamp,
            "outputs": sorted(self.outputs),
            "results": self.results,
        }

    def write(self, out_dir) -> Path:
        if not self.timestamp:
            self.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        return atomic_write(Path(out_dir) / "manifest.json", dumps(self.to_json()))
