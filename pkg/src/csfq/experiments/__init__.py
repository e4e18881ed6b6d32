"""Virtual experiments built on the circuit, path and dynamics modules."""

from .asymmetry import AsymmetryFitResult, GaussianFitFailed, extract_asymmetry, fit_gaussian_center
from .crossing import (
    AvoidedCrossing,
    CrossingScanConfig,
    CrossingScanResult,
    align_features,
    detect_features,
    detect_steps,
    end_of_anneal_crossings,
    locate_avoided_crossings,
    non_monotonic_excess,
    peak_prominences,
    run_crossing_scan,
    scan_idle_times,
)
from .scurve import (
    FitDiverged,
    SCurveConfig,
    SCurveResult,
    fit_scurve_width,
    gaussian_broaden,
    run_scurve,
    scan_correction_parameter,
)
from .spectroscopy import (
    InsufficientData,
    SpectroscopyDataset,
    SpectroscopyFitResult,
    fit_spectroscopy,
    synthesize_dataset,
)
from .temperature import effective_temperature

__all__ = [
    "AsymmetryFitResult", "AvoidedCrossing", "CrossingScanConfig", "CrossingScanResult", "FitDiverged",
    "GaussianFitFailed", "InsufficientData", "SCurveConfig", "SCurveResult", "SpectroscopyDataset",
    "SpectroscopyFitResult", "align_features", "detect_features", "detect_steps", "effective_temperature", "end_of_anneal_crossings",
    "extract_asymmetry", "fit_gaussian_center", "fit_scurve_width", "fit_spectroscopy", "gaussian_broaden",
    "locate_avoided_crossings", "non_monotonic_excess", "peak_prominences", "run_crossing_scan", "run_scurve",
    "scan_correction_parameter", "scan_idle_times", "synthesize_dataset",
]
