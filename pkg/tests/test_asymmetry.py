import math

import numpy as np
import pytest

from csfq.circuit import DEVICE_1D, phi_d
from csfq.constants import mphi0_to_rad
from csfq.experiments.asymmetry import (
    GaussianFitFailed,
    extract_asymmetry,
    fit_gaussian_center,
    fit_symmetry_points,
    symmetry_point_model,
)

PHI_X = np.linspace(1.2, 1.8, 10) * math.pi


def test_gaussian_center_oracle():
    z = np.linspace(-1, 1, 81)
    c, e = fit_gaussian_center(z, 2.0 * np.exp(-0.5 * ((z - 0.137) / 0.1) ** 2) + 0.3)
    assert c == pytest.approx(0.137, abs=1e-9)
    assert e < 1e-6


def test_gaussian_fit_rejects_peak_outside_window():
    z = np.linspace(-1, 1, 41)
    with pytest.raises(GaussianFitFailed):
        fit_gaussian_center(z, np.exp(-0.5 * ((z - 3.0) / 0.5) ** 2))


def test_model_fit_recovers_exact_points():
    d, ox, oz = 0.08, 0.01, -0.02
    centers = symmetry_point_model(PHI_X, d, ox, oz)
    got = fit_symmetry_points(PHI_X, centers)
    assert got == pytest.approx([d, ox, oz], abs=1e-9)


def test_symmetric_device_centres_on_zero():
    r = extract_asymmetry(DEVICE_1D.replace(d=0.0), PHI_X, seed=2, n_resample=10)
    assert abs(r.d) < 0.005
    assert np.all(np.abs(r.centers) < mphi0_to_rad(1.0))


def test_offsets_recovered_within_one_sigma():
    truth = DEVICE_1D.replace(d=0.102, phi_x_offset=mphi0_to_rad(3.0), phi_z_offset=mphi0_to_rad(-3.0))
    r = extract_asymmetry(truth, PHI_X, seed=0, n_resample=30)
    assert abs(r.d - 0.102) < 0.005
    assert abs(r.ox - truth.phi_x_offset) <= r.ox_err
    assert abs(r.oz - truth.phi_z_offset) <= r.oz_err
    # the fitted curve passes through the true minimum-gap tilt
    true_c = phi_d(truth.replace(phi_x_offset=0.0, phi_z_offset=0.0), PHI_X + truth.phi_x_offset) - truth.phi_z_offset
    assert np.max(np.abs(r.centers - true_c)) < mphi0_to_rad(0.5)


def test_column_input_and_too_few_columns():
    z = np.linspace(-0.3, 0.3, 41)
    cols = [(px, z, np.exp(-0.5 * ((z - 0.01) / 0.05) ** 2)) for px in PHI_X[:3]]
    with pytest.raises(GaussianFitFailed):
        extract_asymmetry(cols, None)
