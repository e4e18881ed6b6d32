import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csfq.experiments.scurve import (
    FitDiverged,
    SCurveConfig,
    fit_scurve_width,
    gaussian_broaden,
    quasistatic_average,
    tanh_model,
)


def test_noiseless_tanh_recovered():
    phi = np.linspace(-10, 10, 41)
    fit = fit_scurve_width(phi, tanh_model(phi, 0.7, 2.58), n_boot=20)
    assert fit.width == pytest.approx(2.58, abs=1e-6)
    assert fit.center == pytest.approx(0.7, abs=1e-6)


def test_binomial_width_within_three_sigma():
    rng = np.random.default_rng(3)
    phi = np.linspace(-6, 6, 41)
    p = rng.binomial(1000, tanh_model(phi, 0.0, 1.38)) / 1000
    sigma = np.sqrt((p * (1 - p) + 1e-3) / 1000)
    fit = fit_scurve_width(phi, p, sigma, n_boot=200, seed=1)
    assert abs(fit.width - 1.38) < 3 * fit.width_err
    assert fit.width_err < 0.1


def test_falling_curve_rejected():
    phi = np.linspace(-5, 5, 21)
    with pytest.raises(FitDiverged):
        fit_scurve_width(phi, 1 - tanh_model(phi, 0, 1), n_boot=0)


def test_flip_symmetry():
    # mirroring the curve through its centre swaps P and 1 - P
    phi = np.linspace(-8, 8, 41)
    p = tanh_model(phi, 0.0, 1.7)
    a = fit_scurve_width(phi, p, n_boot=0)
    b = fit_scurve_width(-phi[::-1], 1 - p[::-1], n_boot=0)
    assert a.width == pytest.approx(b.width, rel=1e-9)


def test_broaden_constant_is_unchanged():
    x = np.linspace(0, 1, 101)
    _, y = gaussian_broaden(x, np.full(101, 0.3), 0.05)
    assert np.allclose(y, 0.3, atol=1e-14)


def test_broaden_narrow_is_identity():
    x = np.linspace(0, 1, 101)
    y = np.sin(3 * x)
    _, out = gaussian_broaden(x, y, 1e-4)
    assert np.allclose(out, y, atol=1e-12)


def test_broaden_preserves_area_in_the_bulk():
    x = np.linspace(-20, 20, 4001)
    y = np.exp(-x**2)
    _, out = gaussian_broaden(x, y, 0.5)
    h = x[1] - x[0]
    assert out.sum() * h == pytest.approx(y.sum() * h, rel=1e-9)
    # Gaussian widths add in quadrature, up to the O(h^2) kernel sampling error
    var = np.sum(x**2 * out) / np.sum(out)
    assert var == pytest.approx(0.5 + 0.25, rel=1e-4)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 5.0), st.floats(0.1, 3.0))
def test_quasistatic_noise_widens_a_tanh(w, s):
    # a Gaussian-averaged tanh keeps its midpoint and gets wider
    x = np.linspace(-60, 60, 4001)
    clean = tanh_model(x, 0.0, w)
    grid = np.linspace(-4 * w, 4 * w, 41)
    p = quasistatic_average(grid, x, clean, s)
    assert quasistatic_average(np.array([0.0]), x, clean, s)[0] == pytest.approx(0.5, abs=1e-9)
    fit = fit_scurve_width(grid, p, n_boot=0)
    assert fit.width > w


def test_zero_noise_reproduces_clean_curve():
    x = np.linspace(-5, 5, 11)
    y = tanh_model(x, 0, 1)
    assert np.array_equal(quasistatic_average(x, x, y, 0.0), y)


def test_config_validation():
    with pytest.raises(ValueError):
        SCurveConfig(evolution="wrong")
    with pytest.raises(ValueError):
        SCurveConfig(noise_mphi0=-1)
    spec = SCurveConfig().path_spec(0.0)
    assert spec.anneal_time == pytest.approx(20.0)
