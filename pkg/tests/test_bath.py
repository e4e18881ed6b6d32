import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from csfq.bath import BathParams, LambShiftTable, gamma, lamb_shift_S

BATH = BathParams()


def test_defaults_and_json_round_trip():
    assert BATH.eta_g2 == 3e-6 and BATH.temperature == 10.0 and BATH.omega_c == 15.0
    assert BathParams.from_json(BATH.to_json()) == BATH
    with pytest.raises(ValueError):
        BathParams.from_json({"eta": 1})
    with pytest.raises(ValueError):
        BathParams(coupling_units="eV")


@settings(max_examples=50)
@given(st.floats(0.01, 300.0))
def test_kms_ratio(omega):
    ratio = gamma(BATH, -omega) / gamma(BATH, omega)
    assert ratio == pytest.approx(math.exp(-BATH.beta * omega), rel=1e-12, abs=1e-300)


def test_gamma_zero_frequency_limit():
    # omega / (1 - exp(-beta omega)) -> 1 / beta
    assert gamma(BATH, 0.0) == pytest.approx(BATH.eta_g2 * 2 * math.pi / BATH.beta, rel=1e-12)
    assert gamma(BATH, 1e-9) == pytest.approx(gamma(BATH, 0.0), rel=1e-6)


def test_gamma_oracle_value():
    w = 2 * math.pi * 5.0
    expect = 3e-6 * 2 * math.pi * w * math.exp(-w / (2 * math.pi * 15)) / (1 - math.exp(-BATH.beta * w))
    assert gamma(BATH, w) == pytest.approx(expect, rel=1e-13)


def test_gamma_nonnegative_and_zero_coupling():
    w = np.linspace(-500, 500, 101)
    assert np.all(gamma(BATH, w) >= 0)
    assert np.all(gamma(BathParams(eta_g2=0.0), w) == 0)


def _lamb_cauchy(bath, omega):
    # independent route: quad's Cauchy weight over a finite range covering the support
    span = abs(omega) + 40 * bath.cutoff
    val, _ = integrate.quad(lambda x: gamma(bath, x), -span, span, weight="cauchy", wvar=omega,
                            limit=2000, epsabs=0, epsrel=1e-11)
    return -val / (2 * math.pi)


@pytest.mark.parametrize("f_ghz", [-20.0, -3.0, 0.5, 4.0, 12.0, 40.0])
def test_lamb_shift_matches_cauchy_quadrature(f_ghz):
    w = 2 * math.pi * f_ghz
    assert lamb_shift_S(BATH, w) == pytest.approx(_lamb_cauchy(BATH, w), rel=1e-6)


def test_lamb_table_matches_direct():
    table = LambShiftTable(BATH)
    w = 2 * math.pi * np.array([-30.0, -1.0, 0.3, 7.7, 90.0])
    direct = np.array([lamb_shift_S(BATH, x) for x in w])
    assert table(w) == pytest.approx(direct, rel=1e-5)
    assert np.all(LambShiftTable(BathParams(eta_g2=0.0))(w) == 0)


def test_lamb_shift_linear_in_coupling():
    w = 2 * math.pi * 3.0
    a = lamb_shift_S(BATH, w)
    b = lamb_shift_S(BathParams(eta_g2=2 * BATH.eta_g2), w)
    assert b == pytest.approx(2 * a, rel=1e-9)


def test_coupling_units_scale():
    assert BathParams().coupling_scale == 1.0
    assert BathParams(coupling_units="rad/ns").coupling_scale == pytest.approx(2 * math.pi)
