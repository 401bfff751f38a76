import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from dpw_forge.errors import PoleError
from dpw_forge.weierstrass import (
    TorusData,
    curly_i,
    half_period_agm,
    torus_half_period,
    weierstrass_p,
    weierstrass_p_lattice_sum,
)

T = TorusData()


def test_half_period():
    # direct quadrature of the defining integral, split at 2 to tame the endpoint singularity
    head, _ = integrate.quad(lambda t: 1 / math.sqrt(4 * t ** 3 - 4 * t), 1, 2, limit=200)
    tail, _ = integrate.quad(lambda t: 1 / math.sqrt(4 * t ** 3 - 4 * t), 2, np.inf, limit=200)
    assert torus_half_period() == pytest.approx(head + tail, rel=1e-8)
    assert torus_half_period() == pytest.approx(1.311029, abs=1e-6)
    assert half_period_agm() == pytest.approx(torus_half_period(), rel=1e-14)
    assert T.omega2 / T.omega1 == 1j


def test_special_values():
    assert weierstrass_p(T.omega1) == pytest.approx(1, abs=1e-12)
    assert weierstrass_p(T.omega2) == pytest.approx(-1, abs=1e-12)
    assert weierstrass_p(T.omega3) == pytest.approx(0, abs=1e-12)
    assert weierstrass_p(T.omega3, order=4) == pytest.approx(0, abs=1e-10)


def test_pole_error():
    with pytest.raises(PoleError):
        weierstrass_p(2 * T.omega1)
    with pytest.raises(ValueError):
        weierstrass_p(0.3, order=5)


def test_against_lattice_sum():
    for z in (0.3 + 0.2j, 0.9 - 0.4j, 1.7 + 1.1j):
        assert weierstrass_p(z) == pytest.approx(weierstrass_p_lattice_sum(z), rel=1e-3)


def test_derivatives_by_finite_differences():
    z, h = 0.41 + 0.27j, 1e-5
    for k in range(4):
        fd = (weierstrass_p(z + h, order=k) - weierstrass_p(z - h, order=k)) / (2 * h)
        assert weierstrass_p(z, order=k + 1) == pytest.approx(fd, rel=1e-7)


def test_curly_i_odd_and_square_integral_positive():
    assert abs(curly_i(0.0)) < 1e-9
    val, _ = integrate.quad(lambda x: float(np.real(curly_i(x) ** 2)), 0, 2 * T.omega1, limit=200)
    assert val > 0


def test_rescaled_torus():
    t2 = TorusData(2.0)
    s = T.omega1 / 2.0
    z = 0.5 + 0.3j
    assert weierstrass_p(z, t2) == pytest.approx(s ** 2 * weierstrass_p(z * s), rel=1e-12)
    assert weierstrass_p(t2.omega1, t2) == pytest.approx(s ** 2, rel=1e-12)


cell = st.complex_numbers(max_magnitude=2.5, allow_nan=False, allow_infinity=False).filter(
    lambda z: np.min(np.abs(T.reduce(z))) > 0.05
)


@settings(max_examples=40, deadline=None)
@given(cell)
def test_differential_equation_and_symmetries(z):
    p, dp = weierstrass_p(z), weierstrass_p(z, order=1)
    scale = 1 + abs(p) ** 3
    assert abs(dp * dp - 4 * p * (p * p - 1)) <= 1e-9 * scale
    assert weierstrass_p(-z) == pytest.approx(p, rel=1e-9, abs=1e-9)
    assert weierstrass_p(1j * z) == pytest.approx(-p, rel=1e-9, abs=1e-9)
    assert weierstrass_p(z + 2 * T.omega1) == pytest.approx(p, rel=1e-9, abs=1e-9)
    assert weierstrass_p(z, order=4) == pytest.approx(120 * p ** 3 - 72 * p, rel=1e-9, abs=1e-9)
