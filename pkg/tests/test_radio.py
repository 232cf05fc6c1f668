import math

import pytest
from hypothesis import given, strategies as st

from conftest import ENV, make_device
from wpbc_game.errors import ConfigurationError, DomainError
from wpbc_game.radio import (
    SPEED_OF_LIGHT,
    Device,
    DeviceKind,
    RadioEnvironment,
    dbi_to_linear,
    dbm_to_watt,
    friis_gain,
    link_coefficients,
    noise_power,
)


def unit_env(distance=1.0, gap=1.0, gamma0=math.pi / 2):
    """Environment whose Friis gain at ``distance`` is exactly 1 with unit antennas."""
    wavelength = 4.0 * math.pi * distance
    return RadioEnvironment(SPEED_OF_LIGHT / wavelength, 1.0, 1.0, gap, gamma0, 0.0,
                            1.0, 1.0, 1.0)


def test_friis_unit_gain():
    assert friis_gain(1.0, 1.0, 4.0 * math.pi, 1.0) == pytest.approx(1.0, rel=1e-15)


def test_friis_hand_value():
    assert friis_gain(3.981, 3.981, 0.125, 2.0) == pytest.approx(3.92e-4, rel=2e-3)


@given(st.floats(0.1, 100.0), st.floats(1e-3, 10.0), st.floats(0.01, 1.0))
def test_friis_inverse_square(d, g, lam):
    assert friis_gain(g, g, lam, 2 * d) / friis_gain(g, g, lam, d) == pytest.approx(0.25, rel=1e-12)


@pytest.mark.parametrize("args", [(0, 1, 1, 1), (1, -1, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)])
def test_friis_rejects_nonpositive(args):
    with pytest.raises(DomainError):
        friis_gain(*args)


def test_unit_conversions():
    assert dbi_to_linear(0.0) == 1.0
    assert dbi_to_linear(10.0) == pytest.approx(10.0)
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert noise_power(1e-20, 1e6) == pytest.approx(1e-14)


def test_kappa_all_factors_cancel():
    dev = Device("pwpd", 1.0, 1.0, 1.0, backscatter_attenuation=1.0)
    lc = link_coefficients(dev, unit_env())
    assert lc.g_bd == pytest.approx(1.0) and lc.g_dg == pytest.approx(1.0)
    assert lc.kappa == pytest.approx(1.0, rel=1e-12)
    assert lc.delta is None


def test_delta_direct_product():
    d = 1.0 / math.sqrt(1e-3)  # unit-gain env scaled so that g = 1e-3 at this distance
    env = unit_env(distance=1.0, gap=0.5)
    dev = Device("awpd", d, d, 1e-12, harvest_efficiency=0.6)
    lc = link_coefficients(dev, env)
    assert lc.g_bd == pytest.approx(1e-3)
    assert lc.delta == pytest.approx(3e5, rel=1e-9)
    assert lc.kappa is None


def test_hybrid_has_both_coefficients():
    lc = link_coefficients(make_device("hwpd"), ENV)
    assert lc.kappa > 0 and lc.delta > 0


@pytest.mark.parametrize("fields", [
    dict(kind="awpd", d_bd=-1.0, d_dg=1.0, noise_power=1e-12, harvest_efficiency=0.5),
    dict(kind="awpd", d_bd=1.0, d_dg=1.0, noise_power=1e-12),
    dict(kind="pwpd", d_bd=1.0, d_dg=1.0, noise_power=1e-12),
    dict(kind="hwpd", d_bd=1.0, d_dg=1.0, noise_power=1e-12, harvest_efficiency=0.5,
         backscatter_attenuation=1.5),
    dict(kind="awpd", d_bd=1.0, d_dg=1.0, noise_power=1e-12, harvest_efficiency=0.5,
         e_min=2e-3, e_max=1e-3),
    dict(kind="xwpd", d_bd=1.0, d_dg=1.0, noise_power=1e-12),
])
def test_device_validation(fields):
    with pytest.raises((ConfigurationError, ValueError)):
        Device(**fields)


def test_inapplicable_fields_are_ignored():
    dev = Device("pwpd", 1.0, 1.0, 1e-12, backscatter_attenuation=0.5, e_min=5.0, e_max=1.0)
    assert dev.kind is DeviceKind.PWPD


def test_environment_validation():
    with pytest.raises(ConfigurationError):
        RadioEnvironment(2.4e9, 1e4, 1e7, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        RadioEnvironment(2.4e9, 1e4, 1e7, 1.5, 1.0, 0.0, 1.0, 1.0, 1.0)


def test_from_positions():
    dev = Device.from_positions("awpd", (3.0, 4.0), (0.0, 0.0), (3.0, 0.0),
                                noise_power=1e-12, harvest_efficiency=0.5)
    assert dev.d_bd == pytest.approx(5.0) and dev.d_dg == pytest.approx(4.0)
