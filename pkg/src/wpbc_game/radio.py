"""Free-space link budget and the per-device SNR coefficients.

Every throughput formula in the package consumes two composite numbers per
device: ``kappa`` (backscatter SNR per watt of beacon power) and ``delta``
(harvest-then-transmit SNR budget per watt, before division by the active
time share). Both are built here from line-of-sight Friis gains.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

from wpbc_game.errors import ConfigurationError, DomainError

SPEED_OF_LIGHT = 299_792_458.0  # m/s


def dbi_to_linear(gain_dbi: float) -> float:
    return 10.0 ** (gain_dbi / 10.0)


def noise_power(psd: float, bandwidth: float) -> float:
    """Total noise power (W) from a one-sided psd (W/Hz) over ``bandwidth``."""
    if psd < 0 or bandwidth <= 0:
        raise DomainError("noise psd must be >= 0 and bandwidth > 0")
    return psd * bandwidth


def dbm_to_watt(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


class DeviceKind(str, enum.Enum):
    AWPD = "awpd"  # harvest-then-transmit only
    PWPD = "pwpd"  # backscatter only
    HWPD = "hwpd"  # both

    @property
    def can_backscatter(self) -> bool:
        return self is not DeviceKind.AWPD

    @property
    def can_harvest(self) -> bool:
        return self is not DeviceKind.PWPD


@dataclass(frozen=True)
class RadioEnvironment:
    """Carrier, bandwidths, modulation gap and antenna gains (all linear).

    ``gamma0`` and ``gamma1`` are the two load reflection coefficients of
    the binary FSK backscatter modulator; only ``(gamma0 - gamma1)**2``
    enters the model.
    """

    carrier_frequency: float
    bandwidth_backscatter: float
    bandwidth_active: float
    performance_gap: float
    gamma0: float
    gamma1: float
    gain_pb: float
    gain_device: float
    gain_gateway: float

    def __post_init__(self):
        if not self.carrier_frequency > 0:
            raise ConfigurationError("carrier_frequency must be > 0")
        if not (self.bandwidth_backscatter > 0 and self.bandwidth_active > 0):
            raise ConfigurationError("bandwidths must be > 0")
        if not 0 < self.performance_gap <= 1:
            raise ConfigurationError("performance_gap must lie in (0, 1]")
        if self.gamma0 == self.gamma1:
            raise ConfigurationError("gamma0 and gamma1 must differ")
        for name in ("gain_pb", "gain_device", "gain_gateway"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def reflection_contrast(self) -> float:
        return (self.gamma0 - self.gamma1) ** 2


@dataclass(frozen=True)
class Device:
    """One IoT node.

    Fields that do not apply to ``kind`` are ignored: harvesting efficiency,
    power and energy windows only matter for AWPD/HWPD, the backscatter
    attenuation and SNR floor only for PWPD/HWPD. ``noise_power`` is the
    total receiver noise (W) of this device's link to the gateway.
    """

    kind: DeviceKind
    d_bd: float
    d_dg: float
    noise_power: float
    harvest_efficiency: Optional[float] = None
    backscatter_attenuation: Optional[float] = None
    p_tx_min: float = 1e-6
    p_tx_max: float = 0.1
    e_min: float = 0.0
    e_max: float = 1e-3
    snr_min: float = 10 ** 0.3

    def __post_init__(self):
        object.__setattr__(self, "kind", DeviceKind(self.kind))
        if not (self.d_bd > 0 and self.d_dg > 0):
            raise ConfigurationError("device distances must be > 0")
        if not self.noise_power > 0:
            raise ConfigurationError("noise_power must be > 0")
        if self.kind.can_harvest:
            phi = self.harvest_efficiency
            if phi is None or not 0 < phi <= 1:
                raise ConfigurationError(
                    f"{self.kind.name} needs harvest_efficiency in (0, 1]")
            if not 0 <= self.p_tx_min <= self.p_tx_max:
                raise ConfigurationError("need 0 <= p_tx_min <= p_tx_max")
            if not 0 <= self.e_min <= self.e_max:
                raise ConfigurationError("need 0 <= e_min <= e_max")
        if self.kind.can_backscatter:
            eta = self.backscatter_attenuation
            if eta is None or not 0 < eta <= 1:
                raise ConfigurationError(
                    f"{self.kind.name} needs backscatter_attenuation in (0, 1]")
            if self.snr_min < 0:
                raise ConfigurationError("snr_min must be >= 0")

    @classmethod
    def from_positions(cls, kind, position: Sequence[float],
                       beacon: Sequence[float], gateway: Sequence[float],
                       **fields) -> "Device":
        """Build a device from 2-D coordinates of itself, the PB and the gateway."""
        d_bd = math.dist(position, beacon)
        d_dg = math.dist(position, gateway)
        return cls(kind=kind, d_bd=d_bd, d_dg=d_dg, **fields)


@dataclass(frozen=True)
class LinkCoefficients:
    g_bd: float
    g_dg: float
    kappa: Optional[float] = None
    delta: Optional[float] = None


def friis_gain(g_tx: float, g_rx: float, wavelength: float, distance: float) -> float:
    """Line-of-sight power gain ``g_tx*g_rx*lambda^2 / (4*pi*d)^2``."""
    if not (g_tx > 0 and g_rx > 0 and wavelength > 0 and distance > 0):
        raise DomainError("friis_gain inputs must all be > 0")
    return g_tx * g_rx * wavelength ** 2 / (4.0 * math.pi * distance) ** 2


def link_coefficients(device: Device, env: RadioEnvironment) -> LinkCoefficients:
    lam = env.wavelength
    g_bd = friis_gain(env.gain_pb, env.gain_device, lam, device.d_bd)
    g_dg = friis_gain(env.gain_device, env.gain_gateway, lam, device.d_dg)
    zeta = env.performance_gap
    n0 = device.noise_power
    kappa = delta = None
    if device.kind.can_backscatter:
        eta = device.backscatter_attenuation
        if eta is None:
            raise ConfigurationError("backscatter_attenuation missing")
        kappa = (zeta * eta ** 2 * g_bd * g_dg * env.reflection_contrast
                 * 4.0 / (math.pi ** 2 * n0))
    if device.kind.can_harvest:
        phi = device.harvest_efficiency
        if phi is None:
            raise ConfigurationError("harvest_efficiency missing")
        delta = zeta * phi * g_dg * g_bd / n0
    return LinkCoefficients(g_bd=g_bd, g_dg=g_dg, kappa=kappa, delta=delta)
