"""Backscatter/HTT rates, harvested energy and the network throughput.

The frame is normalised to one second, so time fractions times rates are
bits and watts times time fractions are joules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from wpbc_game.errors import ConfigurationError, DomainError
from wpbc_game.radio import (
    Device,
    DeviceKind,
    LinkCoefficients,
    RadioEnvironment,
    link_coefficients,
)

LN2 = np.log(2.0)


def _log1p_ratio(c, x):
    """``log(1 + c/x)`` for ``x > 0``, also when ``c/x`` overflows."""
    with np.errstate(over="ignore"):
        r = c / x
    out = np.log1p(r)
    big = np.isinf(r)
    if big.any():
        out = np.where(big, np.log(c) - np.log(x), out)
    return out


def xlog_term(x, c):
    """``x * log2(1 + c/x)`` extended continuously by 0 at ``x = 0``.

    Vectorised over numpy arrays; scalars in, scalar out.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    if (x < 0).any() or (c < 0).any():
        raise DomainError("xlog_term needs x >= 0 and c >= 0")
    pos = x > 0
    out = np.where(pos, x * _log1p_ratio(c, np.where(pos, x, 1.0)) / LN2, 0.0)
    return out[()] if out.ndim == 0 else out


def xlog_grad(x, c):
    """Partial derivatives of :func:`xlog_term` w.r.t. ``x`` and ``c``.

    At ``x = 0`` with ``c > 0`` the x-derivative is +inf.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    pos = x > 0
    safe = np.where(pos, x, 1.0)
    dx = np.where(pos, _log1p_ratio(c, safe) - c / (safe + c),
                  np.where(c > 0, np.inf, 0.0)) / LN2
    dc = np.where(pos, safe / (safe + c), 1.0) / LN2
    return dx, dc


def xlog_hess(x, c):
    """Second derivatives (d2/dx2, d2/dxdc, d2/dc2) of :func:`xlog_term` for x > 0."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    s2 = (x + c) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        dxx = -(c ** 2) / (x * s2) / LN2
    dxc = c / s2 / LN2
    dcc = -x / s2 / LN2
    return dxx, dxc, dcc


@dataclass(frozen=True)
class KindArrays:
    """Per-kind parameter columns, ordered as the devices appear in the network."""

    index: np.ndarray
    g_bd: np.ndarray
    g_dg: np.ndarray
    noise: np.ndarray
    kappa: np.ndarray
    delta: np.ndarray
    phi: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    e_min: np.ndarray
    e_max: np.ndarray
    snr_min: np.ndarray

    def __len__(self):
        return len(self.index)


def _kind_arrays(devices, coeffs, kind) -> KindArrays:
    idx = [i for i, d in enumerate(devices) if d.kind is kind]

    def col(get):
        return np.array([float(get(devices[i], coeffs[i])) for i in idx], dtype=float)

    nan = float("nan")
    return KindArrays(
        index=np.array(idx, dtype=int),
        g_bd=col(lambda d, c: c.g_bd),
        g_dg=col(lambda d, c: c.g_dg),
        noise=col(lambda d, c: d.noise_power),
        kappa=col(lambda d, c: c.kappa if c.kappa is not None else nan),
        delta=col(lambda d, c: c.delta if c.delta is not None else nan),
        phi=col(lambda d, c: d.harvest_efficiency if d.harvest_efficiency is not None else nan),
        p_min=col(lambda d, c: d.p_tx_min),
        p_max=col(lambda d, c: d.p_tx_max),
        e_min=col(lambda d, c: d.e_min),
        e_max=col(lambda d, c: d.e_max),
        snr_min=col(lambda d, c: d.snr_min),
    )


@dataclass(frozen=True)
class Network:
    devices: tuple
    env: RadioEnvironment
    coeffs: tuple = field(default=())

    def __post_init__(self):
        if len(self.devices) == 0:
            raise ConfigurationError("a network needs at least one device")
        object.__setattr__(self, "devices", tuple(self.devices))
        if not self.coeffs:
            object.__setattr__(self, "coeffs", tuple(
                link_coefficients(d, self.env) for d in self.devices))
        if len(self.coeffs) != len(self.devices):
            raise ConfigurationError("coefficient table does not match devices")

    @classmethod
    def build(cls, devices: Sequence[Device], env: RadioEnvironment) -> "Network":
        return cls(devices=tuple(devices), env=env)

    @cached_property
    def awpd(self) -> KindArrays:
        return _kind_arrays(self.devices, self.coeffs, DeviceKind.AWPD)

    @cached_property
    def pwpd(self) -> KindArrays:
        return _kind_arrays(self.devices, self.coeffs, DeviceKind.PWPD)

    @cached_property
    def hwpd(self) -> KindArrays:
        return _kind_arrays(self.devices, self.coeffs, DeviceKind.HWPD)

    @property
    def counts(self):
        """(A, P, H)."""
        return len(self.awpd), len(self.pwpd), len(self.hwpd)

    @property
    def n_schedule(self) -> int:
        a, p, h = self.counts
        return p + a + 2 * h


@dataclass(frozen=True)
class Schedule:
    """Time shares of the unit frame.

    ``theta`` (PWPD) and ``tau`` (HWPD) live in the emitting period, ``nu``
    (AWPD) and ``mu`` (HWPD) in the sleeping period.
    """

    theta: np.ndarray
    nu: np.ndarray
    tau: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        for name in ("theta", "nu", "tau", "mu"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.tau) != len(self.mu):
            raise ConfigurationError("tau and mu must have one entry per HWPD")

    @classmethod
    def zeros(cls, net: Network) -> "Schedule":
        a, p, h = net.counts
        return cls(np.zeros(p), np.zeros(a), np.zeros(h), np.zeros(h))

    @classmethod
    def from_vector(cls, net: Network, x) -> "Schedule":
        a, p, h = net.counts
        x = np.asarray(x, dtype=float)
        return cls(x[:p], x[p:p + a], x[p + a:p + a + h], x[p + a + h:])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.nu, self.tau, self.mu])

    @property
    def backscatter_total(self) -> float:
        return float(self.theta.sum() + self.tau.sum())

    @property
    def active_total(self) -> float:
        return float(self.nu.sum() + self.mu.sum())

    def matches(self, net: Network) -> bool:
        a, p, h = net.counts
        return (len(self.theta), len(self.nu), len(self.tau)) == (p, a, h)


def backscatter_rate(kappa, p_s, bandwidth):
    """Achievable backscatter rate ``bandwidth * log2(1 + kappa * p_s)`` (bit/s)."""
    if np.any(np.asarray(p_s) < 0):
        raise DomainError("beacon power must be >= 0")
    return bandwidth * np.log1p(np.asarray(kappa) * p_s) / LN2


def harvested_energy(device: Device, coeffs: LinkCoefficients, beta: float,
                     tau_h: float, p_s: float) -> float:
    """Energy (J) harvested in the emitting period by an AWPD or HWPD."""
    if not device.kind.can_harvest:
        raise ConfigurationError("PWPDs do not harvest energy")
    if device.kind is DeviceKind.AWPD:
        tau_h = 0.0
    if tau_h < 0 or tau_h > beta + 1e-12:
        raise DomainError("need 0 <= tau_h <= beta")
    return max(beta - tau_h, 0.0) * device.harvest_efficiency * coeffs.g_bd * p_s


def harvested_energies(net: Network, sched: Schedule, beta: float, p_s: float):
    """Vector forms: (E_a, E_h)."""
    e_a = beta * net.awpd.phi * net.awpd.g_bd * p_s
    e_h = np.maximum(beta - sched.tau, 0.0) * net.hwpd.phi * net.hwpd.g_bd * p_s
    return e_a, e_h


def transmit_powers(net: Network, sched: Schedule, beta: float, p_s: float):
    """Active transmit powers ``E/nu`` and ``E/mu``; a silent device reports 0.

    A vanishing slot gives an infinite power, which the power cap rejects.
    """
    e_a, e_h = harvested_energies(net, sched, beta, p_s)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        pt_a = np.where(sched.nu > 0, e_a / np.where(sched.nu > 0, sched.nu, 1.0), 0.0)
        pt_h = np.where(sched.mu > 0, e_h / np.where(sched.mu > 0, sched.mu, 1.0), 0.0)
    return pt_a, pt_h


def throughput_backscatter(net: Network, sched: Schedule, p_s: float) -> float:
    omega = net.env.bandwidth_backscatter
    w_p = backscatter_rate(net.pwpd.kappa, p_s, omega)
    w_h = backscatter_rate(net.hwpd.kappa, p_s, omega)
    return float(np.dot(sched.theta, w_p) + np.dot(sched.tau, w_h))


def throughput_active(net: Network, sched: Schedule, beta: float, p_s: float) -> float:
    if np.any(sched.tau > beta + 1e-12):
        raise DomainError("a hybrid backscatter slot exceeds the emitting period")
    omega = net.env.bandwidth_active
    snr_a = net.awpd.delta * beta * p_s
    snr_h = net.hwpd.delta * np.maximum(beta - sched.tau, 0.0) * p_s
    return float(omega * (np.sum(xlog_term(sched.nu, snr_a))
                          + np.sum(xlog_term(sched.mu, snr_h))))


def network_throughput(net: Network, sched: Schedule, beta: float, p_s: float) -> float:
    """Bits delivered per frame: backscatter part plus HTT part."""
    return (throughput_backscatter(net, sched, p_s)
            + throughput_active(net, sched, beta, p_s))
