"""Shared instance builders for the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from wpbc_game.game import CostModel
from wpbc_game.radio import Device, RadioEnvironment, dbi_to_linear
from wpbc_game.throughput import Network

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

GAIN = dbi_to_linear(6.0)
ENV = RadioEnvironment(2.4e9, 1e4, 1e7, 0.5, 1.0, 0.0, GAIN, GAIN, GAIN)
COST = CostModel(a_m=5.0, b_m=1.0, price_per_bit=1.0, revenue_unit_bits=1e6)


def make_device(kind, d_bd=5.0, d_dg=5.0, noise=1e-12, **fields) -> Device:
    if kind != "pwpd":
        fields.setdefault("harvest_efficiency", 0.6)
    if kind != "awpd":
        fields.setdefault("backscatter_attenuation", 0.5)
    return Device(kind, d_bd, d_dg, noise, **fields)


def make_network(counts=(1, 1, 1), d_bd=5.0, d_dg=5.0, env=ENV, **fields) -> Network:
    """Network with ``counts = (awpd, pwpd, hwpd)`` devices at one placement."""
    devices = [make_device(kind, d_bd, d_dg, **fields)
               for kind, n in zip(("awpd", "pwpd", "hwpd"), counts) for _ in range(n)]
    return Network.build(devices, env)


def random_network(rng: np.random.Generator, n_min=3, n_max=9) -> Network:
    """3 to 9 devices, at least one per kind, each at its own random placement."""
    n = int(rng.integers(n_min, n_max + 1))
    extra = rng.multinomial(n - 3, [1 / 3] * 3)
    devices = []
    for kind, k in zip(("awpd", "pwpd", "hwpd"), 1 + extra):
        for _ in range(k):
            devices.append(make_device(
                kind, d_bd=float(rng.uniform(2.0, 15.0)), d_dg=float(rng.uniform(2.0, 15.0)),
                harvest_efficiency=float(rng.uniform(0.3, 0.9)),
                backscatter_attenuation=float(rng.uniform(0.3, 0.9)),
                e_min=float(rng.choice([0.0, 1e-6, 5e-6]))))
    return Network.build(devices, ENV)


def random_cost(rng: np.random.Generator) -> CostModel:
    return CostModel(a_m=float(rng.uniform(1.0, 10.0)), b_m=float(rng.uniform(0.0, 2.0)),
                     price_per_bit=float(rng.uniform(0.1, 1.0)), revenue_unit_bits=1e6)


@pytest.fixture
def net111() -> Network:
    return make_network()


@pytest.fixture
def cost() -> CostModel:
    return COST


# ----------------------------------------------------------------------------
# acceptance report: one PASS/FAIL line per criterion in the terminal summary

_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records a result line, then asserts ``ok``."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(number: int, ok: bool, detail: str) -> None:
        lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        print(lines[number])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
