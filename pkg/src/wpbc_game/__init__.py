"""Energy trading and time scheduling for heterogeneous wireless-powered
backscatter IoT networks.

The ISP (leader) buys RF energy from an ESP-operated power beacon (follower)
and schedules active, passive and hybrid devices over a unit frame. The
package computes Stackelberg equilibria with two block-coordinate schemes,
plus the usual comparison baselines and a brute-force grid oracle.
"""

from wpbc_game.radio import (
    Device,
    DeviceKind,
    LinkCoefficients,
    RadioEnvironment,
    friis_gain,
    link_coefficients,
)
from wpbc_game.throughput import Network, Schedule, network_throughput
from wpbc_game.game import (
    CostModel,
    GameOutcome,
    LeaderStrategy,
    check_feasibility,
    follower_best_response,
    leader_utility,
)
from wpbc_game.schemes import ja_solve, pa_solve

__all__ = [
    "CostModel",
    "Device",
    "DeviceKind",
    "GameOutcome",
    "LeaderStrategy",
    "LinkCoefficients",
    "Network",
    "RadioEnvironment",
    "Schedule",
    "check_feasibility",
    "follower_best_response",
    "friis_gain",
    "ja_solve",
    "leader_utility",
    "link_coefficients",
    "network_throughput",
    "pa_solve",
]

__version__ = "0.1.0"
