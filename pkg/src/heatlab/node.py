"""Class-A end-node behaviour: Poisson ALOHA uplinks, RX1/RX2 windows, energy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .phy import (
    SF_PROFILES,
    SF_RANGE,
    LinkBudgetParams,
    TransmissionAttempt,
    compute_rssi,
    draw_fading,
    path_loss,
    symbol_time,
    time_on_air,
)


class Action(NamedTuple):
    """Next-cycle parameters: uplink SF, transmit power, downlink SF, window size."""

    usf: int
    ptx_dbm: float
    dsf: int
    window_symbols: int


class NotInSetError(ValueError):
    pass


@dataclass(frozen=True)
class ActionSpace:
    power_set: tuple[float, ...] = (2.0, 5.0, 8.0, 11.0, 14.0, 17.0)
    window_set: tuple[int, ...] = (8, 16, 32, 64)
    sf_set: tuple[int, ...] = SF_RANGE

    def __post_init__(self):
        for name in ("power_set", "window_set", "sf_set"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"{name} must not be empty")
            if list(values) != sorted(set(values)):
                raise ValueError(f"{name} must be sorted ascending without duplicates")
            object.__setattr__(self, name, values)
        bad = [sf for sf in self.sf_set if sf not in SF_RANGE]
        if bad:
            raise ValueError(f"spreading factors must lie in 7..12, got {bad}")

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (len(self.sf_set), len(self.power_set), len(self.sf_set), len(self.window_set))

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.sizes))

    def indices(self, action: Action) -> tuple[int, int, int, int]:
        try:
            return (
                self.sf_set.index(action[0]),
                self.power_set.index(action[1]),
                self.sf_set.index(action[2]),
                self.window_set.index(action[3]),
            )
        except ValueError:
            raise NotInSetError(f"{tuple(action)} is outside the action space") from None

    def action(self, indices: Sequence[int]) -> Action:
        i, j, k, m = (int(v) for v in indices)
        return Action(self.sf_set[i], self.power_set[j], self.sf_set[k], self.window_set[m])

    def contains(self, action: Action) -> bool:
        try:
            self.indices(action)
        except NotInSetError:
            return False
        return True

    def joint_index(self, indices: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(int(v) for v in indices), self.sizes))

    def from_joint(self, joint: int) -> tuple[int, int, int, int]:
        return tuple(int(v) for v in np.unravel_index(joint, self.sizes))

    def all_indices(self) -> np.ndarray:
        """Every joint action as an (n_joint, 4) index array in ravel order."""
        grids = np.meshgrid(*[np.arange(n) for n in self.sizes], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True)
class MacConfig:
    payload_bytes: int = 20
    downlink_payload_bytes: int = 12
    pa_efficiency: float = 0.25
    rx_power_mw: float = 36.3
    n_channels: int = 8
    rx1_delay_s: float = 1.0
    rx2_delay_s: float = 2.0
    gateway_tx_dbm: float = 19.15
    initial_ptx_dbm: float = 14.0
    initial_window: int = 16


@dataclass
class EndNode:
    node_id: int
    distance_m: float
    usf: int
    ptx_dbm: float
    dsf: int
    window_symbols: int
    x: float = 0.0
    y: float = 0.0
    energy_joules: float = 0.0
    n_sent: int = 0
    n_succ: int = 0
    busy: bool = False
    pending: int = 0
    next_arrival: float = 0.0

    @property
    def params(self) -> Action:
        return Action(self.usf, self.ptx_dbm, self.dsf, self.window_symbols)


@dataclass(frozen=True)
class ReceiveWindows:
    rx1_open: float
    rx1_close: float
    rx2_open: float
    rx2_close: float

    @property
    def length(self) -> float:
        return self.rx1_close - self.rx1_open


def initial_parameters(distance_m: float, radius_m: float, space: ActionSpace, mac: MacConfig) -> Action:
    """Distance-banded start: the innermost sixth of the disk gets SF7, the outer SF12."""
    band = min(int(6.0 * distance_m / radius_m), 5)
    sf = min(SF_RANGE[band], space.sf_set[-1])
    sf = max(sf, space.sf_set[0])
    if sf not in space.sf_set:
        sf = min(space.sf_set, key=lambda v: abs(v - sf))
    ptx = min(space.power_set, key=lambda p: abs(p - mac.initial_ptx_dbm))
    window = min(space.window_set, key=lambda w: abs(w - mac.initial_window))
    return Action(sf, ptx, sf, window)


def next_uplink_time(rng: np.random.Generator, delta_per_min: float) -> float:
    """Exponential inter-arrival gap (seconds) for delta packets per minute."""
    if delta_per_min <= 0:
        raise ValueError("traffic intensity must be positive")
    return float(rng.exponential(60.0 / delta_per_min))


def transmit_energy(ptx_dbm: float, airtime_s: float, pa_efficiency: float) -> float:
    return 10.0 ** (ptx_dbm / 10.0) / pa_efficiency * airtime_s / 1000.0


def receive_energy(duration_s: float, rx_power_mw: float) -> float:
    return rx_power_mw * max(duration_s, 0.0) / 1000.0


def account_energy(node: EndNode, joules: float) -> float:
    if joules < 0:
        raise ValueError("energy increments are non-negative")
    node.energy_joules += joules
    return node.energy_joules


def begin_uplink(
    node: EndNode,
    now: float,
    rng: np.random.Generator,
    attempt_id: int,
    link: LinkBudgetParams,
    mac: MacConfig,
) -> TransmissionAttempt:
    if node.busy:
        raise RuntimeError(f"node {node.node_id} asked to transmit while busy")
    channel = int(rng.integers(mac.n_channels))
    zeta = draw_fading(rng)
    rssi = compute_rssi(node.ptx_dbm, link.antenna_gain, path_loss(link.carrier_hz, node.distance_m), zeta)
    airtime = time_on_air(
        node.usf, mac.payload_bytes, link.preamble_symbols, link.bandwidth_hz, link.coding_rate
    )
    node.busy = True
    node.n_sent += 1
    account_energy(node, transmit_energy(node.ptx_dbm, airtime, mac.pa_efficiency))
    return TransmissionAttempt(
        attempt_id, node.node_id, channel, node.usf, node.ptx_dbm, now, now + airtime, rssi
    )


def open_receive_windows(node: EndNode, uplink_end: float, link: LinkBudgetParams, mac: MacConfig) -> ReceiveWindows:
    length = node.window_symbols * symbol_time(node.dsf, link.bandwidth_hz)
    rx1 = uplink_end + mac.rx1_delay_s
    # long windows at high DSF would otherwise overlap RX2
    rx2 = max(uplink_end + mac.rx2_delay_s, rx1 + length)
    return ReceiveWindows(rx1, rx1 + length, rx2, rx2 + length)


def apply_downlink_command(node: EndNode, action: Action, delivered: bool) -> EndNode:
    if delivered:
        node.usf, node.ptx_dbm, node.dsf, node.window_symbols = (
            int(action.usf),
            float(action.ptx_dbm),
            int(action.dsf),
            int(action.window_symbols),
        )
    return node


def downlink_received(
    node: EndNode, dsf: int, rng: np.random.Generator, link: LinkBudgetParams, mac: MacConfig
) -> bool:
    """Node-side demodulation of a downlink: sensitivity check with its own fade.

    Downlinks use dedicated channels in CN470, so only the link budget applies.
    """
    zeta = draw_fading(rng)
    rssi = compute_rssi(mac.gateway_tx_dbm, link.antenna_gain, path_loss(link.carrier_hz, node.distance_m), zeta)
    return rssi >= SF_PROFILES[dsf].sensitivity_dbm
