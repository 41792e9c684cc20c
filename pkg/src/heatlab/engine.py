"""Deterministic discrete-event core for one gateway and N Class-A nodes."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Optional, Protocol

import numpy as np

from .gateway import Gateway, ReceptionOutcome, ScheduledDownlink, Verdict
from .node import (
    Action,
    ActionSpace,
    EndNode,
    MacConfig,
    ReceiveWindows,
    account_energy,
    apply_downlink_command,
    begin_uplink,
    downlink_received,
    initial_parameters,
    next_uplink_time,
    open_receive_windows,
    receive_energy,
)
from .phy import LinkBudgetParams, TransmissionAttempt

# SeedSequence spawn keys; (epoch, kind, index) keeps streams independent of N.
STREAM_DEPLOY = 0
STREAM_NODE = 1
STREAM_POLICY = 2


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


class EventKind(IntEnum):
    # value doubles as the tie-break rank at equal times
    UPLINK_END = 0
    DOWNLINK_END = 1
    RX1_CLOSE = 2
    RX2_CLOSE = 3
    DOWNLINK_START = 4
    RX1_OPEN = 5
    RX2_OPEN = 6
    UPLINK_START = 7
    METRIC_TICK = 8


@dataclass(order=True)
class Event:
    time: float
    kind: EventKind
    node_id: int
    seq: int
    payload: Any = field(default=None, compare=False)


@dataclass(frozen=True)
class DeploymentConfig:
    n_nodes: int = 32
    radius_m: float = 2000.0
    traffic_delta: float = 2.0
    duration_s: float = 3600.0
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if self.radius_m <= 0:
            raise ValueError("radius_m must be positive")
        if self.traffic_delta <= 0:
            raise ValueError("traffic_delta must be positive")
        if self.duration_s < 0:
            raise ValueError("duration_s must be non-negative")

    @property
    def area_m2(self) -> float:
        return math.pi * self.radius_m ** 2

    @property
    def density(self) -> float:
        """Node density of the deployment, nodes per square metre."""
        return self.n_nodes / self.area_m2


@dataclass
class RunMetrics:
    sent: np.ndarray
    succ: np.ndarray
    energy_joules: np.ndarray
    verdict_counts: dict[str, int]

    @property
    def total_sent(self) -> int:
        return int(self.sent.sum())

    @property
    def total_succ(self) -> int:
        return int(self.succ.sum())

    @property
    def total_energy(self) -> float:
        return float(self.energy_joules.sum())

    @property
    def pdr(self) -> Optional[float]:
        return self.total_succ / self.total_sent if self.total_sent else None

    @property
    def node_pdr(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.sent > 0, self.succ / np.maximum(self.sent, 1), np.nan)

    @property
    def eer(self) -> Optional[float]:
        """Delivered packets per joule of node energy."""
        e = self.total_energy
        return self.total_succ / e if e > 0 else None


@dataclass(frozen=True)
class DecisionContext:
    """What the network server knows when it answers an uplink."""

    time: float
    node: EndNode
    outcome: ReceptionOutcome
    nodes: list
    radius_m: float
    noise_dbm: float


class Controller(Protocol):
    def on_uplink(self, ctx: DecisionContext) -> Optional[Action]: ...


def deploy_nodes(
    config: DeploymentConfig, space: ActionSpace | None = None, mac: MacConfig | None = None
) -> list[EndNode]:
    """Place N nodes uniformly on the disk (r = R sqrt(u), angle uniform)."""
    space = space or ActionSpace()
    mac = mac or MacConfig()
    rng = stream(config.seed, 0, STREAM_DEPLOY)
    draws = rng.random((config.n_nodes, 2))
    nodes = []
    for i, (u, v) in enumerate(draws):
        r = config.radius_m * math.sqrt(u)
        # guard the measure-zero co-located case, path loss is undefined at 0
        r = max(r, 1.0)
        theta = 2.0 * math.pi * v
        usf, ptx, dsf, w = initial_parameters(r, config.radius_m, space, mac)
        nodes.append(EndNode(i, r, usf, ptx, dsf, w, x=r * math.cos(theta), y=r * math.sin(theta)))
    return nodes


@dataclass
class TraceRow:
    time: float
    node: int
    channel: int
    sf: int
    verdict: str
    rssi: float
    sinr: float


class SimulationError(RuntimeError):
    pass


class Simulator:
    """Event loop. ``controller.on_uplink`` is consulted at every uplink end.

    Returning an Action sends it as a downlink command; returning None sends
    nothing and the node just listens through both windows.
    """

    def __init__(
        self,
        config: DeploymentConfig,
        link: LinkBudgetParams | None = None,
        mac: MacConfig | None = None,
        space: ActionSpace | None = None,
        half_duplex: bool = True,
        n_demodulators: int = 8,
        epoch: int = 0,
        metric_interval_s: Optional[float] = None,
    ):
        self.config = config
        self.link = link or LinkBudgetParams()
        self.mac = mac or MacConfig()
        self.space = space or ActionSpace()
        self.epoch = epoch
        self.metric_interval_s = metric_interval_s
        self.nodes = deploy_nodes(config, self.space, self.mac)
        self.gateway = Gateway(self.link, n_demodulators, half_duplex, self.mac.downlink_payload_bytes)
        self._rngs = [stream(config.seed, epoch, STREAM_NODE, n.node_id) for n in self.nodes]
        self._queue: list[Event] = []
        self._seq = 0
        self._attempt_seq = 0
        self.now = 0.0
        self.outcomes: list[ReceptionOutcome] = []
        self.downlinks: list[tuple[ScheduledDownlink, bool]] = []
        self.dropped_commands = 0
        self.ticks: list[tuple[float, int, int, float]] = []
        self._last_processed = -math.inf

    # -- queue ------------------------------------------------------------
    def _push(self, time: float, kind: EventKind, node_id: int, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._queue, Event(time, kind, node_id, self._seq, payload))

    def _schedule_next_uplink(self, node: EndNode, idle_at: float) -> None:
        start = max(node.next_arrival, idle_at)
        node.next_arrival += next_uplink_time(self._rngs[node.node_id], self.config.traffic_delta)
        if start < self.config.duration_s:
            self._push(start, EventKind.UPLINK_START, node.node_id)

    # -- run --------------------------------------------------------------
    def run(self, controller: Optional[Controller] = None, trace: bool = False) -> "RunResult":
        duration = self.config.duration_s
        for node in self.nodes:
            node.next_arrival = next_uplink_time(self._rngs[node.node_id], self.config.traffic_delta)
            self._schedule_next_uplink(node, 0.0)
        if self.metric_interval_s:
            self._push(self.metric_interval_s, EventKind.METRIC_TICK, -1)

        while self._queue:
            ev = heapq.heappop(self._queue)
            if ev.time < self._last_processed:
                raise SimulationError(f"event time went backwards: {ev.time} < {self._last_processed}")
            self._last_processed = ev.time
            self.now = ev.time
            if ev.kind is EventKind.UPLINK_START:
                self._on_uplink_start(self.nodes[ev.node_id])
            elif ev.kind is EventKind.UPLINK_END:
                self._on_uplink_end(self.nodes[ev.node_id], ev.payload, controller)
            elif ev.kind is EventKind.DOWNLINK_START:
                self.gateway.on_downlink_start(ev.time)
            elif ev.kind is EventKind.DOWNLINK_END:
                node, action, delivered = ev.payload
                apply_downlink_command(node, action, delivered)
            elif ev.kind is EventKind.RX1_CLOSE or ev.kind is EventKind.RX2_CLOSE:
                node = self.nodes[ev.node_id]
                joules, idle = ev.payload
                account_energy(node, joules)
                if idle:
                    node.busy = False
                    self._schedule_next_uplink(node, ev.time)
            elif ev.kind is EventKind.METRIC_TICK:
                self._tick(ev.time)
                nxt = ev.time + self.metric_interval_s
                if nxt <= duration:
                    self._push(nxt, EventKind.METRIC_TICK, -1)
        if controller is not None and hasattr(controller, "on_run_end"):
            controller.on_run_end(self.now, self.nodes)
        return RunResult(self.metrics(), self.outcomes if trace else [], list(self.ticks))

    def _on_uplink_start(self, node: EndNode) -> None:
        self._attempt_seq += 1
        attempt = begin_uplink(node, self.now, self._rngs[node.node_id], self._attempt_seq, self.link, self.mac)
        self.gateway.on_transmission_start(attempt, self.now)
        self._push(attempt.end, EventKind.UPLINK_END, node.node_id, attempt)

    def _on_uplink_end(self, node: EndNode, attempt: TransmissionAttempt, controller) -> None:
        outcome = self.gateway.on_transmission_end(attempt, self.now)
        self.outcomes.append(outcome)
        if outcome.delivered:
            node.n_succ += 1
        windows = open_receive_windows(node, self.now, self.link, self.mac)
        action = None
        if controller is not None:
            ctx = DecisionContext(self.now, node, outcome, self.nodes, self.config.radius_m, self.gateway.noise_dbm)
            action = controller.on_uplink(ctx)
        if action is not None and not self.space.contains(action):
            raise SimulationError(f"controller returned out-of-space action {action}")
        self._plan_windows(node, windows, action)

    def _plan_windows(self, node: EndNode, windows: ReceiveWindows, action: Optional[Action]) -> None:
        """Resolve the downlink now and queue the window and energy events."""
        rx_mw = self.mac.rx_power_mw
        dl = None
        if action is not None:
            dl = self.gateway.schedule_downlink(
                node.node_id, node.dsf, node.window_symbols, windows.rx1_open, windows.rx2_open
            )
            if dl is None:
                self.dropped_commands += 1
        got = False
        if dl is not None:
            got = downlink_received(node, dl.sf, self._rngs[node.node_id], self.link, self.mac)
            self.downlinks.append((dl, got))
            self._push(dl.start, EventKind.DOWNLINK_START, node.node_id, dl)
            self._push(dl.end, EventKind.DOWNLINK_END, node.node_id, (node, action, got))

        self._push(windows.rx1_open, EventKind.RX1_OPEN, node.node_id)
        if got and dl.window == 1:
            self._push(dl.end, EventKind.RX1_CLOSE, node.node_id, (receive_energy(dl.end - windows.rx1_open, rx_mw), True))
            return
        self._push(windows.rx1_close, EventKind.RX1_CLOSE, node.node_id, (receive_energy(windows.length, rx_mw), False))
        self._push(windows.rx2_open, EventKind.RX2_OPEN, node.node_id)
        if got and dl.window == 2:
            self._push(dl.end, EventKind.RX2_CLOSE, node.node_id, (receive_energy(dl.end - windows.rx2_open, rx_mw), True))
        else:
            self._push(windows.rx2_close, EventKind.RX2_CLOSE, node.node_id, (receive_energy(windows.length, rx_mw), True))

    def _tick(self, t: float) -> None:
        sent = sum(n.n_sent for n in self.nodes)
        succ = sum(n.n_succ for n in self.nodes)
        energy = sum(n.energy_joules for n in self.nodes)
        self.ticks.append((t, sent, succ, energy))

    def metrics(self) -> RunMetrics:
        counts = {v.value: 0 for v in Verdict}
        for o in self.outcomes:
            counts[o.verdict.value] += 1
        return RunMetrics(
            np.array([n.n_sent for n in self.nodes], dtype=np.int64),
            np.array([n.n_succ for n in self.nodes], dtype=np.int64),
            np.array([n.energy_joules for n in self.nodes], dtype=float),
            counts,
        )


@dataclass
class RunResult:
    metrics: RunMetrics
    outcomes: list[ReceptionOutcome]
    ticks: list


def trace_rows(outcomes: list[ReceptionOutcome]) -> list[TraceRow]:
    return [
        TraceRow(o.time, o.node_id, o.channel, o.sf, o.verdict.value, o.measured_rssi_dbm, o.measured_sinr_db)
        for o in outcomes
    ]
