"""MDP facade over the simulator: encodings, reward, history, replay buffers."""

from __future__ import annotations

import bisect
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

from .engine import DecisionContext, DeploymentConfig, Simulator
from .node import Action, ActionSpace, EndNode

REWARD_EPS = 1e-6
BUFFER_FORMAT = "heatlab-replay"
BUFFER_VERSION = "1"


class NotReady(RuntimeError):
    """Raised when a buffer cannot yet provide a global batch."""


class BufferFormatError(ValueError):
    pass


# -- states and actions -----------------------------------------------------
@dataclass(frozen=True)
class NodeState:
    """Distance (m) plus the parameters the node is currently using."""

    d: float
    usf: int
    ptx_dbm: float
    dsf: int
    window_symbols: int

    @classmethod
    def of(cls, node: EndNode) -> "NodeState":
        return cls(float(node.distance_m), int(node.usf), float(node.ptx_dbm), int(node.dsf), int(node.window_symbols))

    @property
    def params(self) -> Action:
        return Action(self.usf, self.ptx_dbm, self.dsf, self.window_symbols)

    def as_list(self) -> list:
        return [self.d, self.usf, self.ptx_dbm, self.dsf, self.window_symbols]


def state_dim(space: ActionSpace) -> int:
    return 1 + sum(space.sizes)


def encode_states(states: Sequence[NodeState], space: ActionSpace, radius_m: float) -> np.ndarray:
    """Network input rows: d/R followed by one-hot blocks for each parameter."""
    sizes = space.sizes
    out = np.zeros((len(states), 1 + sum(sizes)))
    offsets = np.cumsum((1,) + sizes[:-1])
    for row, s in enumerate(states):
        out[row, 0] = s.d / radius_m
        for off, idx in zip(offsets, space.indices(s.params)):
            out[row, off + idx] = 1.0
    return out


def encode_actions(actions: Sequence[Action], space: ActionSpace) -> np.ndarray:
    return np.array([space.indices(a) for a in actions], dtype=np.int64).reshape(-1, 4)


# -- reward and history -------------------------------------------------------
def reward(inst_succ: float, inst_sent: float, h_value: float, trade_off_lambda: float = 0.5) -> float:
    """Negative-log PDR reward blending instantaneous and historical delivery."""
    if inst_sent < 0:
        raise ValueError("inst_sent must be non-negative")
    p = h_value if inst_sent == 0 else inst_succ / inst_sent
    arg = 1.0 - (1.0 - trade_off_lambda) * p - trade_off_lambda * h_value
    arg = min(max(arg, REWARD_EPS), 1.0)
    return -2.0 * math.log2(arg)


class HistoryTracker:
    """Laplace-smoothed delivery ratio per (usf, ptx, dsf, w) cell, pooled over nodes."""

    def __init__(self, smoothing: float = 1.0):
        self.smoothing = smoothing
        self.sent: dict[tuple, int] = {}
        self.succ: dict[tuple, int] = {}

    def value(self, cell: Iterable) -> float:
        key = tuple(cell)
        a = self.smoothing
        return (self.succ.get(key, 0) + a) / (self.sent.get(key, 0) + 2 * a)

    def update(self, cell: Iterable, delivered: bool) -> float:
        key = tuple(cell)
        self.sent[key] = self.sent.get(key, 0) + 1
        self.succ[key] = self.succ.get(key, 0) + int(bool(delivered))
        return self.value(key)


# -- transitions and buffers -------------------------------------------------
@dataclass(frozen=True)
class Transition:
    node_id: int
    s: NodeState
    a: Action
    r: float
    s_next: NodeState
    t_index: int
    time: float
    origin: str = "online"

    def to_json(self) -> dict:
        return {
            "node": self.node_id,
            "t": self.t_index,
            "time": self.time,
            "s": self.s.as_list(),
            "a": list(self.a),
            "r": self.r,
            "s_next": self.s_next.as_list(),
            "origin": self.origin,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Transition":
        s, sn, a = d["s"], d["s_next"], d["a"]
        return cls(
            int(d["node"]),
            NodeState(float(s[0]), int(s[1]), float(s[2]), int(s[3]), int(s[4])),
            Action(int(a[0]), float(a[1]), int(a[2]), int(a[3])),
            float(d["r"]),
            NodeState(float(sn[0]), int(sn[1]), float(sn[2]), int(sn[3]), int(sn[4])),
            int(d["t"]),
            float(d["time"]),
            str(d["origin"]),
        )


@dataclass
class GlobalBatch:
    """One row per node, all taken from the same time cut."""

    transitions: list[Transition]
    cut: float

    def __len__(self) -> int:
        return len(self.transitions)


class ReplayBuffer:
    """Ring of transitions with a per-node time index for contemporaneous sampling."""

    def __init__(self, n_nodes: int, capacity: int = 1_000_000, origin: str = "online"):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.n_nodes = n_nodes
        self.capacity = capacity
        self.origin = origin
        self._ring: deque[Transition] = deque()
        self._per_node: list[deque[Transition]] = [deque() for _ in range(n_nodes)]
        self._times: deque[float] = deque()

    def __len__(self) -> int:
        return len(self._ring)

    def __iter__(self):
        return iter(self._ring)

    def append(self, tr: Transition) -> None:
        if not 0 <= tr.node_id < self.n_nodes:
            raise ValueError(f"node id {tr.node_id} outside buffer of {self.n_nodes} nodes")
        if self._times and tr.time < self._times[-1]:
            raise ValueError("transitions must be appended in time order")
        per = self._per_node[tr.node_id]
        if per and tr.t_index <= per[-1].t_index:
            raise ValueError(f"step order violated for node {tr.node_id}")
        if len(self._ring) >= self.capacity:
            old = self._ring.popleft()
            self._times.popleft()
            self._per_node[old.node_id].popleft()
        self._ring.append(tr)
        self._times.append(tr.time)
        per.append(tr)

    def ready_time(self) -> float:
        """Earliest cut at which every node has a transition."""
        if any(not per for per in self._per_node):
            raise NotReady("some node has no transition yet")
        return max(per[0].time for per in self._per_node)

    def snapshot_times(self) -> np.ndarray:
        """Recorded times at which a full global batch exists."""
        t0 = self.ready_time()
        times = np.fromiter(self._times, dtype=float, count=len(self._times))
        return times[times >= t0]

    def batch_at(self, cut: float) -> GlobalBatch:
        rows = []
        for node_id, per in enumerate(self._per_node):
            # per-node times are sorted; latest transition at or before the cut
            times = _TimeView(per)
            i = bisect.bisect_right(times, cut)
            if i == 0:
                raise NotReady(f"node {node_id} has no transition at or before {cut}")
            rows.append(per[i - 1])
        return GlobalBatch(rows, cut)

    def sample_global_batch(self, rng: np.random.Generator) -> GlobalBatch:
        times = self.snapshot_times()
        if times.size == 0:
            raise NotReady("buffer is empty")
        return self.batch_at(float(times[rng.integers(times.size)]))

    def extend(self, transitions: Iterable[Transition]) -> None:
        for tr in transitions:
            self.append(tr)


class _TimeView:
    """Sequence view of transition times for bisect without copying."""

    def __init__(self, per: deque):
        self._per = per

    def __len__(self):
        return len(self._per)

    def __getitem__(self, i):
        return self._per[i].time


class HybridBuffer:
    """Union of an offline and an online buffer; cuts drawn uniformly over both."""

    def __init__(self, offline: Optional[ReplayBuffer], online: ReplayBuffer):
        self.offline = offline
        self.online = online

    def __len__(self) -> int:
        return len(self.online) + (len(self.offline) if self.offline is not None else 0)

    def sample_global_batch(self, rng: np.random.Generator) -> GlobalBatch:
        sources = []
        for buf in (self.offline, self.online):
            if buf is None:
                continue
            try:
                sources.append((buf, buf.snapshot_times()))
            except NotReady:
                continue
        counts = np.array([t.size for _, t in sources], dtype=float)
        if counts.sum() == 0:
            raise NotReady("no source can provide a global batch")
        k = int(rng.integers(int(counts.sum())))
        for buf, times in sources:
            if k < times.size:
                return buf.batch_at(float(times[k]))
            k -= times.size
        raise AssertionError("unreachable")


def save_buffer(buffer: ReplayBuffer, path: str | Path) -> None:
    path = Path(path)
    header = {
        "format": BUFFER_FORMAT,
        "version": BUFFER_VERSION,
        "n_nodes": buffer.n_nodes,
        "capacity": buffer.capacity,
        "origin": buffer.origin,
        "count": len(buffer),
    }
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for tr in buffer:
            f.write(json.dumps(tr.to_json(), sort_keys=True) + "\n")


def load_buffer(path: str | Path) -> ReplayBuffer:
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise BufferFormatError(f"{path}: empty file, missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise BufferFormatError(f"{path}: unreadable header: {exc}") from None
    if header.get("format") != BUFFER_FORMAT:
        raise BufferFormatError(f"{path}: not a replay buffer file")
    if header.get("version") != BUFFER_VERSION:
        raise BufferFormatError(
            f"{path}: buffer version {header.get('version')!r} unsupported, expected {BUFFER_VERSION!r}"
        )
    records = lines[1:]
    if len(records) != header["count"]:
        raise BufferFormatError(f"{path}: truncated, header promises {header['count']} transitions, found {len(records)}")
    buf = ReplayBuffer(header["n_nodes"], header["capacity"], header["origin"])
    try:
        buf.extend(Transition.from_json(json.loads(line)) for line in records)
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise BufferFormatError(f"{path}: malformed transition: {exc}") from None
    return buf


# -- the controller ---------------------------------------------------------
@dataclass(frozen=True)
class Observation:
    """What a policy sees when the server answers node ``node_id``."""

    time: float
    node_id: int
    state: NodeState
    global_states: list
    delivered: bool
    snr_db: float
    radius_m: float


class Policy(Protocol):
    def act(self, obs: Observation) -> Action: ...


class MdpController:
    """Turns simulator uplinks into transitions, rewards and policy queries.

    The transition for decision t is closed at the node's next uplink, whose
    delivery gives the instantaneous PDR term of the reward.
    """

    def __init__(
        self,
        policy,
        n_nodes: int,
        space: ActionSpace,
        buffer: Optional[ReplayBuffer] = None,
        history: Optional[HistoryTracker] = None,
        trade_off_lambda: float = 0.5,
        origin: str = "online",
        on_transition=None,
    ):
        self.policy = policy
        self.space = space
        self.buffer = buffer if buffer is not None else ReplayBuffer(n_nodes, origin=origin)
        self.history = history or HistoryTracker()
        self.trade_off_lambda = trade_off_lambda
        self.origin = origin
        self.on_transition = on_transition
        self._pending: dict[int, tuple[NodeState, Action]] = {}
        self._steps = [0] * n_nodes
        self.n_decisions = 0

    def on_uplink(self, ctx: DecisionContext) -> Action:
        node = ctx.node
        state = NodeState.of(node)
        delivered = ctx.outcome.delivered
        self.history.update(state.params, delivered)
        if node.node_id in self._pending:
            prev_s, prev_a = self._pending[node.node_id]
            r = reward(float(delivered), 1.0, self.history.value(prev_s.params), self.trade_off_lambda)
            self._steps[node.node_id] += 1
            tr = Transition(node.node_id, prev_s, prev_a, r, state, self._steps[node.node_id], ctx.time, self.origin)
            self.buffer.append(tr)
            if self.on_transition is not None:
                self.on_transition(tr)
        obs = Observation(
            ctx.time,
            node.node_id,
            state,
            [NodeState.of(n) for n in ctx.nodes],
            delivered,
            ctx.outcome.measured_sinr_db if delivered else float("nan"),
            ctx.radius_m,
        )
        action = self.policy.act(obs)
        self._pending[node.node_id] = (state, action)
        self.n_decisions += 1
        return action

    def on_run_end(self, time: float, nodes: Sequence[EndNode]) -> None:
        """Close every open decision; no later uplink exists, so p falls back to H."""
        for node_id in sorted(self._pending):
            prev_s, prev_a = self._pending[node_id]
            r = reward(0.0, 0.0, self.history.value(prev_s.params), self.trade_off_lambda)
            self._steps[node_id] += 1
            tr = Transition(node_id, prev_s, prev_a, r, NodeState.of(nodes[node_id]), self._steps[node_id], time, self.origin)
            self.buffer.append(tr)
            if self.on_transition is not None:
                self.on_transition(tr)
        self._pending.clear()


def collect_offline(
    config: DeploymentConfig,
    policy,
    minutes: float = 25.0,
    simulator_kwargs: Optional[dict] = None,
    trade_off_lambda: float = 0.5,
    epoch: int = 1,
) -> tuple[ReplayBuffer, Simulator]:
    """Run the behaviour policy on a fresh copy of the scenario and keep its transitions."""
    kwargs = dict(simulator_kwargs or {})
    cfg = DeploymentConfig(config.n_nodes, config.radius_m, config.traffic_delta, minutes * 60.0, config.seed)
    sim = Simulator(cfg, epoch=epoch, **kwargs)
    controller = MdpController(
        policy, cfg.n_nodes, sim.space, ReplayBuffer(cfg.n_nodes, origin="offline"),
        trade_off_lambda=trade_off_lambda, origin="offline",
    )
    sim.run(controller)
    return controller.buffer, sim
