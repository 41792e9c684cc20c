"""Reference policies: uniform random and a margin-adapting ADR heuristic."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .env import Observation
from .node import Action, ActionSpace
from .phy import SF_PROFILES


class RandomUniformPolicy:
    """Every field drawn independently and uniformly from its set."""

    def __init__(self, space: ActionSpace | None = None, random_state=None):
        self.space = space or ActionSpace()
        self.random_state = random_state
        self._rng = np.random.default_rng(random_state)

    def sample(self) -> Action:
        return self.space.action([self._rng.integers(n) for n in self.space.sizes])

    def act(self, obs: Observation) -> Action:
        return self.sample()


@dataclass
class AdrState:
    snr: deque = field(default_factory=lambda: deque(maxlen=20))
    outcomes: deque = field(default_factory=lambda: deque(maxlen=20))
    margin_db: float = 10.0
    since_adapt: int = 0


class AdrPolicy:
    """ADR with a self-tuning link margin.

    Per node: ``steps = floor((max SNR - demod threshold - margin) / 3)``;
    positive steps lower SF first and then power, negative steps raise power.
    Every ``window`` uplinks the margin moves by ``margin_step_db`` when the loss
    rate leaves the [low_loss, high_loss] band. DSF follows USF; the receive
    window is left alone.
    """

    def __init__(
        self,
        space: ActionSpace | None = None,
        window: int = 20,
        initial_margin_db: float = 10.0,
        step_db: float = 3.0,
        margin_step_db: float = 3.0,
        margin_bounds: tuple[float, float] = (0.0, 30.0),
        low_loss: float = 0.10,
        high_loss: float = 0.30,
    ):
        self.space = space or ActionSpace()
        self.window = window
        self.initial_margin_db = initial_margin_db
        self.step_db = step_db
        self.margin_step_db = margin_step_db
        self.margin_bounds = margin_bounds
        self.low_loss = low_loss
        self.high_loss = high_loss
        self.states: dict[int, AdrState] = {}

    def _state(self, node_id: int) -> AdrState:
        if node_id not in self.states:
            self.states[node_id] = AdrState(
                deque(maxlen=self.window), deque(maxlen=self.window), self.initial_margin_db
            )
        return self.states[node_id]

    def observe(self, node_id: int, delivered: bool, snr_db: float) -> AdrState:
        st = self._state(node_id)
        st.outcomes.append(bool(delivered))
        if delivered:
            st.snr.append(float(snr_db))
        st.since_adapt += 1
        if st.since_adapt >= self.window:
            loss = 1.0 - sum(st.outcomes) / len(st.outcomes)
            lo, hi = self.margin_bounds
            if loss > self.high_loss:
                st.margin_db = min(st.margin_db + self.margin_step_db, hi)
            elif loss < self.low_loss:
                st.margin_db = max(st.margin_db - self.margin_step_db, lo)
            st.since_adapt = 0
        return st

    def decide(self, current: Action, st: AdrState) -> Action:
        if not st.snr:
            return Action(current.usf, current.ptx_dbm, current.usf, current.window_symbols)
        sfs, powers = self.space.sf_set, self.space.power_set
        si, pi = sfs.index(current.usf), powers.index(current.ptx_dbm)
        headroom = max(st.snr) - SF_PROFILES[current.usf].demod_threshold_db - st.margin_db
        steps = math.floor(headroom / self.step_db)
        while steps > 0:
            if si > 0:
                si -= 1
            elif pi > 0:
                pi -= 1
            else:
                break
            steps -= 1
        while steps < 0 and pi < len(powers) - 1:
            pi += 1
            steps += 1
        usf = sfs[si]
        return Action(usf, powers[pi], usf, current.window_symbols)

    def act(self, obs: Observation) -> Action:
        st = self.observe(obs.node_id, obs.delivered, obs.snr_db)
        return self.decide(obs.state.params, st)
