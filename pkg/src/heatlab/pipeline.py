"""End-to-end runs for each algorithm on one deployment and seed."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from .agent import HeatAgent, HeatLearner, heat_online_mode
from .baselines import AdrPolicy, RandomUniformPolicy
from .engine import STREAM_POLICY, DeploymentConfig, RunResult, Simulator, stream
from .config import ALGORITHMS
from .env import HistoryTracker, MdpController, ReplayBuffer, collect_offline


@dataclass
class RunReport:
    algo: str
    config: DeploymentConfig
    result: RunResult
    train_updates: int = 0
    wall_s: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def metrics(self):
        return self.result.metrics


def make_agent(algo: str, config: DeploymentConfig, agent_params: Optional[dict] = None) -> HeatAgent:
    params = dict(agent_params or {})
    params.setdefault("radius_m", config.radius_m)
    params.setdefault("random_state", config.seed)
    if algo == "heat-online":
        return heat_online_mode(**params)
    return HeatAgent(**params)


def collect_behaviour_buffer(config: DeploymentConfig, minutes: float, sim_kwargs: Optional[dict] = None,
                             trade_off_lambda: float = 0.5) -> ReplayBuffer:
    """Random-uniform behaviour data from a separate epoch of the same deployment."""
    policy = RandomUniformPolicy(random_state=stream(config.seed, 1, STREAM_POLICY, 9).integers(2**31))
    buffer, _ = collect_offline(config, policy, minutes, sim_kwargs, trade_off_lambda, epoch=1)
    return buffer


def run_algorithm(
    algo: str,
    config: DeploymentConfig,
    agent_params: Optional[dict] = None,
    train_every: int = 4,
    offline_minutes: float = 25.0,
    offline_buffer: Optional[ReplayBuffer] = None,
    sim_kwargs: Optional[dict] = None,
    trade_off_lambda: float = 0.5,
    trace: bool = False,
    adr_params: Optional[dict] = None,
    history_smoothing: float = 1.0,
) -> RunReport:
    if algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")
    t0 = time.perf_counter()
    sim_kwargs = dict(sim_kwargs or {})
    sim = Simulator(config, **sim_kwargs)
    extras = {}
    learner = None
    if algo == "random":
        policy = RandomUniformPolicy(sim.space, random_state=stream(config.seed, 0, STREAM_POLICY, 9).integers(2**31))
    elif algo == "adrx":
        policy = AdrPolicy(sim.space, **(adr_params or {}))
    else:
        agent = make_agent(algo, config, agent_params)
        if algo == "heat":
            if offline_buffer is None:
                offline_buffer = collect_behaviour_buffer(config, offline_minutes, sim_kwargs, trade_off_lambda)
            agent.fit(offline_buffer)
            extras["offline_transitions"] = len(offline_buffer)
        else:
            agent.fit(None)
        learner = HeatLearner(agent, config.n_nodes, train_every, offline_buffer)
        policy = learner
    controller = MdpController(
        policy, config.n_nodes, sim.space,
        buffer=learner.online if learner else None,
        history=HistoryTracker(history_smoothing),
        trade_off_lambda=trade_off_lambda,
        on_transition=learner.on_transition if learner else None,
    )
    result = sim.run(controller, trace=trace)
    updates = learner.updates if learner else 0
    if learner:
        extras["agent"] = learner.agent
        extras["pretrain_updates"] = learner.agent.pretrain_steps if algo == "heat" else 0
    return RunReport(algo, config, result, updates, time.perf_counter() - t0, extras)
