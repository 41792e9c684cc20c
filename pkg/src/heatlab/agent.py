"""HEAT: in-sample offline critics, history-enhanced online actor-critic, shared encoder.

Offline phase: twin Q^mu critics regress onto r + gamma * min V_targ(s'), twin
V^mu nets fit an upper expectile of min Q_targ(s, a) over buffer actions only.
Online phase: twin Q^pi critics regress onto r + gamma * min_i max_a Q_targ_i,
and the actor maximises an online lesson (entropy plus Q-weighted log-prob) and
an offline lesson that imitates buffer actions where Q^mu beats Q^pi.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .engine import STREAM_POLICY, stream
from .env import GlobalBatch, HybridBuffer, NotReady, Observation, ReplayBuffer, encode_states, state_dim
from .networks import ActorNet, CriticNet, ValueNet, action_onehots
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import Encoder, EncoderConfig, ParamStore
from .nn.optim import Adam, TrainingError
from .nn.tensor import Tensor, exp, gather, log, mean, no_grad, take, tensor
from .node import Action, ActionSpace
from .validation import check_action_indices, check_fraction, check_is_built, check_state_matrix

ENT_EPS = 1e-9


def expectile_loss(x, rho: float):
    """|rho - 1(x < 0)| * x^2, elementwise. Works on arrays and tensors."""
    if isinstance(x, Tensor):
        w = np.abs(rho - (x.data < 0))
        return x * x * w
    x = np.asarray(x, dtype=float)
    return np.abs(rho - (x < 0)) * x * x


def mar(x):
    """Positive part, 1(x > 0) * x."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x, 0.0)


def gamma_at(update: int, gamma0: float = 0.5, gamma_max: float = 0.99, steps: int = 1000) -> float:
    """Discount ramp: gamma0 at update 0, gamma_max from ``steps`` on, linear between."""
    if steps <= 0:
        return gamma_max
    frac = min(max(update, 0), steps) / steps
    return gamma0 + (gamma_max - gamma0) * frac


@dataclass
class UpdateStats:
    kind: str
    update: int
    gamma: float
    critic_loss: float
    actor_or_value_loss: float


def _check_finite(stats: UpdateStats) -> None:
    if not (np.isfinite(stats.critic_loss) and np.isfinite(stats.actor_or_value_loss)):
        raise TrainingError(f"non-finite loss in {stats.kind} update: {stats}")


class HeatAgent(BaseEstimator):
    """Estimator wrapper around the HEAT networks and both trainers.

    ``fit`` builds the networks and pretrains the offline critics on a replay
    buffer, ``partial_fit`` runs one interleaved training round on a (hybrid)
    buffer, ``predict`` and ``predict_proba`` map an encoded global state
    matrix to greedy actions and branch distributions, ``act`` is the policy
    hook used inside a simulation.
    """

    def __init__(
        self,
        radius_m: float = 2000.0,
        space: Optional[ActionSpace] = None,
        rho: float = 0.7,
        alpha: float = 0.05,
        beta_off: float = 1.0,
        gamma0: float = 0.5,
        gamma_max: float = 0.99,
        gamma_steps: int = 1000,
        lr: float = 3e-4,
        offline_steps_per_online: int = 1,
        pretrain_steps: int = 300,
        use_offline: bool = True,
        lesson_on_mode: str = "expected",
        alg2_literal_sign: bool = False,
        encoder_layers: int = 2,
        model_dim: int = 32,
        heads: int = 2,
        ff_dim: int = 64,
        act_mode: str = "sample",
        random_state: int = 0,
    ):
        self.radius_m = radius_m
        self.space = space
        self.rho = rho
        self.alpha = alpha
        self.beta_off = beta_off
        self.gamma0 = gamma0
        self.gamma_max = gamma_max
        self.gamma_steps = gamma_steps
        self.lr = lr
        self.offline_steps_per_online = offline_steps_per_online
        self.pretrain_steps = pretrain_steps
        self.use_offline = use_offline
        self.lesson_on_mode = lesson_on_mode
        self.alg2_literal_sign = alg2_literal_sign
        self.encoder_layers = encoder_layers
        self.model_dim = model_dim
        self.heads = heads
        self.ff_dim = ff_dim
        self.act_mode = act_mode
        self.random_state = random_state

    # -- construction -------------------------------------------------------
    def _validate_params(self) -> None:
        check_fraction("rho", self.rho, 0.5, 1.0, closed=False)
        if not 0.0 < self.gamma0 <= 1.0 or not 0.0 < self.gamma_max <= 1.0:
            raise ValueError("discount factors must lie in (0, 1]")
        if self.alpha < 0 or self.beta_off < 0:
            raise ValueError("alpha and beta_off must be non-negative")
        if self.offline_steps_per_online < 0 or self.pretrain_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.lesson_on_mode not in ("expected", "sample"):
            raise ValueError(f"lesson_on_mode must be 'expected' or 'sample', got {self.lesson_on_mode!r}")
        if self.act_mode not in ("sample", "greedy"):
            raise ValueError(f"act_mode must be 'sample' or 'greedy', got {self.act_mode!r}")
        if self.radius_m <= 0:
            raise ValueError("radius_m must be positive")

    def build(self) -> "HeatAgent":
        """Fresh networks, targets equal to mains, optimisers reset."""
        self._validate_params()
        self.space_ = self.space or ActionSpace()
        self.state_dim_ = state_dim(self.space_)
        cfg = EncoderConfig(self.encoder_layers, self.model_dim, self.heads, self.ff_dim)
        seed = int(self.random_state)
        store = ParamStore(rng=stream(seed, 0, STREAM_POLICY, 0))
        sd, gd = self.state_dim_, cfg.model_dim
        # online parts first so HEAT and HEAT-online share their initial values
        self.encoder_ = Encoder(store, "enc", sd, cfg)
        self.actor_ = ActorNet(store, "actor", sd, gd, self.space_)
        self.q_on_ = [CriticNet(store, f"q_on{i}", sd, gd, self.space_) for i in (1, 2)]
        self.q_on_targ_ = [CriticNet(store, f"q_on{i}_targ", sd, gd, self.space_) for i in (1, 2)]
        self.offline_enabled_ = bool(self.use_offline)
        if self.offline_enabled_:
            off_rng = stream(seed, 0, STREAM_POLICY, 3)
            store.rng = off_rng
            self.q_off_ = [CriticNet(store, f"q_off{i}", sd, gd, self.space_) for i in (1, 2)]
            self.q_off_targ_ = [CriticNet(store, f"q_off{i}_targ", sd, gd, self.space_) for i in (1, 2)]
            self.v_off_ = [ValueNet(store, f"v_off{i}", sd, gd) for i in (1, 2)]
            self.v_off_targ_ = [ValueNet(store, f"v_off{i}_targ", sd, gd) for i in (1, 2)]
        self.store_ = store
        self._copy_targets("q_on")
        if self.offline_enabled_:
            self._copy_targets("q_off")
            self._copy_targets("v_off")
        self.opt_online_ = Adam(
            store.tensors("enc.") + store.tensors("actor.") + store.tensors("q_on1.") + store.tensors("q_on2."),
            lr=self.lr,
        )
        if self.offline_enabled_:
            self.opt_offline_ = Adam(
                store.tensors("enc.") + store.tensors("q_off1.") + store.tensors("q_off2.")
                + store.tensors("v_off1.") + store.tensors("v_off2."),
                lr=self.lr,
            )
        self.all_actions_ = self.space_.all_indices()
        self.all_onehots_ = action_onehots(self.all_actions_, self.space_)
        self.online_updates_ = 0
        self.offline_updates_ = 0
        self.act_rng_ = stream(seed, 0, STREAM_POLICY, 1)
        self.batch_rng_ = stream(seed, 0, STREAM_POLICY, 2)
        self.offline_buffer_: Optional[ReplayBuffer] = None
        self.history_: list[UpdateStats] = []
        return self

    def _copy_targets(self, family: str) -> None:
        for i in (1, 2):
            self.store_.copy_prefix(f"{family}{i}.", f"{family}{i}_targ.")

    # -- encodings --------------------------------------------------------------
    def _encode(self, states) -> np.ndarray:
        if isinstance(states, np.ndarray):
            return check_state_matrix(states, self.state_dim_)
        return encode_states(list(states), self.space_, self.radius_m)

    def _batch_arrays(self, batch: GlobalBatch):
        trs = batch.transitions
        S = encode_states([t.s for t in trs], self.space_, self.radius_m)
        S2 = encode_states([t.s_next for t in trs], self.space_, self.radius_m)
        A = np.array([self.space_.indices(t.a) for t in trs], dtype=np.int64)
        r = np.array([t.r for t in trs], dtype=float)
        return S, S2, A, r

    def global_features(self, X) -> np.ndarray:
        """Encoder output for an encoded global state matrix, no graph."""
        check_is_built(self)
        with no_grad():
            return self.encoder_(self._encode(X)).data

    # -- offline phase ------------------------------------------------------------
    def offline_update(self, batch: GlobalBatch) -> UpdateStats:
        check_is_built(self)
        if not self.offline_enabled_:
            raise RuntimeError("offline module is disabled")
        S, S2, A, r = self._batch_arrays(batch)
        # one discount ramp for the whole model, driven by online progress, keeps
        # Q^mu and Q^pi on a comparable scale for the offline lesson margin
        gamma = gamma_at(self.online_updates_, self.gamma0, self.gamma_max, self.gamma_steps)
        with no_grad():
            G_fixed = self.encoder_(S).data
            G2 = self.encoder_(S2).data
            v_next = np.minimum(*(v(S2, G2).data for v in self.v_off_targ_))
            y_q = r + gamma * v_next
            y_v = np.minimum(*(q(S, G_fixed, A).data for q in self.q_off_targ_))
        self.opt_offline_.zero_grad()
        G = self.encoder_(S)
        j_q = sum(mean((q(S, G, A) - y_q) ** 2) for q in self.q_off_)
        j_v = sum(mean(expectile_loss(tensor(y_v) - v(S, G), self.rho)) for v in self.v_off_)
        stats = UpdateStats("offline", self.offline_updates_, gamma, j_q.item(), j_v.item())
        _check_finite(stats)
        (j_q + j_v).backward()
        self.opt_offline_.step()
        self._copy_targets("q_off")
        self._copy_targets("v_off")
        self.offline_updates_ += 1
        return stats

    # -- online phase -------------------------------------------------------------
    def q_all(self, critics, S: np.ndarray, G: np.ndarray) -> np.ndarray:
        """(M, n_joint) Q values over every joint action, one array per critic."""
        return np.stack([c.all_actions_fast(S, G, self.all_onehots_) for c in critics])

    def online_q_target(self, r, S2: np.ndarray, G2: np.ndarray, gamma: float) -> np.ndarray:
        """r + gamma * min_i max_a Q_targ_i(s', a)."""
        q = self.q_all(self.q_on_targ_, S2, G2)          # (2, M, A)
        return np.asarray(r, dtype=float) + gamma * q.max(axis=2).min(axis=0)

    def joint_log_probs(self, head_logps: list[Tensor]) -> Tensor:
        """(M, n_joint) log pi over every joint action from the branch log-probs."""
        out = None
        for k, lp in enumerate(head_logps):
            part = take(lp, (slice(None), self.all_actions_[:, k]))
            out = part if out is None else out + part
        return out

    def lesson_terms(self, S: np.ndarray, G, A_buf: np.ndarray, head_logps: Optional[list] = None):
        """Per-row (Lesson_on, Lesson_off) tensors for the policy objective."""
        check_is_built(self)
        G = tensor(G)
        if head_logps is None:
            head_logps = self.actor_.log_probs(S, G)
        Gd = G.data
        joint = self.joint_log_probs(head_logps)                    # (M, A)
        q_on_all = self.q_all(self.q_on_, S, Gd).min(axis=0)       # (M, A), detached
        if self.lesson_on_mode == "expected":
            pi = exp(joint)
            weight = pi.data                                       # stop-gradient sampling weights
            per_action = log(1.0 + ENT_EPS - pi) * self.alpha + joint * q_on_all
            lesson_on = (per_action * weight).sum(axis=1)
        else:
            probs = np.exp(joint.data)
            cum = probs.cumsum(axis=1)
            u = self.act_rng_.random((len(S), 1)) * cum[:, -1:]
            picked = np.minimum((cum < u).sum(axis=1), probs.shape[1] - 1).reshape(-1, 1)
            lp = gather(joint, picked, axis=1).reshape(-1)
            q_pick = np.take_along_axis(q_on_all, picked, axis=1).reshape(-1)
            lesson_on = log(1.0 + ENT_EPS - exp(lp)) * self.alpha + lp * q_pick

        lp_buf = None
        for k, lp in enumerate(head_logps):
            part = gather(lp, A_buf[:, k:k + 1], axis=1).reshape(-1)
            lp_buf = part if lp_buf is None else lp_buf + part
        if self.offline_enabled_ and self.beta_off > 0:
            with no_grad():
                q_mu = np.minimum(*(q(S, Gd, A_buf).data for q in self.q_off_))
                q_pi = np.minimum(*(q(S, Gd, A_buf).data for q in self.q_on_))
            weight_off = self.beta_off * mar(q_mu - q_pi)
        else:
            weight_off = np.zeros(len(S))
        lesson_off = lp_buf * weight_off
        return lesson_on, lesson_off

    def online_update(self, batch: GlobalBatch) -> UpdateStats:
        check_is_built(self)
        S, S2, A, r = self._batch_arrays(batch)
        gamma = gamma_at(self.online_updates_, self.gamma0, self.gamma_max, self.gamma_steps)
        with no_grad():
            G2 = self.encoder_(S2).data
        y = self.online_q_target(r, S2, G2, gamma)
        self.opt_online_.zero_grad()
        G = self.encoder_(S)
        j_q = sum(mean((q(S, G, A) - y) ** 2) for q in self.q_on_)
        lesson_on, lesson_off = self.lesson_terms(S, G, A)
        if self.alg2_literal_sign:
            j_pi = -mean(lesson_on - lesson_off)
        else:
            j_pi = -mean(lesson_on + lesson_off)
        stats = UpdateStats("online", self.online_updates_, gamma, j_q.item(), j_pi.item())
        _check_finite(stats)
        (j_q + j_pi).backward()
        self.opt_online_.step()
        self._copy_targets("q_on")
        self.online_updates_ += 1
        return stats

    # -- estimator API ------------------------------------------------------------
    def fit(self, X: Optional[ReplayBuffer] = None, y=None) -> "HeatAgent":
        """Build the networks; with an offline buffer, pretrain Q^mu and V^mu on it."""
        self.build()
        if X is not None and self.offline_enabled_:
            X.ready_time()  # NotReady for an empty or partial buffer
            self.offline_buffer_ = X
            for _ in range(self.pretrain_steps):
                self.history_.append(self.offline_update(X.sample_global_batch(self.batch_rng_)))
        return self

    def partial_fit(self, X, y=None) -> "HeatAgent":
        """One round: k offline updates (when an offline buffer is attached), then one online update."""
        if not hasattr(self, "store_"):
            self.build()
        if self.offline_enabled_ and self.offline_buffer_ is not None:
            for _ in range(self.offline_steps_per_online):
                self.history_.append(self.offline_update(self.offline_buffer_.sample_global_batch(self.batch_rng_)))
        self.history_.append(self.online_update(X.sample_global_batch(self.batch_rng_)))
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per-branch action distributions for every row of the global state matrix."""
        check_is_built(self)
        S = self._encode(X)
        with no_grad():
            G = self.encoder_(S)
            return [np.exp(lp.data) for lp in self.actor_.log_probs(S, G)]

    def predict(self, X) -> np.ndarray:
        """Greedy branch indices, shape (N, 4)."""
        return np.stack([p.argmax(axis=1) for p in self.predict_proba(X)], axis=1)

    def sample(self, X, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        rng = rng or self.act_rng_
        out = []
        for p in self.predict_proba(X):
            cum = p.cumsum(axis=1)
            u = rng.random((len(p), 1)) * cum[:, -1:]
            out.append(np.minimum((cum < u).sum(axis=1), p.shape[1] - 1))
        return np.stack(out, axis=1)

    def act(self, obs: Observation) -> Action:
        """Policy hook: the deciding node's row of the network-wide decision."""
        check_is_built(self)
        X = encode_states(obs.global_states, self.space_, self.radius_m)
        S = X[obs.node_id:obs.node_id + 1]
        with no_grad():
            G = self.encoder_(X).data[obs.node_id:obs.node_id + 1]
            probs = [np.exp(lp.data[0]) for lp in self.actor_.log_probs(S, G)]
        if self.act_mode == "greedy":
            idx = [int(p.argmax()) for p in probs]
        else:
            idx = [min(int(np.searchsorted(p.cumsum(), self.act_rng_.random() * p.sum(), side="right")), len(p) - 1) for p in probs]
        return self.space_.action(idx)

    def score(self, X, y) -> float:
        """Fraction of rows whose greedy action equals the given (N, 4) indices."""
        y = check_action_indices(y, self.space_ if hasattr(self, "space_") else ActionSpace())
        return float(np.mean(np.all(self.predict(X) == y, axis=1)))

    # -- checkpoints --------------------------------------------------------------
    def save(self, path) -> None:
        check_is_built(self)
        params = self.get_params()
        sp = params.pop("space") or ActionSpace()
        meta = {
            "params": params,
            "space": {"power_set": list(sp.power_set), "window_set": list(sp.window_set), "sf_set": list(sp.sf_set)},
            "online_updates": self.online_updates_,
            "offline_updates": self.offline_updates_,
        }
        save_checkpoint(path, self.store_.state(), meta)

    @classmethod
    def load(cls, path) -> "HeatAgent":
        tensors, meta = load_checkpoint(path)
        sp = meta["space"]
        space = ActionSpace(tuple(sp["power_set"]), tuple(sp["window_set"]), tuple(sp["sf_set"]))
        agent = cls(space=space, **meta["params"]).build()
        if list(tensors) != agent.store_.names():
            raise ValueError("checkpoint manifest does not match the agent layout")
        agent.store_.load_state(tensors)
        agent.online_updates_ = int(meta["online_updates"])
        agent.offline_updates_ = int(meta["offline_updates"])
        return agent


def heat_online_mode(**params) -> HeatAgent:
    """HEAT with the offline module removed: beta = 0, no offline nets or pretraining."""
    params.update(use_offline=False, beta_off=0.0, pretrain_steps=0, offline_steps_per_online=0)
    return HeatAgent(**params)


class HeatLearner:
    """Policy hook that also trains the agent from the transitions the run produces."""

    def __init__(self, agent: HeatAgent, n_nodes: int, train_every: int = 4, offline: Optional[ReplayBuffer] = None):
        if train_every < 1:
            raise ValueError("train_every must be >= 1")
        self.agent = agent
        self.train_every = train_every
        self.online = ReplayBuffer(n_nodes, origin="online")
        self.buffer = HybridBuffer(offline if agent.offline_enabled_ else None, self.online)
        self.seen = 0
        self.skipped = 0

    def act(self, obs: Observation) -> Action:
        return self.agent.act(obs)

    def on_transition(self, tr) -> None:
        self.seen += 1
        if self.seen % self.train_every:
            return
        try:
            self.agent.partial_fit(self.buffer)
        except NotReady:
            self.skipped += 1

    @property
    def updates(self) -> int:
        return self.agent.online_updates_
