"""Actor, critic and value networks fed by a node state row and its global feature row."""

from __future__ import annotations

import numpy as np

from .nn.layers import LEAKY_SLOPE, Dense, ParamStore, Stack
from .nn.tensor import Tensor, add, concat, leaky_relu, linear, log_softmax, no_grad, tensor
from .node import ActionSpace

STATE_WIDTHS = (32, 64)   # widening stack on the node state
GLOBAL_WIDTHS = (24, 16)  # narrowing stack on the global feature
ACTION_WIDTHS = (32, 64)
JOINT_WIDTH = 64
HEAD_WIDTH = 32


def action_onehots(indices: np.ndarray, space: ActionSpace) -> np.ndarray:
    """(M, 4) branch indices -> (M, sum(sizes)) concatenated one-hot rows."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1, 4)
    out = np.zeros((len(indices), sum(space.sizes)))
    off = 0
    for k, n in enumerate(space.sizes):
        out[np.arange(len(indices)), off + indices[:, k]] = 1.0
        off += n
    return out


class ActorNet:
    """State and global paths, a shared trunk, one softmax head per action field."""

    def __init__(self, store: ParamStore, name: str, state_dim: int, global_dim: int, space: ActionSpace):
        self.space = space
        self.state_path = Stack(store, f"{name}.s", [state_dim, *STATE_WIDTHS])
        self.global_path = Stack(store, f"{name}.g", [global_dim, *GLOBAL_WIDTHS])
        self.trunk = Stack(store, f"{name}.trunk", [STATE_WIDTHS[-1] + GLOBAL_WIDTHS[-1], JOINT_WIDTH])
        self.heads = [
            Stack(store, f"{name}.head{k}", [JOINT_WIDTH, HEAD_WIDTH, n], act_last=False)
            for k, n in enumerate(space.sizes)
        ]

    def log_probs(self, s, g) -> list[Tensor]:
        h = self.trunk(concat([self.state_path(s), self.global_path(g)], axis=-1))
        return [log_softmax(head(h), axis=-1) for head in self.heads]


class CriticNet:
    """Q(s, a, G). The first joint layer is split per input path so that the
    action contribution can be precomputed for every joint action at once."""

    def __init__(self, store: ParamStore, name: str, state_dim: int, global_dim: int, space: ActionSpace):
        self.space = space
        self.state_path = Stack(store, f"{name}.s", [state_dim, *STATE_WIDTHS])
        self.global_path = Stack(store, f"{name}.g", [global_dim, *GLOBAL_WIDTHS])
        self.action_path = Stack(store, f"{name}.a", [sum(space.sizes), *ACTION_WIDTHS])
        fan_in = STATE_WIDTHS[-1] + GLOBAL_WIDTHS[-1] + ACTION_WIDTHS[-1]
        bound = 1.0 / np.sqrt(fan_in)
        self.w_s = store.param(f"{name}.j.ws", (STATE_WIDTHS[-1], JOINT_WIDTH), bound)
        self.w_g = store.param(f"{name}.j.wg", (GLOBAL_WIDTHS[-1], JOINT_WIDTH), bound)
        self.w_a = store.param(f"{name}.j.wa", (ACTION_WIDTHS[-1], JOINT_WIDTH), bound)
        self.b_j = store.param(f"{name}.j.b", (JOINT_WIDTH,), bound)
        self.out = Dense(store, f"{name}.out", JOINT_WIDTH, 1)

    def _context(self, s, g) -> Tensor:
        return add(linear(self.state_path(s), self.w_s, self.b_j), linear(self.global_path(g), self.w_g))

    def _action_part(self, onehots) -> Tensor:
        return linear(self.action_path(onehots), self.w_a)

    def __call__(self, s, g, action_indices) -> Tensor:
        """Q for one action per row; returns shape (M,)."""
        a = tensor(action_onehots(action_indices, self.space))
        h = leaky_relu(add(self._context(s, g), self._action_part(a)), LEAKY_SLOPE)
        return self.out(h).reshape(-1)

    def all_actions(self, s, g, onehots: np.ndarray) -> Tensor:
        """Q for every row of ``onehots`` against every state row: (M, A)."""
        ctx = self._context(s, g)                      # (M, J)
        act = self._action_part(tensor(onehots))       # (A, J)
        h = leaky_relu(add(ctx.reshape(ctx.shape[0], 1, JOINT_WIDTH), act), LEAKY_SLOPE)
        return self.out(h).reshape(ctx.shape[0], -1)

    def all_actions_fast(self, s, g, onehots: np.ndarray, chunk: int = 1) -> np.ndarray:
        """Detached ``all_actions`` in plain numpy, in row chunks that stay in cache."""
        with no_grad():
            ctx = self._context(s, g).data
            act = self._action_part(tensor(onehots)).data
        w = self.out.weight.data[:, 0]
        b = self.out.bias.data[0]
        m, n = ctx.shape[0], act.shape[0]
        out = np.empty((m, n))
        work = np.empty((min(chunk, m), n, JOINT_WIDTH))
        neg = np.empty_like(work)
        for i in range(0, m, chunk):
            k = min(chunk, m - i)
            h, t = work[:k], neg[:k]
            np.add(ctx[i:i + k, None, :], act[None, :, :], out=h)
            np.multiply(h, LEAKY_SLOPE, out=t)
            np.maximum(h, t, out=h)
            np.matmul(h, w, out=out[i:i + k])
            out[i:i + k] += b
        return out


class ValueNet:
    def __init__(self, store: ParamStore, name: str, state_dim: int, global_dim: int):
        self.state_path = Stack(store, f"{name}.s", [state_dim, *STATE_WIDTHS])
        self.global_path = Stack(store, f"{name}.g", [global_dim, *GLOBAL_WIDTHS])
        self.joint = Stack(store, f"{name}.j", [STATE_WIDTHS[-1] + GLOBAL_WIDTHS[-1], JOINT_WIDTH, 1], act_last=False)

    def __call__(self, s, g) -> Tensor:
        return self.joint(concat([self.state_path(s), self.global_path(g)], axis=-1)).reshape(-1)
