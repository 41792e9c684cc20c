"""Parameter store, dense layers and a position-free transformer encoder."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .tensor import ShapeError, Tensor, layer_norm, leaky_relu, linear, matmul, softmax, tensor

LEAKY_SLOPE = 0.01


class ParamStore:
    """Ordered name -> Tensor map; creation order fixes the checkpoint layout."""

    def __init__(self, seed: int = 0, rng: Optional[np.random.Generator] = None):
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def param(self, name: str, shape: tuple, bound: Optional[float] = None, fill: Optional[float] = None) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        if fill is not None:
            data = np.full(shape, float(fill))
        else:
            data = self.rng.uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def tensors(self, prefix: str = "") -> list[Tensor]:
        return [t for n, t in self._params.items() if n.startswith(prefix)]

    def zero_grad(self, prefix: str = "") -> None:
        for t in self.tensors(prefix):
            t.grad = None

    def copy_prefix(self, src: str, dst: str) -> None:
        """Hard copy: every ``src...`` value into the matching ``dst...`` tensor."""
        for name in self.names(src):
            target = self._params[dst + name[len(src):]]
            target.data = self._params[name].data.copy()

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data.copy()) for n, t in self._params.items())

    def load_state(self, state) -> None:
        missing = [n for n in self._params if n not in state]
        if missing:
            raise KeyError(f"state lacks parameters: {missing[:5]}")
        for n, t in self._params.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{n}: stored shape {arr.shape} != {t.shape}")
            t.data = arr.copy()


class Dense:
    """Affine map with uniform fan-in initialisation, weights stored (in, out)."""

    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int):
        bound = 1.0 / math.sqrt(n_in)
        self.n_in, self.n_out = n_in, n_out
        self.weight = store.param(f"{name}.w", (n_in, n_out), bound)
        self.bias = store.param(f"{name}.b", (n_out,), bound)

    def __call__(self, x) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.gamma = store.param(f"{name}.g", (dim,), fill=1.0)
        self.beta = store.param(f"{name}.b", (dim,), fill=0.0)
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Stack:
    """Dense layers with LeakyReLU between them (and after the last when ``act_last``)."""

    def __init__(self, store: ParamStore, name: str, widths: list[int], act_last: bool = True):
        self.layers = [Dense(store, f"{name}.{i}", a, b) for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]
        self.act_last = act_last

    def __call__(self, x) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.act_last:
                x = leaky_relu(x, LEAKY_SLOPE)
        return x


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    model_dim: int = 32
    heads: int = 2
    ff_dim: int = 64

    def __post_init__(self):
        if self.layers < 0 or self.model_dim < 1 or self.heads < 1 or self.ff_dim < 1:
            raise ValueError("encoder sizes must be positive")
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")


class SelfAttention:
    def __init__(self, store: ParamStore, name: str, dim: int, heads: int):
        self.heads, self.dim = heads, dim
        self.qkv = Dense(store, f"{name}.qkv", dim, 3 * dim)
        self.out = Dense(store, f"{name}.out", dim, dim)

    def __call__(self, x: Tensor) -> Tensor:
        # x: (B, N, D)
        b, n, d = x.shape
        h, dh = self.heads, d // self.heads
        qkv = self.qkv(x).reshape(b, n, 3, h, dh).transpose(2, 0, 3, 1, 4)  # (3, B, H, N, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        mixed = matmul(softmax(scores, axis=-1), v)  # (B, H, N, dh)
        return self.out(mixed.transpose(0, 2, 1, 3).reshape(b, n, d))


class EncoderBlock:
    """Pre-norm block: x + Attn(LN(x)), then x + FF(LN(x))."""

    def __init__(self, store: ParamStore, name: str, cfg: EncoderConfig):
        self.ln1 = LayerNorm(store, f"{name}.ln1", cfg.model_dim)
        self.attn = SelfAttention(store, f"{name}.attn", cfg.model_dim, cfg.heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", cfg.model_dim)
        self.ff = Stack(store, f"{name}.ff", [cfg.model_dim, cfg.ff_dim, cfg.model_dim], act_last=False)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class Encoder:
    """Transformer encoder over the node set. No positional encoding: rows are a set."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, cfg: EncoderConfig | None = None):
        self.cfg = cfg or EncoderConfig()
        self.in_dim = in_dim
        self.embed = Dense(store, f"{name}.embed", in_dim, self.cfg.model_dim)
        self.blocks = [EncoderBlock(store, f"{name}.block{i}", self.cfg) for i in range(self.cfg.layers)]
        self.ln = LayerNorm(store, f"{name}.ln", self.cfg.model_dim)

    def __call__(self, x) -> Tensor:
        x = tensor(x)
        if x.ndim not in (2, 3) or x.shape[-1] != self.in_dim:
            raise ShapeError(f"encoder expects (N, {self.in_dim}) or (B, N, {self.in_dim}), got {x.shape}")
        if x.shape[-2] < 1:
            raise ShapeError("encoder needs at least one row")
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        h = self.embed(x)
        for block in self.blocks:
            h = block(h)
        h = self.ln(h)
        return h.reshape(h.shape[1:]) if squeeze else h
