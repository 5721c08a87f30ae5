"""Layers built on the autodiff core: linear maps, norms, attention, encoders."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor carrying its name and Adam moments."""

    __slots__ = ("name", "m", "v")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)


class Module:
    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for key, value in vars(self).items():
            out.extend(_collect(value, f"{prefix}{key}"))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> list["Module"]:
        found = [self]
        for value in vars(self).values():
            found.extend(_submodules(value))
        return found

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise T.ShapeError(f"load_state_dict: {name} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
            p.m = np.zeros_like(p.data)
            p.v = np.zeros_like(p.data)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.m = np.zeros_like(p.data)
            p.v = np.zeros_like(p.data)
        return self


def _collect(value, name: str) -> list[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        return [(name, value)]
    if isinstance(value, Module):
        return value.named_parameters(prefix=name + ".")
    if isinstance(value, (list, tuple)):
        out = []
        for i, v in enumerate(value):
            out.extend(_collect(v, f"{name}.{i}"))
        return out
    return []


def _submodules(value) -> list[Module]:
    if isinstance(value, Module):
        return value.modules()
    if isinstance(value, (list, tuple)):
        return [m for v in value for m in _submodules(v)]
    return []


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float32):
        super().__init__()
        std = math.sqrt(2.0 / (d_in + d_out))
        self.weight = Parameter(rng.normal(0.0, std, (d_in, d_out)).astype(dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator, std: float = 0.02, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(rng.normal(0.0, std, (count, dim)).astype(dtype))

    def forward(self, ids) -> Tensor:
        return T.embedding(self.weight, ids)


class Dropout(Module):
    """Dropout drawing masks from a shared seeded generator."""

    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.p, self.rng, self.training)


class MLP(Module):
    """Linear -> activation -> Linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng, activation: str = "relu", dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(d_in, d_hidden, rng, dtype=dtype)
        self.fc2 = Linear(d_hidden, d_out, rng, dtype=dtype)
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        h = T.relu(h) if self.activation == "relu" else T.gelu(h)
        return self.fc2(h)


def attention_mask(valid: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Additive key mask of shape (B, 1, 1, T) from a boolean (B, T) validity array."""
    valid = np.asarray(valid, dtype=bool)
    mask = np.where(valid, 0.0, -1e9).astype(dtype)
    return mask[:, None, None, :]


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng, dropout: float = 0.0, drop_rng=None, dtype=np.float32):
        super().__init__()
        if dim % heads:
            raise ValueError(f"embed dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng, dtype=dtype)
        self.out = Linear(dim, dim, rng, dtype=dtype)
        self.drop = Dropout(dropout, drop_rng)

    def forward(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, t, d = x.shape
        h = self.heads
        dh = d // h
        qkv = self.qkv(x).reshape(b, t, 3, h, dh)
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, H, T, dh)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = T.scale(T.matmul(q, k.T), 1.0 / math.sqrt(dh))
        attn = self.drop(T.softmax(scores, axis=-1, mask=mask))
        ctx = T.transpose(T.matmul(attn, v), (0, 2, 1, 3)).reshape(b, t, d)
        return self.out(ctx)


class EncoderLayer(Module):
    """Post-norm transformer block (self-attention then GELU feed-forward)."""

    def __init__(self, dim: int, heads: int, ff_dim: int, rng, dropout: float = 0.0, drop_rng=None, dtype=np.float32):
        super().__init__()
        self.attn = MultiHeadAttention(dim, heads, rng, dropout, drop_rng, dtype)
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.ff = MLP(dim, ff_dim, dim, rng, activation="gelu", dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.drop = Dropout(dropout, drop_rng)

    def forward(self, x: Tensor, mask=None) -> Tensor:
        x = self.norm1(x + self.drop(self.attn(x, mask)))
        return self.norm2(x + self.drop(self.ff(x)))


class Encoder(Module):
    def __init__(self, layers: int, dim: int, heads: int, ff_dim: int, rng, dropout=0.0, drop_rng=None, dtype=np.float32):
        super().__init__()
        self.layers = [EncoderLayer(dim, heads, ff_dim, rng, dropout, drop_rng, dtype) for _ in range(layers)]

    def forward(self, x: Tensor, mask=None) -> Tensor:
        for layer in self.layers:
            x = layer(x, mask)
        return x
