"""Parameter containers and transformer building blocks.

Modules register parameters as plain attributes; ``named_parameters``
walks attributes in definition order, so checkpoint layouts are stable.
Pre-norm encoder blocks (LN -> attention -> residual, LN -> MLP -> residual)
with a final LayerNorm after the stack.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ShapeError
from . import tensor as T
from .tensor import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) resampled until all values lie within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    for _ in range(16):
        bad = np.abs(out) > 2 * std
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return np.clip(out, -2 * std, 2 * std)


class Module:
    """Base class: parameter discovery, freezing, state round trips."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = True

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy arrays into matching parameters; returns names that were loaded."""
        own = dict(self.named_parameters())
        loaded = []
        for name, value in state.items():
            if name not in own:
                if strict:
                    raise ShapeError(f"unknown parameter in state: {name}")
                continue
            p = own[name]
            if tuple(value.shape) != p.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {tuple(value.shape)} vs model {p.shape}")
            p.data = value.astype(p.data.dtype).copy()
            loaded.append(name)
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise ShapeError(f"missing parameters in state: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        return loaded


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = parameter(trunc_normal(rng, (d_in, d_out)))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        return T.add(out, self.bias) if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(d))
        self.beta = parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class MultiHeadAttention(Module):
    """Full (joint) self-attention over (N, L, d) token stacks."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ShapeError(f"hidden width {d} not divisible by {heads} heads")
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.heads = heads
        self.head_dim = d // heads

    def __call__(self, x: Tensor) -> Tensor:
        n, length, d = x.shape
        h, hd = self.heads, self.head_dim

        def split(t: Tensor) -> Tensor:  # (N, L, d) -> (N, h, L, hd)
            return T.transpose(T.reshape(t, (n, length, h, hd)), (0, 2, 1, 3))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        attn = T.softmax_lastdim(scores)
        ctx = T.matmul(attn, v)  # (N, h, L, hd)
        merged = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (n, length, d))
        return self.out(merged)


class FeedForward(Module):
    def __init__(self, d: int, mlp_ratio: float, rng: np.random.Generator):
        hidden = int(round(d * mlp_ratio))
        self.fc1 = Linear(d, hidden, rng)
        self.fc2 = Linear(hidden, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class EncoderBlock(Module):
    def __init__(self, d: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.mlp = FeedForward(d, mlp_ratio, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self.attn(self.ln1(x)))
        return T.add(x, self.mlp(self.ln2(x)))


class TransformerEncoder(Module):
    def __init__(self, d: int, layers: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        self.blocks = [EncoderBlock(d, heads, mlp_ratio, rng) for _ in range(layers)]
        self.ln_out = LayerNorm(d)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.ln_out(x)


class PositionalEncoding(Module):
    """Trainable additive encodings over token positions."""

    def __init__(self, max_len: int, d: int, rng: np.random.Generator):
        self.table = parameter(trunc_normal(rng, (max_len, d)))
        self.max_len = max_len

    def __call__(self, x: Tensor) -> Tensor:
        length = x.shape[-2]
        if length > self.max_len:
            raise ShapeError(f"sequence length {length} exceeds positional capacity {self.max_len}")
        return T.add(x, self.table[:length])
