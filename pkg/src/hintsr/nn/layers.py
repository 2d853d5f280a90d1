"""Transformer building blocks on top of the tensor engine."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import (
    Parameter,
    Tensor,
    add,
    add_const,
    broadcast_rows,
    embedding,
    layernorm,
    linear,
    matmul,
    relu,
    scale,
    softmax,
)

__all__ = [
    "Module", "Linear", "Embedding", "LayerNorm", "MultiHeadAttention",
    "FeedForward", "EncoderBlock", "PoolingBlock", "DecoderBlock",
    "key_padding_mask", "causal_mask", "sinusoidal_positions",
]


class Module:
    """Parameter container; discovers children through instance attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self.__dict__.items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]


class Linear(Module):
    def __init__(
        self,
        n_in: int,
        n_out: int,
        rng: np.random.Generator,
        bias: bool = True,
        std: float = 0.02,
        dtype=np.float32,
    ) -> None:
        self.weight = Parameter(rng.normal(0.0, std, (n_in, n_out)).astype(dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, n_tokens: int, dim: int, rng: np.random.Generator, dtype=np.float32) -> None:
        self.weight = Parameter(rng.normal(0.0, 0.02, (n_tokens, dim)).astype(dtype))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return embedding(self.weight, ids)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32) -> None:
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.bias = Parameter(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gain, self.bias)


def key_padding_mask(keep: np.ndarray, dtype=np.float32) -> np.ndarray:
    """(B, Tk) boolean keep-mask -> (B, 1, 1, Tk) additive mask of 0 / -inf."""
    mask = np.where(keep, 0.0, -np.inf).astype(dtype)
    return mask[:, None, None, :]


def causal_mask(t: int, dtype=np.float32) -> np.ndarray:
    """(1, 1, T, T) additive mask hiding future positions."""
    m = np.full((t, t), -np.inf, dtype=dtype)
    m = np.triu(m, k=1)
    return m[None, None, :, :]


def sinusoidal_positions(max_len: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Standard fixed sine/cosine position table, shape (max_len, dim)."""
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(dim // 2)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2 * i / dim)
    table = np.zeros((max_len, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dtype)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32) -> None:
        if dim % heads != 0:
            raise ValueError(f"hidden dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.dk = dim // heads
        self.wq = Linear(dim, dim, rng, dtype=dtype)
        self.wk = Linear(dim, dim, rng, dtype=dtype)
        self.wv = Linear(dim, dim, rng, dtype=dtype)
        self.wo = Linear(dim, dim, rng, dtype=dtype)

    def __call__(self, q_in: Tensor, kv_in: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, tq, dim = q_in.shape
        tk = kv_in.shape[1]

        def split(x: Tensor, t: int) -> Tensor:
            return x.reshape((b, t, self.heads, self.dk)).swapaxes(1, 2)

        q = split(self.wq(q_in), tq)
        k = split(self.wk(kv_in), tk)
        v = split(self.wv(kv_in), tk)
        scores = scale(matmul(q, k.swapaxes(2, 3)), 1.0 / float(np.sqrt(self.dk)))
        if mask is not None:
            scores = add_const(scores, mask)
        attn = softmax(scores, axis=-1)
        out = matmul(attn, v).swapaxes(1, 2).reshape((b, tq, dim))
        return self.wo(out)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32) -> None:
        self.up = Linear(dim, hidden, rng, dtype=dtype)
        self.down = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(relu(self.up(x)))


class EncoderBlock(Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, heads: int, ff_mult: int, rng: np.random.Generator, dtype=np.float32) -> None:
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.ff = FeedForward(dim, dim * ff_mult, rng, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.attn(h, h, mask))
        x = add(x, self.ff(self.ln2(x)))
        return x


class PoolingBlock(Module):
    """Cross-attention from S learned latent seeds onto a masked point set.

    The output is one (S, dim) summary per batch row; with key masking it is
    invariant to the order of the input set.
    """

    def __init__(self, slots: int, dim: int, heads: int, ff_mult: int,
                 rng: np.random.Generator, dtype=np.float32) -> None:
        self.seeds = Parameter(rng.normal(0.0, 0.02, (slots, dim)).astype(dtype))
        self.ln_kv = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.ff = FeedForward(dim, dim * ff_mult, rng, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b = x.shape[0]
        slots, dim = self.seeds.shape
        seeds = broadcast_rows(self.seeds.reshape((1, slots, dim)), b)
        z = add(seeds, self.attn(seeds, self.ln_kv(x), mask))
        z = add(z, self.ff(self.ln2(z)))
        return z


class DecoderBlock(Module):
    """Pre-norm causal self-attention + cross-attention + feed-forward."""

    def __init__(self, dim: int, heads: int, ff_mult: int, rng: np.random.Generator, dtype=np.float32) -> None:
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.self_attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.cross_attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.ln3 = LayerNorm(dim, dtype=dtype)
        self.ff = FeedForward(dim, dim * ff_mult, rng, dtype=dtype)

    def __call__(self, x: Tensor, memory: Tensor, self_mask: np.ndarray) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.self_attn(h, h, self_mask))
        x = add(x, self.cross_attn(self.ln2(x), memory))
        x = add(x, self.ff(self.ln3(x)))
        return x
