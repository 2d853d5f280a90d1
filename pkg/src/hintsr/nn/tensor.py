"""Minimal reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar walks the graph once in reverse topological order
and accumulates gradients into every reachable tensor with
``requires_grad=True``.  Compute and reductions follow the input dtype
(float32 for training, float64 for gradient checks); numpy's pairwise
summation keeps float32 reductions accurate at these operand sizes.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ) -> None:
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    # -- backward ------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse accumulation from this tensor (scalar unless grad given)."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}

        def sink(t: Tensor) -> Callable[[np.ndarray], None]:
            def put(g: np.ndarray) -> None:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g

            return put

        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                node._backward_dispatch(g, sink)

    def _backward_dispatch(self, g, sink) -> None:
        # _backward closures receive (upstream grad, per-parent accumulators)
        self._backward(g, [sink(p) for p in self._parents])  # type: ignore[misc]


class Parameter(Tensor):
    """A leaf tensor updated by the optimizer."""

    __slots__ = ()

    def __init__(self, data) -> None:
        super().__init__(np.asarray(data), requires_grad=True)


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Convert operands to Tensors, keeping Python scalars dtype-neutral."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.ndim(b) == 0:
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.ndim(a) == 0:
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return ensure_tensor(a), ensure_tensor(b)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        return Tensor(data, requires_grad=False, _parents=parents, _backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data + b.data

    def backward(g, acc):
        acc[0](_unbroadcast(g, a.data.shape))
        acc[1](_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data - b.data

    def backward(g, acc):
        acc[0](_unbroadcast(g, a.data.shape))
        acc[1](_unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data * b.data

    def backward(g, acc):
        acc[0](_unbroadcast(g * b.data, a.data.shape))
        acc[1](_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b where b is either a 2-d weight or has a's batch shape exactly."""
    a, b = ensure_tensor(a), ensure_tensor(b)
    if b.ndim != 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(
            f"batched matmul needs equal batch dims, got {a.shape} @ {b.shape}"
        )
    out = a.data @ b.data

    def backward(g, acc):
        if b.ndim == 2:
            acc[0](g @ b.data.T)
            k = a.data.shape[-1]
            n = g.shape[-1]
            acc[1](a.data.reshape(-1, k).T @ g.reshape(-1, n))
        else:
            acc[0](g @ b.data.swapaxes(-1, -2))
            acc[1](a.data.swapaxes(-1, -2) @ g)

    return _make(out, (a, b), backward)


def linear(a: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ W (+ b) as one node: one gemm forward, two gemms + a sum back."""
    a = ensure_tensor(a)
    out = a.data @ weight.data
    if bias is not None:
        out += bias.data
    k = a.data.shape[-1]

    def backward(g, acc):
        n = g.shape[-1]
        acc[0](g @ weight.data.T)
        acc[1](a.data.reshape(-1, k).T @ g.reshape(-1, n))
        if bias is not None:
            acc[2](g.reshape(-1, n).sum(axis=0))

    parents = (a, weight) if bias is None else (a, weight, bias)
    return _make(out, parents, backward)


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    """a + const where const never needs a gradient (masks, position tables)."""
    a = ensure_tensor(a)
    out = a.data + const

    def backward(g, acc):
        acc[0](g)

    return _make(out, (a,), backward)


def scale(a: Tensor, s: float) -> Tensor:
    """a * s for a python scalar s (no gradient for s, no unbroadcast sum)."""
    a = ensure_tensor(a)
    out = a.data * s

    def backward(g, acc):
        acc[0](g * s)

    return _make(out, (a,), backward)


def broadcast_rows(a: Tensor, b: int) -> Tensor:
    """(1, ...) -> (b, ...) repeat along a new leading batch dimension."""
    a = ensure_tensor(a)
    out = np.ascontiguousarray(np.broadcast_to(a.data, (b,) + a.data.shape[1:]))

    def backward(g, acc):
        acc[0](g.sum(axis=0, keepdims=True))

    return _make(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = ensure_tensor(a)
    out = a.data.reshape(shape)

    def backward(g, acc):
        acc[0](g.reshape(a.data.shape))

    return _make(out, (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    a = ensure_tensor(a)
    out = a.data.swapaxes(ax1, ax2)

    def backward(g, acc):
        acc[0](g.swapaxes(ax1, ax2))

    return _make(out, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g, acc):
        if axis is None:
            acc[0](np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        acc[0](np.broadcast_to(gg, a.data.shape).copy())

    return _make(out, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = ensure_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def relu(a: Tensor) -> Tensor:
    a = ensure_tensor(a)
    out = np.maximum(a.data, 0)

    def backward(g, acc):
        acc[0](g * (a.data > 0))

    return _make(out, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax that tolerates -inf entries (masked scores).

    Fully masked rows come out as all zeros instead of NaN so that padded
    queries stay inert.
    """
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    denom = e.sum(axis=axis, keepdims=True)
    p = e / np.where(denom == 0, 1.0, denom)

    def backward(g, acc):
        inner = (g * p).sum(axis=axis, keepdims=True)
        acc[0](p * (g - inner))

    return _make(p, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    s = x - m
    lse = np.log(np.exp(s).sum(axis=axis, keepdims=True))
    out = s - lse

    def backward(g, acc):
        gsum = g.sum(axis=axis, keepdims=True)
        acc[0](g - np.exp(out) * gsum)

    return _make(out, (a,), backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = weight[ids[...]]."""
    ids = np.asarray(ids)
    out = weight.data[ids]

    def backward(g, acc):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.data.shape[-1]))
        acc[0](gw)

    return _make(out, (weight,), backward)


def gather_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """out[...] = a[..., idx[...]] for an index array matching a's batch shape."""
    idx = np.asarray(idx)
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def backward(g, acc):
        ga = np.zeros_like(a.data)
        flat = ga.reshape(-1, ga.shape[-1])
        np.add.at(flat, (np.arange(flat.shape[0]), idx.reshape(-1)), g.reshape(-1))
        acc[0](ga)

    return _make(out, (a,), backward)


def layernorm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with learned gain and bias."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g, acc):
        n = x.shape[-1]
        dxhat = g * gain.data
        t1 = dxhat.sum(axis=-1, keepdims=True)
        t2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
        acc[0]((inv / n) * (n * dxhat - t1 - xhat * t2))
        reduce_axes = tuple(range(g.ndim - 1))
        acc[1]((g * xhat).sum(axis=reduce_axes))
        acc[2](g.sum(axis=reduce_axes))

    return _make(out, (a, gain, bias), backward)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    rng: np.random.Generator,
    samples_per_tensor: int = 4,
    step: float = 1e-3,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``fn`` recomputes the scalar loss from the live parameter tensors, which
    should hold float64 data for the comparison to be meaningful.
    """
    for p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    for p in params:
        if p.grad is None:
            raise ValueError("parameter received no gradient")
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        count = min(samples_per_tensor, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        for c in coords:
            orig = flat[c]
            analytic = float(gflat[c])
            best = np.inf
            # A rectifier kink inside the difference window corrupts the
            # numeric estimate; retry with a shrunken step before failing.
            for h in (step, step / 16, step / 256):
                flat[c] = orig + h
                up = fn().item()
                flat[c] = orig - h
                down = fn().item()
                flat[c] = orig
                numeric = (up - down) / (2 * h)
                denom = max(abs(analytic), abs(numeric), 1e-6)
                best = min(best, abs(analytic - numeric) / denom)
                if best < 1e-6:
                    break
            worst = max(worst, best)
    return worst
