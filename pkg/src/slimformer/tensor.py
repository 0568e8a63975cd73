"""Dense float64 tensors with define-by-run reverse-mode gradients.

The graph is rebuilt on every forward pass, which keeps approximated models
(whose structure changes from plan to plan) trivially correct. Everything is
float64 so finite-difference gradient checks can be tight.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327

# thread-local so models training in parallel threads stay independent
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation passes)."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64): identical seed, identical stream."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rng(seed: int, *key: int) -> np.random.Generator:
    """Derive an independent stream from a base seed and an integer key path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))


class Tensor:
    """Rank-1..3 float64 array, optionally tracked by the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 3:
            raise ValueError(f"rank {arr.ndim} tensor not supported (max rank 3)")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._grad_fn = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self):
        """Populate .grad on every reachable requires_grad tensor.

        Only scalar losses may seed a backward pass; calling it twice on the
        same loss without rebuilding the graph is an error.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        if self._backward_done:
            raise RuntimeError("backward() already called on this loss; rebuild the graph first")
        self._backward_done = True

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._grad_fn is None or node.grad is None:
                continue
            parent_grads = node._grad_fn(node.grad)
            for parent, pgrad in zip(node._parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pgrad


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple, grad_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), grad_fn)


def matmul(a, b) -> Tensor:
    """Matrix product: 2D@2D, batched 3D@3D, or 3D activations @ 2D weights."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    if a.data.ndim == 3 and b.data.ndim == 2:
        data = a.data @ b.data

        def grad_fn(g):
            ga = g @ b.data.T
            gb = np.tensordot(a.data, g, axes=([0, 1], [0, 1]))
            return ga, gb

        return _result(data, (a, b), grad_fn)
    if a.data.ndim == b.data.ndim and a.data.ndim in (2, 3):
        data = a.data @ b.data

        def grad_fn(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return ga, gb

        return _result(data, (a, b), grad_fn)
    raise ValueError(f"matmul rank combination not supported: {a.data.shape} @ {b.data.shape}")


def transpose_last(a: Tensor) -> Tensor:
    data = np.swapaxes(a.data, -1, -2)

    def grad_fn(g):
        return (np.swapaxes(g, -1, -2),)

    return _result(data, (a,), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(a.data.shape),)

    return _result(data, (a,), grad_fn)


def slice_last(a: Tensor, lo: int, hi: int) -> Tensor:
    """Columns [lo, hi) along the last axis."""
    data = a.data[..., lo:hi]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        ga[..., lo:hi] = g
        return (ga,)

    return _result(data, (a,), grad_fn)


def concat_last(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def grad_fn(g):
        grads, ofs = [], 0
        for w in widths:
            grads.append(g[..., ofs:ofs + w])
            ofs += w
        return tuple(grads)

    return _result(data, tuple(parts), grad_fn)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows along axis -2. For rank 3, indices may be per-batch [B, K]."""
    idx = np.asarray(indices, dtype=np.int64)
    if a.data.ndim == 2:
        data = a.data[idx]

        def grad_fn(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            return (ga,)

        return _result(data, (a,), grad_fn)
    if idx.ndim == 1:
        idx = np.broadcast_to(idx, (a.data.shape[0], idx.shape[0]))
    batch = np.arange(a.data.shape[0])[:, None]
    data = a.data[batch, idx]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (batch, idx), g)
        return (ga,)

    return _result(data, (a,), grad_fn)


def split_heads(a: Tensor, heads: int) -> Tensor:
    """[B, n, h*dh] -> [B*h, n, dh] (rank-2 input becomes [h, n, dh]),
    folding heads into the batch axis so attention stays rank-3."""
    x = a.data if a.data.ndim == 3 else a.data[None]
    b, n, d = x.shape
    dh = d // heads
    data = x.reshape(b, n, heads, dh).transpose(0, 2, 1, 3).reshape(b * heads, n, dh)

    def grad_fn(g):
        ga = g.reshape(b, heads, n, dh).transpose(0, 2, 1, 3).reshape(b, n, d)
        return (ga if a.data.ndim == 3 else ga[0],)

    return _result(data, (a,), grad_fn)


def merge_heads(a: Tensor, heads: int, squeeze: bool = False) -> Tensor:
    """[B*h, n, dh] -> [B, n, h*dh]; squeeze drops a singleton batch."""
    bh, n, dh = a.data.shape
    b = bh // heads
    data = a.data.reshape(b, heads, n, dh).transpose(0, 2, 1, 3).reshape(b, n, heads * dh)
    if squeeze:
        data = data[0]

    def grad_fn(g):
        gg = g[None] if squeeze else g
        return (gg.reshape(b, n, heads, dh).transpose(0, 2, 1, 3).reshape(bh, n, dh),)

    return _result(data, (a,), grad_fn)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        return (gt,)

    return _result(data, (table,), grad_fn)


def mean_rows(a: Tensor) -> Tensor:
    """Mean over the position axis (-2): [.., n, d] -> [.., d]."""
    n = a.data.shape[-2]
    data = a.data.mean(axis=-2)

    def grad_fn(g):
        return (np.repeat(np.expand_dims(g / n, -2), n, axis=-2),)

    return _result(data, (a,), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    data = np.array([a.data.sum()])

    def grad_fn(g):
        return (np.full_like(a.data, g.reshape(-1)[0]),)

    return _result(data, (a,), grad_fn)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * cdf

    def grad_fn(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _result(data, (a,), grad_fn)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax along the last axis, max-subtracted for stability."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _result(p, (a,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of the last axis to zero mean/unit variance,
    then scale by gamma and shift by beta."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data
    d = x.data.shape[-1]

    def grad_fn(g):
        lead = tuple(range(g.ndim - 1))
        gbeta = g.sum(axis=lead)
        ggamma = (g * xhat).sum(axis=lead)
        gx_hat = g * gamma.data
        gx = inv * (gx_hat
                    - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True) / d)
        return gx, ggamma, gbeta

    return _result(data, (x, gamma, beta), grad_fn)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under row softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ValueError(f"cross_entropy expects [n, classes] logits, got {logits.data.shape}")
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ValueError(f"labels length {labels.shape} does not match {n} rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    nll = logz - shifted[np.arange(n), labels]
    data = np.array([nll.mean()])

    def grad_fn(g):
        p = np.exp(shifted - logz[:, None])
        p[np.arange(n), labels] -= 1.0
        return (g.reshape(-1)[0] * p / n,)

    return _result(data, (logits,), grad_fn)
