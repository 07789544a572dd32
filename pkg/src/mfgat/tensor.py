"""Dense float64 tensors with reverse-mode gradient propagation.

A Tensor wraps a numpy array plus a gradient slot and the tape links needed
for backpropagation. Ops build the tape implicitly; calling ``backward()`` on
a scalar result walks the tape once (iteratively, so deep unrolls such as a
200-step recurrence do not hit the interpreter recursion limit) and
accumulates gradients into every upstream tensor.

Gradient accumulation is single-owner: a forward graph belongs to one
backward pass. All math is float64; callers that need float32 (dataset
files) convert at the I/O boundary.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "affine",
    "matmul",
    "concat",
    "reshape",
    "swap_last2",
    "sigmoid",
    "tanh",
    "leaky_relu",
    "softmax",
    "masked_softmax",
    "dropout",
    "cross_entropy",
    "dft_magnitude",
    "grad_check",
]


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        src_shape = self.shape

        def bwd(g, key=key, src_shape=src_shape):
            full = np.zeros(src_shape)
            np.add.at(full, key, g)
            return (full,)

        return Tensor(self.data[key], (self,), bwd)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    # -- backward pass ---------------------------------------------------
    def backward(self, grad=None):
        """Accumulate gradients of this (scalar, unless grad given) output."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without grad requires a scalar output")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=np.float64)

        order = _toposort(self)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, pg in zip(node._parents, node._backward(node.grad)):
                if pg is None:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg


def _toposort(root):
    # Iterative post-order DFS; unrolled recurrences make graphs deeper than
    # the interpreter recursion limit.
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data) -> Tensor:
    """Create a leaf tensor (no tape history)."""
    return Tensor(data)


def _unbroadcast(g, shape):
    """Sum gradient g down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic primitives -------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch-broadcast semantics (operands 2-D+)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return Tensor(out, (a, b), bwd)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b with the bias broadcast across rows."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"affine shape mismatch: x {x.shape} vs w {w.shape}")
    if w.shape[-1] != b.shape[-1]:
        raise ValueError(f"affine bias mismatch: w {w.shape} vs b {b.shape}")
    return add(matmul(x, w), b)


def concat(tensors, axis=-1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, tuple(tensors), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def swap_last2(a: Tensor) -> Tensor:
    return Tensor(a.data.swapaxes(-1, -2), (a,), lambda g: (g.swapaxes(-1, -2),))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, (a,), bwd)


# -- activations ------------------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor(out, (x,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = np.where(x.data >= 0, x.data, slope * x.data)
    return Tensor(out, (x,), lambda g: (g * np.where(x.data >= 0, 1.0, slope),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; slices along ``axis`` sum to one."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return Tensor(out, (x,), bwd)


def masked_softmax(x: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax restricted to entries where ``mask`` is true.

    Masked entries get exactly zero weight and receive zero gradient. Every
    slice along ``axis`` must contain at least one allowed entry.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=axis).all():
        raise ValueError("masked_softmax: a slice has an empty neighborhood")
    neg_inf = np.where(mask, x.data, -np.inf)
    shifted = neg_inf - neg_inf.max(axis=axis, keepdims=True)
    ex = np.where(mask, np.exp(shifted), 0.0)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return Tensor(out, (x,), bwd)


# -- regularization / loss ---------------------------------------------------


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Identity when not training or p == 0. The mask comes from ``rng`` so a
    seeded run reproduces its masks exactly.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout requires an rng")
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return Tensor(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class over the batch.

    Fused primitive: backward is (softmax - onehot) / n, exact.
    """
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label index out of range")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logprobs = shifted - logsumexp
    loss = -logprobs[np.arange(n), labels].mean()

    def bwd(g):
        probs = np.exp(logprobs)
        probs[np.arange(n), labels] -= 1.0
        return (g * probs / n,)

    return Tensor(loss, (logits,), bwd)


# -- spectral transform -------------------------------------------------------


def dft_magnitude(x) -> Tensor:
    """Per-row magnitude of the full-length DFT, |F(m)| for m = 0..L-1.

    Forward-only by contract: the transform is applied to raw inputs before
    any learnable layer, so no gradient flows through it. The result is a
    leaf tensor.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    return Tensor(np.abs(np.fft.fft(data, axis=-1)))


# -- verification harness -----------------------------------------------------


def grad_check(f, points, eps: float = 1e-5) -> float:
    """Max relative error between backward-pass and central-difference grads.

    ``f`` maps the given leaf tensor(s) to a scalar Tensor. Every coordinate
    of every point is probed. Error metric per coordinate:
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if isinstance(points, Tensor):
        points = [points]
    for p in points:
        p.zero_grad()
    out = f(*points)
    if not np.isfinite(out.data).all():
        raise ValueError("grad_check: function value is not finite")
    out.backward()

    worst = 0.0
    for p in points:
        analytic = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = f(*points).item()
            flat[k] = orig - eps
            fm = f(*points).item()
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError("grad_check: function not finite at probe point")
            numeric = (fp - fm) / (2 * eps)
            denom = max(abs(aflat[k]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[k] - numeric) / denom)
    return worst
