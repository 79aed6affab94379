"""Reverse-mode automatic differentiation over dense float64 arrays.

Small dynamic-tape engine: every operation builds a node holding its value,
its parents, and a closure that routes the incoming gradient to the parents.
``backward`` walks the tape in reverse creation order, which is a valid
reverse-topological order because nodes are only ever built from existing
nodes.  All values are float64 and every op output is checked for NaN/Inf.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .validation import ContractViolation

# Log-probability written into masked slots: finite (keeps the all-finite
# invariant) but exp() underflows to exactly 0.0, so masked actions can
# never be sampled.
MASKED_LOGPROB = -1e30

_next_uid = itertools.count().__next__


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("non-finite value entering the graph")
    return arr


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "uid", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = _as_array(value)
        self.grad: np.ndarray | None = None
        self.uid = _next_uid()
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, uid={self.uid})"

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Fill ``grad`` slots of every reachable gradient-tracked node."""
        if self.value.size != 1:
            raise ContractViolation("backward requires a scalar loss")
        # Reverse creation order is a reverse-topological order: a node's
        # uid always exceeds its parents' uids.  Sorting by uid makes the
        # accumulation order deterministic and bit-reproducible.
        nodes: list[Tensor] = []
        seen = {self.uid}
        stack = [self]
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if p.requires_grad and p.uid not in seen:
                    seen.add(p.uid)
                    stack.append(p)
        nodes.sort(key=lambda n: n.uid, reverse=True)
        for node in nodes:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in nodes:
            if node._backward is not None:
                node._backward(node.grad)


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Build an op result; prune the tape when no parent tracks gradients."""
    if not any(p.requires_grad for p in parents):
        return Tensor(value)
    out = Tensor(value, requires_grad=True)
    out._parents = parents
    out._backward = backward
    return out


def zero_grads(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise and linear ops ------------------------------------------


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out_value = a.value + b.value

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.value.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.value.shape)

    return _make(out_value, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out_value = a.value - b.value

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.value.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.value.shape)

    return _make(out_value, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out_value = a.value * b.value

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.value, a.value.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.value, b.value.shape)

    return _make(out_value, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product for the 1D/2D combinations numpy's ``@`` accepts."""
    a, b = _ensure(a), _ensure(b)
    av, bv = a.value, b.value
    if av.ndim > 2 or bv.ndim > 2 or av.ndim == 0 or bv.ndim == 0:
        raise ContractViolation("matmul supports 1D and 2D operands only")
    out_value = av @ bv

    def backward(g):
        if a.requires_grad:
            if av.ndim == 1 and bv.ndim == 1:
                a.grad += g * bv
            elif av.ndim == 2 and bv.ndim == 2:
                a.grad += g @ bv.T
            elif av.ndim == 2:  # (m,k) @ (k,) -> (m,)
                a.grad += np.outer(g, bv)
            else:  # (k,) @ (k,n) -> (n,)
                a.grad += bv @ g
        if b.requires_grad:
            if av.ndim == 1 and bv.ndim == 1:
                b.grad += g * av
            elif av.ndim == 2 and bv.ndim == 2:
                b.grad += av.T @ g
            elif av.ndim == 2:
                b.grad += av.T @ g
            else:
                b.grad += np.outer(av, g)

    return _make(out_value, (a, b), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(_ensure(t) for t in tensors)
    out_value = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.grad += g[tuple(index)]

    return _make(out_value, tensors, backward)


def reshape(a, shape) -> Tensor:
    a = _ensure(a)
    out_value = a.value.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a.grad += g.reshape(a.value.shape)

    return _make(out_value, (a,), backward)


def flatten(a) -> Tensor:
    return reshape(a, (-1,))


def gather(a, indices) -> Tensor:
    """Select rows (axis 0) of ``a`` by integer index, with repeats allowed."""
    a = _ensure(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.value.shape[0]):
        raise ContractViolation("gather index out of range")
    out_value = a.value[idx]

    def backward(g):
        if a.requires_grad:
            np.add.at(a.grad, idx, g)

    return _make(out_value, (a,), backward)


def asum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _ensure(a)
    out_value = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.grad += g  # broadcasts over the summed axes

    return _make(out_value, (a,), backward)


def mean(a, axis=None) -> Tensor:
    a = _ensure(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return mul(asum(a, axis=axis), 1.0 / count)


def tanh(a) -> Tensor:
    a = _ensure(a)
    out_value = np.tanh(a.value)

    def backward(g):
        if a.requires_grad:
            a.grad += g * (1.0 - out_value * out_value)

    return _make(out_value, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _ensure(a)
    # overflow-safe for large |x|
    e = np.exp(-np.abs(a.value))
    out_value = np.where(a.value >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        if a.requires_grad:
            a.grad += g * out_value * (1.0 - out_value)

    return _make(out_value, (a,), backward)


def relu(a) -> Tensor:
    a = _ensure(a)
    out_value = np.maximum(a.value, 0.0)

    def backward(g):
        if a.requires_grad:
            a.grad += g * (a.value > 0.0)

    return _make(out_value, (a,), backward)


def masked_log_softmax(logits, mask) -> Tensor:
    """Log-softmax over the unmasked entries of the last axis.

    Masked entries are excluded from the normalization and receive the
    constant ``MASKED_LOGPROB`` (whose exp is exactly 0.0), so they carry
    no probability mass and no gradient.
    """
    logits = _ensure(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.value.shape:
        raise ContractViolation("mask shape must match logits shape")
    if not np.all(mask.any(axis=-1)):
        raise ContractViolation("mask must leave at least one entry feasible")
    x = logits.value
    row_max = np.max(np.where(mask, x, -np.inf), axis=-1, keepdims=True)
    shifted = np.where(mask, x - row_max, 0.0)
    weights = np.exp(shifted) * mask
    norm = weights.sum(axis=-1, keepdims=True)
    probs = weights / norm
    out_value = np.where(mask, shifted - np.log(norm), MASKED_LOGPROB)

    def backward(g):
        if logits.requires_grad:
            g_live = g * mask  # sentinel outputs are constants
            logits.grad += g_live - probs * g_live.sum(axis=-1, keepdims=True)

    return _make(out_value, (logits,), backward)


def gru_cell(x, h, params: dict) -> Tensor:
    """Gated recurrent update; ``x`` and ``h`` may carry a leading batch axis.

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    cand = tanh(x Wh + (r*h) Uh + bh), h' = (1 - z) * h + z * cand.
    """
    x, h = _ensure(x), _ensure(h)
    z = sigmoid(add(add(matmul(x, params["Wz"]), matmul(h, params["Uz"])), params["bz"]))
    r = sigmoid(add(add(matmul(x, params["Wr"]), matmul(h, params["Ur"])), params["br"]))
    cand = tanh(add(add(matmul(x, params["Wh"]), matmul(mul(r, h), params["Uh"])), params["bh"]))
    return add(mul(sub(1.0, z), h), mul(z, cand))


# Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        return state


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.value.shape:
            raise ContractViolation(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise ContractViolation(f"non-finite gradient for {name}")
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.all(np.isfinite(p.value)):
            raise ContractViolation(f"non-finite parameter after update: {name}")
    return state
