"""Dense float64 matrix primitives and a reverse-mode gradient tape.

Everything runs in 64-bit floats on plain numpy arrays. Arrays may carry
leading batch dimensions: an operand of shape (B, m, n) is treated as a
stack of B matrices. Summation order inside each primitive is numpy's
fixed order for a given shape, so identical inputs give bit-identical
outputs on one machine.

The tape records primitive applications in execution order; the backward
pass replays the records once, in reverse, accumulating adjoints. That is
enough to differentiate the attention model, the feed-forward blocks, the
MLP head and the pinball loss used elsewhere in this package.
"""

from __future__ import annotations

import warnings
from typing import Callable, Sequence

import numpy as np


class GradientError(ValueError):
    pass


def check_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate and return a 2-D float64 row-major matrix."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entries")
    return a


def relu(x) -> np.ndarray:
    """Elementwise max(x, 0)."""
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("relu: non-finite entries")
    return np.maximum(a, 0.0)


def _softmax_cols_value(scores: np.ndarray, valid: np.ndarray) -> np.ndarray:
    # Masked entries are excluded from both the max and the normalization
    # (no -inf injection), and come out exactly 0.
    if not valid.any(axis=-2).all():
        raise ValueError("empty attention column")
    neg = np.where(valid, scores, -np.inf)
    m = neg.max(axis=-2, keepdims=True)
    shifted = np.where(valid, scores - m, 0.0)
    e = np.exp(shifted) * valid
    return e / e.sum(axis=-2, keepdims=True)


def _broadcast_valid(scores: np.ndarray, mask) -> np.ndarray:
    """Mask of valid entries, same shape as scores.

    `mask` marks valid row indices: either per column-entry (same shape as
    scores) or a row-validity vector shared by all columns (shape (..., n)).
    """
    m = np.asarray(mask, dtype=bool)
    if m.shape == scores.shape:
        return m
    # (..., n) row validity -> one column of the score matrix
    if m.shape == scores.shape[:-1]:
        return np.broadcast_to(m[..., :, None], scores.shape)
    raise ValueError(
        f"softmax_cols: mask shape {m.shape} incompatible with scores {scores.shape}"
    )


def softmax_cols(scores, mask=None) -> np.ndarray:
    """Column-wise softmax with entry masking.

    Each output column sums to 1 over its valid entries; masked entries are
    exactly 0. Numerically stabilized by subtracting the per-column max of
    the valid entries.
    """
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("softmax_cols: non-finite scores")
    if mask is None:
        valid = np.ones_like(s, dtype=bool)
    else:
        valid = _broadcast_valid(s, mask)
    return _softmax_cols_value(s, valid)


def layernorm_cols_value(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Standardize each column over its rows: (x - mean) / sqrt(var + eps)."""
    mu = x.mean(axis=-2, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-2, keepdims=True)
    return xc * (1.0 / np.sqrt(var + eps))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """A value on a tape. Holds the forward result and its record index."""

    __slots__ = ("value", "tape", "idx")

    def __init__(self, value: np.ndarray, tape: "Tape", idx: int):
        self.value = value
        self.tape = tape
        self.idx = idx

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Records primitive applications for one computation.

    Not shared between computations: build a fresh tape per forward pass.
    Backward replays each record exactly once in reverse order, which is a
    reverse topological order because operands always precede results.
    """

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._backward: list[Callable | None] = []
        self._values: list[np.ndarray] = []

    def _push(self, value, parents: tuple[int, ...], backward) -> Node:
        v = np.asarray(value, dtype=np.float64)
        idx = len(self._values)
        self._values.append(v)
        self._parents.append(parents)
        self._backward.append(backward)
        return Node(v, self, idx)

    # ---- leaves ----

    def constant(self, x) -> Node:
        """Leaf that never receives a gradient."""
        return self._push(x, (), None)

    def param(self, x) -> Node:
        """Leaf tracked for gradients."""
        return self._push(x, (), None)

    # ---- primitives ----

    def matmul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value
        out = np.matmul(av, bv)

        def bw(g):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
            gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
            return ga, gb

        return self._push(out, (a.idx, b.idx), bw)

    def add(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value

        def bw(g):
            return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

        return self._push(av + bv, (a.idx, b.idx), bw)

    def sub(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value

        def bw(g):
            return _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)

        return self._push(av - bv, (a.idx, b.idx), bw)

    def mul(self, a: Node, b: Node) -> Node:
        av, bv = a.value, b.value

        def bw(g):
            return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

        return self._push(av * bv, (a.idx, b.idx), bw)

    def scale(self, a: Node, c: float) -> Node:
        return self._push(a.value * c, (a.idx,), lambda g: (g * c,))

    def neg(self, a: Node) -> Node:
        return self._push(-a.value, (a.idx,), lambda g: (-g,))

    def transpose(self, a: Node) -> Node:
        out = np.swapaxes(a.value, -1, -2)
        return self._push(out, (a.idx,), lambda g: (np.swapaxes(g, -1, -2),))

    def relu(self, a: Node) -> Node:
        av = a.value
        out = np.maximum(av, 0.0)
        # subgradient at the kink is 0
        return self._push(out, (a.idx,), lambda g: (g * (av > 0.0),))

    def softmax_cols(self, a: Node, mask=None) -> Node:
        s = a.value
        valid = (
            np.ones_like(s, dtype=bool) if mask is None else _broadcast_valid(s, mask)
        )
        w = _softmax_cols_value(s, valid)

        def bw(g):
            dot = (g * w).sum(axis=-2, keepdims=True)
            return (w * (g - dot),)

        return self._push(w, (a.idx,), bw)

    def layernorm_cols(self, a: Node, eps: float = 1e-8) -> Node:
        """Standardize each column over its rows: (x - mean) / sqrt(var + eps)."""
        x = a.value
        d = x.shape[-2]
        out = layernorm_cols_value(x, eps)
        mu = x.mean(axis=-2, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-2, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)

        def bw(g):
            gxc = g * inv - (xc * inv**3) * ((g * xc).sum(axis=-2, keepdims=True) / d)
            return (gxc - gxc.mean(axis=-2, keepdims=True),)

        return self._push(out, (a.idx,), bw)

    def pinball(self, u: Node, tau: float) -> Node:
        """Quantile loss rho_tau(u) = u * (tau - 1{u < 0}), elementwise.

        The subgradient at u = 0 is tau.
        """
        if not 0.0 < tau < 1.0:
            raise ValueError("tau must be in (0, 1)")
        uv = u.value
        slope = tau - (uv < 0.0)
        return self._push(uv * slope, (u.idx,), lambda g: (g * slope,))

    def sum(self, a: Node) -> Node:
        av = a.value
        return self._push(av.sum(), (a.idx,), lambda g: (np.broadcast_to(g, av.shape),))

    def mean(self, a: Node) -> Node:
        av = a.value
        n = av.size
        return self._push(
            av.mean(), (a.idx,), lambda g: (np.broadcast_to(g / n, av.shape),)
        )

    # ---- backward ----

    def grad(self, loss: Node, params: Sequence[Node]) -> list[np.ndarray]:
        """Gradients of a scalar loss with respect to each parameter node.

        A parameter the loss does not depend on is reported with a warning
        and gets a zero gradient. Deterministic for fixed inputs.
        """
        if loss.tape is not self:
            raise GradientError("loss node does not belong to this tape")
        if loss.value.size != 1:
            raise GradientError("loss must be a scalar")
        adj: dict[int, np.ndarray] = {
            loss.idx: np.ones_like(self._values[loss.idx])
        }
        for idx in range(loss.idx, -1, -1):
            g = adj.pop(idx, None)
            if g is None:
                continue
            bw = self._backward[idx]
            if bw is None:
                adj[idx] = g  # leaf: keep for parameter lookup
                continue
            for pidx, pg in zip(self._parents[idx], bw(g)):
                if pidx in adj:
                    adj[pidx] = adj[pidx] + pg
                else:
                    adj[pidx] = pg
        grads = []
        for p in params:
            if p.tape is not self:
                raise GradientError("parameter node does not belong to this tape")
            g = adj.get(p.idx)
            if g is None:
                warnings.warn(f"unused parameter (node {p.idx})", stacklevel=2)
                g = np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise GradientError("non-finite gradient")
            grads.append(g)
        return grads
