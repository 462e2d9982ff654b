"""Minimal reverse-mode autodiff over dense float64 arrays.

Just enough machinery to train small CNNs: each op builds a node holding a
backward closure; Tensor.backward() walks the recorded graph once in reverse
topological order. Graphs are single-use (re-run the forward to backprop
again).
"""

from __future__ import annotations

import numpy as np

from subbit import kernels as K


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "_spent")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._bwd = None
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar")
        if self._spent:
            raise RuntimeError("graph already consumed; run the forward pass again")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p._bwd is not None or p.requires_grad:
                    stack.append((p, False))
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)
            node._spent = True

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def _node(data, parents, bwd):
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._bwd = bwd
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)
    return _node(a.data + b.data, (a, b), bwd)


def scale_channels(x: Tensor, s: np.ndarray) -> Tensor:
    """Multiply (N,C,H,W) activations by a fixed per-channel factor."""
    sb = s.reshape(1, -1, 1, 1)

    def bwd(g):
        x.accumulate(g * sb)
    return _node(x.data * sb, (x,), bwd)


def conv2d(x: Tensor, w: Tensor, stride=1, pad=0) -> Tensor:
    n, c, h, wid = x.data.shape
    _, _, kh, kw = w.data.shape

    def bwd(g):
        if w.requires_grad:
            w.accumulate(K.conv2d_backward_weight(g, x.data, kh, kw, stride, pad))
        if x.requires_grad:
            x.accumulate(K.conv2d_backward_input(g, w.data, h, wid, stride, pad))
    return _node(K.conv2d_forward(x.data, w.data, stride, pad), (x, w), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def bwd(g):
        if w.requires_grad:
            w.accumulate(g.T @ x.data)
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=0))
        if x.requires_grad:
            x.accumulate(g @ w.data)
    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        x.accumulate(g * mask)
    return _node(x.data * mask, (x,), bwd)


def hardtanh(x: Tensor) -> Tensor:
    def bwd(g):
        x.accumulate(g * ((x.data > -1) & (x.data < 1)))
    return _node(np.clip(x.data, -1.0, 1.0), (x,), bwd)


def sign_ste(x: Tensor) -> Tensor:
    """Binarize activations to +-1 (sign(0) = +1); gradient clipped to |x| < 1."""
    out = np.where(x.data >= 0, 1.0, -1.0)

    def bwd(g):
        x.accumulate(g * (np.abs(x.data) < 1))
    return _node(out, (x,), bwd)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ValueError("avg_pool2d needs dims divisible by the window")
    xr = x.data.reshape(n, c, h // k, k, w // k, k)
    out = xr.mean(axis=(3, 5))

    def bwd(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        x.accumulate(gx)
    return _node(out, (x,), bwd)


def max_pool2d(x: Tensor, k: int, stride: int, pad: int = 0) -> Tensor:
    n, c, h, w = x.data.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                constant_values=-np.inf) if pad else x.data
    from numpy.lib.stride_tricks import sliding_window_view
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, k * k)
    idx = flat.argmax(axis=4)
    out = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]

    def bwd(g):
        gp = np.zeros_like(xp)
        oy, ox = np.divmod(idx, k)
        ny, cy, hy, wy = np.indices((n, c, ho, wo), sparse=False)
        np.add.at(gp, (ny, cy, hy * stride + oy, wy * stride + ox), g)
        x.accumulate(gp[:, :, pad:pad + h, pad:pad + w] if pad else gp)
    return _node(out, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape

    def bwd(g):
        x.accumulate(np.broadcast_to(g[:, :, None, None], x.data.shape) / (h * w))
    return _node(x.data.mean(axis=(2, 3)), (x,), bwd)


def flatten(x: Tensor) -> Tensor:
    n = x.data.shape[0]
    shape = x.data.shape

    def bwd(g):
        x.accumulate(g.reshape(shape))
    return _node(x.data.reshape(n, -1), (x,), bwd)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    loss = -np.log(np.maximum(probs[np.arange(n), labels], 1e-300)).mean()

    def bwd(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        logits.accumulate(g * d / n)
    return _node(loss, (logits,), bwd)
