"""Dense-tensor ops with reverse-mode gradients.

Just enough of a tensor library to train the pattern recognizer: NCHW
convolution (im2col + GEMM), pooling, activations, linear layers, dropout,
the reductions and broadcasts attention blocks need, softmax cross-entropy,
and Adam. Tensors wrap numpy arrays; every op that participates in
differentiation records a backward closure on its output, and
``Tensor.backward`` replays the closures in reverse topological order, so
the recorded graph doubles as the gradient tape. Gradients accumulate
additively.

Storage is float32 by default; passing float64 arrays switches the whole
graph to 64-bit, which the gradient-check tests rely on. Any op that
produces a NaN or Inf raises FloatingPointError immediately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

__all__ = [
    "Tensor",
    "AdamState",
    "add",
    "mul",
    "relu",
    "sigmoid",
    "conv2d",
    "maxpool2",
    "adaptive_avg_pool",
    "global_avg_pool",
    "global_max_pool",
    "linear",
    "dropout",
    "channel_mean",
    "channel_max",
    "concat_channels",
    "reshape",
    "flatten",
    "softmax",
    "softmax_cross_entropy",
    "adam_step",
    "zero_grads",
]


def _checked(data: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(data).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    return data


class Tensor:
    """N-dimensional real array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = ()):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep from this tensor.

        Visits every recorded op exactly once, children before parents.
        """
        if grad is None:
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
        self.accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...]) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(_checked(data, op), requires_grad=req,
                  parents=tuple(p for p in parents if p.requires_grad) if req else ())


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make(a.data + b.data, "add", (a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g, b.data.shape))
        out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _make(a.data * b.data, "mul", (a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g * a.data, b.data.shape))
        out._backward = _bw
    return out


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = _make(np.maximum(x.data, 0), "relu", (x,))
    if out.requires_grad:
        def _bw(g):
            x.accumulate(g * (x.data > 0))
        out._backward = _bw
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = expit(x.data)
    out = _make(s, "sigmoid", (x,))
    if out.requires_grad:
        def _bw(g):
            x.accumulate(g * s * (1.0 - s))
        out._backward = _bw
    return out


def conv2d(x, w, b, padding: int = 0, stride: int = 1) -> Tensor:
    """Cross-correlation of NCHW input with KCkk filters plus bias.

    Output spatial size (H + 2*padding - k) / stride + 1 must be integral.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    n, c, h, wd = x.data.shape
    k, c2, kh, kw = w.data.shape
    if c != c2 or kh != kw:
        raise ValueError("filter shape does not match input channels")
    if b.data.shape != (k,):
        raise ValueError("bias must have one entry per filter")
    if (h + 2 * padding - kh) % stride or (wd + 2 * padding - kw) % stride:
        raise ValueError("kernel/padding/stride do not tile the input")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * ho * wo, c * kh * kw
    )
    wmat = w.data.reshape(k, -1)
    out_mat = cols @ wmat.T
    out_mat += b.data
    out = _make(
        np.ascontiguousarray(out_mat.reshape(n, ho, wo, k).transpose(0, 3, 1, 2)),
        "conv2d",
        (x, w, b),
    )
    if out.requires_grad:
        def _bw(g):
            gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, k)
            if b.requires_grad:
                b.accumulate(gmat.sum(axis=0))
            if w.requires_grad:
                w.accumulate((gmat.T @ cols).reshape(w.data.shape))
            if x.requires_grad:
                dcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
                dcols = dcols.transpose(0, 3, 1, 2, 4, 5)  # (n, c, ho, wo, kh, kw)
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + ho * stride:stride,
                            j:j + wo * stride:stride] += dcols[:, :, :, :, i, j]
                if padding:
                    dxp = dxp[:, :, padding:padding + h, padding:padding + wd]
                x.accumulate(dxp)
        out._backward = _bw
    return out


def maxpool2(x) -> Tensor:
    """2x2 max pooling, stride 2; gradient goes to the first max in each
    window (row-major scan order on ties)."""
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ValueError("maxpool2 requires even spatial dimensions")
    ho, wo = h // 2, w // 2
    quads = np.ascontiguousarray(
        x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
    ).reshape(n, c, ho, wo, 4)
    idx = quads.argmax(axis=-1)
    out = _make(np.take_along_axis(quads, idx[..., None], axis=-1)[..., 0],
                "maxpool2", (x,))
    if out.requires_grad:
        def _bw(g):
            buf = np.zeros_like(quads)
            np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
            x.accumulate(
                buf.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w)
            )
        out._backward = _bw
    return out


def adaptive_avg_pool(x, out_size: int) -> Tensor:
    """Average pooling onto an out_size x out_size grid; output cell (i, j)
    averages input rows [floor(i*H/out), ceil((i+1)*H/out)) and likewise for
    columns."""
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    if h < out_size or w < out_size:
        raise ValueError("adaptive_avg_pool cannot upsample")
    rb = [(math.floor(i * h / out_size), math.ceil((i + 1) * h / out_size))
          for i in range(out_size)]
    cb = [(math.floor(j * w / out_size), math.ceil((j + 1) * w / out_size))
          for j in range(out_size)]
    data = np.empty((n, c, out_size, out_size), dtype=x.data.dtype)
    for i, (r0, r1) in enumerate(rb):
        for j, (c0, c1) in enumerate(cb):
            data[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    out = _make(data, "adaptive_avg_pool", (x,))
    if out.requires_grad:
        def _bw(g):
            dx = np.zeros_like(x.data)
            for i, (r0, r1) in enumerate(rb):
                for j, (c0, c1) in enumerate(cb):
                    area = (r1 - r0) * (c1 - c0)
                    dx[:, :, r0:r1, c0:c1] += g[:, :, i:i + 1, j:j + 1] / area
            x.accumulate(dx)
        out._backward = _bw
    return out


def global_avg_pool(x) -> Tensor:
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    out = _make(x.data.mean(axis=(2, 3), keepdims=True), "global_avg_pool", (x,))
    if out.requires_grad:
        def _bw(g):
            x.accumulate(np.broadcast_to(g / (h * w), x.data.shape).copy())
        out._backward = _bw
    return out


def global_max_pool(x) -> Tensor:
    x = _as_tensor(x)
    n, c, h, w = x.data.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=-1)
    out = _make(np.take_along_axis(flat, idx[..., None], axis=-1)
                .reshape(n, c, 1, 1), "global_max_pool", (x,))
    if out.requires_grad:
        def _bw(g):
            buf = np.zeros_like(flat)
            np.put_along_axis(buf, idx[..., None], g.reshape(n, c, 1), axis=-1)
            x.accumulate(buf.reshape(x.data.shape))
        out._backward = _bw
    return out


def linear(x, w, b) -> Tensor:
    """x[N, D] @ w[D, O] + b[O]."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    out = _make(x.data @ w.data + b.data, "linear", (x, w, b))
    if out.requires_grad:
        def _bw(g):
            if x.requires_grad:
                x.accumulate(g @ w.data.T)
            if w.requires_grad:
                w.accumulate(x.data.T @ g)
            if b.requires_grad:
                b.accumulate(g.sum(axis=0))
        out._backward = _bw
    return out


def dropout(x, p: float, training: bool, seed: int) -> Tensor:
    """Inverted dropout: zero with probability p and scale survivors by
    1/(1-p) while training; identity at inference."""
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    if not training or p == 0.0:
        return x
    rng = np.random.default_rng(seed)
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.data.dtype)
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) * scale
    out = _make(x.data * keep, "dropout", (x,))
    if out.requires_grad:
        def _bw(g):
            x.accumulate(g * keep)
        out._backward = _bw
    return out


def channel_mean(x) -> Tensor:
    x = _as_tensor(x)
    c = x.data.shape[1]
    out = _make(x.data.mean(axis=1, keepdims=True), "channel_mean", (x,))
    if out.requires_grad:
        def _bw(g):
            x.accumulate(np.broadcast_to(g / c, x.data.shape).copy())
        out._backward = _bw
    return out


def channel_max(x) -> Tensor:
    x = _as_tensor(x)
    idx = x.data.argmax(axis=1, keepdims=True)
    out = _make(np.take_along_axis(x.data, idx, axis=1), "channel_max", (x,))
    if out.requires_grad:
        def _bw(g):
            buf = np.zeros_like(x.data)
            np.put_along_axis(buf, idx, g, axis=1)
            x.accumulate(buf)
        out._backward = _bw
    return out


def concat_channels(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ca = a.data.shape[1]
    out = _make(np.concatenate([a.data, b.data], axis=1), "concat_channels", (a, b))
    if out.requires_grad:
        def _bw(g):
            if a.requires_grad:
                a.accumulate(g[:, :ca])
            if b.requires_grad:
                b.accumulate(g[:, ca:])
        out._backward = _bw
    return out


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = _make(x.data.reshape(shape), "reshape", (x,))
    if out.requires_grad:
        def _bw(g):
            x.accumulate(g.reshape(x.data.shape))
        out._backward = _bw
    return out


def flatten(x) -> Tensor:
    return reshape(x, (x.data.shape[0], -1))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction (plain ndarray helper)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, one_hot: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the true classes and its gradient
    (softmax - one_hot) / N with respect to the logits."""
    logits = np.asarray(logits)
    one_hot = np.asarray(one_hot)
    if logits.shape != one_hot.shape:
        raise ValueError("logits and labels must share a shape")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-(one_hot * log_probs).sum() / n)
    grad = (np.exp(log_probs) - one_hot) / n
    _checked(np.asarray(loss), "softmax_cross_entropy")
    return loss, grad.astype(logits.dtype)


@dataclass
class AdamState:
    """Per-parameter moment estimates plus step counter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params, state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Parameters whose grad is
    None (or zero, with zero moments) are left unchanged."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        if p.grad is None:
            g = np.zeros_like(p.data)
        else:
            g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
