"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Supplies exactly the operations the gesture networks need: 1D convolution
(kernel 3, stride 1, zero padding 1), batch normalization with running
statistics, max pooling, nearest-neighbour upsampling, relu, sigmoid, a
dense layer, channel concatenation, the three training losses, and Adam.

A forward graph is confined to one execution context; gradients accumulate
into ``.grad`` and a second ``backward`` without clearing accumulates again.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ContractError, ShapeError, StateError

BCE_CLAMP = 1e-7


class Tensor:
    """N-dimensional float64 array participating in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.size and not np.all(np.isfinite(arr)):
            raise StateError("non-finite values entered the graph")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

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
        if self.data.size != 1:
            raise ShapeError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A graph-free view of the same values."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Minimal arithmetic: same-shape addition and scalar scaling are all the
    # loss combinations need. No broadcasting.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0) if isinstance(other, Tensor) else -other)


def _result(data, parents, backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs,
                  _parents=parents if needs else (),
                  _backward=backward_fn if needs else None)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Reverse-topological gradient accumulation from a scalar loss."""
    if loss.size != 1:
        raise ContractError("backward requires a scalar loss tensor")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        (t.tensor if isinstance(t, Parameter) else t).grad = None


# --- elementwise and structural ops ------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")

        def back(g):
            _accumulate(a, g)
            _accumulate(b, g)

        return _result(a.data + b.data, (a, b), back)

    def back_scalar(g):
        _accumulate(a, g)

    return _result(a.data + float(b), (a,), back_scalar)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def back(g):
        _accumulate(a, factor * g)

    return _result(a.data * factor, (a,), back)


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""

    def back(g):
        _accumulate(a, np.full_like(a.data, float(g.reshape(()))))

    return _result(a.data.sum(), (a,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # gradient at exactly 0 is defined as 0

    def back(g):
        _accumulate(x, g * mask)

    return _result(x.data * mask, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)

    def back(g):
        _accumulate(x, g * s * (1.0 - s))

    return _result(s, (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def back(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _result(x.data.reshape(shape), (x,), back)


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate along the channel axis (second-to-last)."""
    if len(tensors) < 2:
        raise ContractError("concat_channels needs at least two tensors")
    lead = tensors[0].shape[:-2] + tensors[0].shape[-1:]
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or t.shape[:-2] + t.shape[-1:] != lead:
            raise ShapeError("concat_channels requires matching batch and "
                             f"temporal shapes, got {[t.shape for t in tensors]}")
    sizes = [t.shape[-2] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _accumulate(t, g[..., lo:hi, :])

    return _result(np.concatenate([t.data for t in tensors], axis=-2), tensors, back)


def gather_time(x: Tensor, indices) -> Tensor:
    """Reindex the temporal (last) axis; duplicated indices accumulate grads.

    Used for reflect padding to a multiple of 8 and for cropping back.
    """
    idx = np.asarray(indices, dtype=np.int64)
    t_in = x.shape[-1]
    if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= t_in):
        raise ShapeError("gather indices out of range")
    scatter = np.zeros((idx.size, t_in))
    scatter[np.arange(idx.size), idx] = 1.0

    def back(g):
        _accumulate(x, g @ scatter)

    return _result(x.data[..., idx], (x,), back)


def reflect_pad_time(x: Tensor, pad: int) -> Tensor:
    """Append ``pad`` frames mirrored about the final frame."""
    t = x.shape[-1]
    if pad == 0:
        return x
    if pad >= t:
        raise ShapeError(f"reflect padding of {pad} needs more than {t} frames")
    idx = np.concatenate([np.arange(t), t - 2 - np.arange(pad)])
    return gather_time(x, idx)


# --- neural network ops -------------------------------------------------------

def _promote(x: Tensor, rank: int):
    """View a (C, T) tensor as (1, C, T); returns (array3d, was_2d)."""
    if x.ndim == rank:
        return x.data, False
    if x.ndim == rank - 1:
        return x.data[None], True
    raise ShapeError(f"expected a rank-{rank - 1} or rank-{rank} tensor, "
                     f"got shape {x.shape}")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlation with kernel 3, stride 1, zero padding 1.

    Accepts (C_in, T) or (N, C_in, T); temporal length is preserved.
    """
    data, was_2d = _promote(x, 3)
    n, c_in, t = data.shape
    if weight.ndim != 3 or weight.shape[2] != 3:
        raise ShapeError(f"conv weight must be (C_out, C_in, 3), got {weight.shape}")
    c_out = weight.shape[0]
    if weight.shape[1] != c_in:
        raise ShapeError(f"conv expects {weight.shape[1]} input channels, got {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv bias must be ({c_out},), got {bias.shape}")

    padded = np.pad(data, ((0, 0), (0, 0), (1, 1)))
    cols = np.lib.stride_tricks.sliding_window_view(padded, 3, axis=2)  # (N, C_in, T, 3)
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(n, c_in * 3, t)
    w2 = weight.data.reshape(c_out, c_in * 3)
    out = np.matmul(w2, cols) + bias.data[:, None]

    def back(g):
        g3 = g[None] if was_2d else g
        _accumulate(weight, np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
                    .reshape(c_out, c_in, 3))
        _accumulate(bias, g3.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = np.matmul(w2.T, g3).reshape(n, c_in, 3, t)
            dpad = np.zeros_like(padded)
            for k in range(3):
                dpad[:, :, k:k + t] += dcols[:, :, k, :]
            dx = dpad[:, :, 1:t + 1]
            _accumulate(x, dx[0] if was_2d else dx)

    return _result(out[0] if was_2d else out, (x, weight, bias), back)


class RunningStats:
    """Per-channel running mean/variance for batch norm eval mode."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.batches_seen = 0


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, state: RunningStats,
                mode: str, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over batch and time for (N, C, T) input.

    Train mode normalizes with batch statistics and updates the running
    stats; eval mode uses the running stats and fails if none exist yet.
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"unknown batchnorm mode '{mode}'")
    if x.ndim != 3:
        raise ShapeError(f"batchnorm expects (N, C, T), got {x.shape}")
    n, c, t = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("gamma/beta must have one value per channel")

    if mode == "train":
        if n * t < 2:
            raise ContractError("train-mode batchnorm needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        state.mean = (1.0 - momentum) * state.mean + momentum * mu
        state.var = (1.0 - momentum) * state.var + momentum * var
        state.batches_seen += 1
    else:
        if state.batches_seen == 0:
            raise StateError("eval-mode batchnorm before any training step")
        mu, var = state.mean, state.var

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None]) * inv[:, None]
    out = gamma.data[:, None] * xhat + beta.data[:, None]

    def back(g):
        _accumulate(gamma, (g * xhat).sum(axis=(0, 2)))
        _accumulate(beta, g.sum(axis=(0, 2)))
        if not x.requires_grad:
            return
        if mode == "eval":
            _accumulate(x, g * (gamma.data * inv)[:, None])
            return
        m = n * t
        g_mean = g.sum(axis=(0, 2)) / m
        gx_mean = (g * xhat).sum(axis=(0, 2)) / m
        dx = (gamma.data * inv)[:, None] * (g - g_mean[:, None] - xhat * gx_mean[:, None])
        _accumulate(x, dx)

    return _result(out, (x, gamma, beta), back)


def maxpool1d(x: Tensor) -> Tensor:
    """Kernel-2 stride-2 max pooling; gradient routes to the argmax
    (ties to the earlier index)."""
    t = x.shape[-1]
    if t % 2 != 0:
        raise ShapeError(f"maxpool needs an even temporal length, got {t}")
    a = x.data[..., 0::2]
    b = x.data[..., 1::2]
    first = a >= b

    def back(g):
        dx = np.zeros_like(x.data)
        dx[..., 0::2] = g * first
        dx[..., 1::2] = g * ~first
        _accumulate(x, dx)

    return _result(np.where(first, a, b), (x,), back)


def upsample_nearest(x: Tensor) -> Tensor:
    """Repeat every frame twice along the temporal axis."""

    def back(g):
        _accumulate(x, g[..., 0::2] + g[..., 1::2])

    return _result(np.repeat(x.data, 2, axis=-1), (x,), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Dense layer: (D_in,) or (N, D_in) times (D_out, D_in) plus bias."""
    if weight.ndim != 2:
        raise ShapeError(f"linear weight must be 2D, got {weight.shape}")
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear expects {d_in} input features, got {x.shape[-1]}")
    if bias.shape != (d_out,):
        raise ShapeError(f"linear bias must be ({d_out},), got {bias.shape}")
    out = x.data @ weight.data.T + bias.data

    def back(g):
        g2 = g[None] if g.ndim == 1 else g
        x2 = x.data[None] if x.ndim == 1 else x.data
        _accumulate(weight, g2.T @ x2)
        _accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            dx = g @ weight.data
            _accumulate(x, dx)

    return _result(out, (x, weight, bias), back)


# --- losses -------------------------------------------------------------------

def _loss_pair(pred: Tensor, target) -> tuple[np.ndarray, np.ndarray, bool]:
    tdata = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if tdata.shape != pred.shape:
        raise ShapeError(f"loss shape mismatch: {pred.shape} vs {tdata.shape}")
    pdata, was_2d = (pred.data, False) if pred.ndim == 3 else _promote(pred, 3)
    tdata = tdata[None] if was_2d else tdata
    return pdata, tdata, was_2d


def l1_loss(pred: Tensor, target) -> Tensor:
    """Sum of |pred - target| over channels and time, averaged over batch."""
    pdata, tdata, was_2d = _loss_pair(pred, target)
    diff = pdata - tdata
    n = pdata.shape[0]
    out = np.abs(diff).sum(axis=(1, 2)).mean()

    def back(g):
        s = float(g.reshape(())) / n
        dpred = s * np.sign(diff)
        _accumulate(pred, dpred[0] if was_2d else dpred)
        if isinstance(target, Tensor):
            _accumulate(target, -(dpred[0] if was_2d else dpred))

    parents = (pred, target) if isinstance(target, Tensor) else (pred,)
    return _result(out, parents, back)


def l2_loss(pred: Tensor, target) -> Tensor:
    """Sum over time of the per-frame Euclidean norm across channels,
    averaged over batch. The gradient at a zero-norm frame is 0."""
    pdata, tdata, was_2d = _loss_pair(pred, target)
    diff = pdata - tdata
    n = pdata.shape[0]
    norms = np.sqrt((diff ** 2).sum(axis=1))  # (N, T)
    out = norms.sum(axis=1).mean()

    def back(g):
        safe = np.where(norms > 0, norms, 1.0)
        dpred = (float(g.reshape(())) / n) * diff / safe[:, None, :]
        dpred = np.where(norms[:, None, :] > 0, dpred, 0.0)
        _accumulate(pred, dpred[0] if was_2d else dpred)
        if isinstance(target, Tensor):
            _accumulate(target, -(dpred[0] if was_2d else dpred))

    parents = (pred, target) if isinstance(target, Tensor) else (pred,)
    return _result(out, parents, back)


def bce_loss(prob: Tensor, label) -> Tensor:
    """Binary cross entropy, averaged over the batch.

    Probabilities are clamped to [1e-7, 1 - 1e-7]; the gradient is zero
    where the clamp is active.
    """
    y = np.broadcast_to(np.asarray(label, dtype=np.float64), prob.shape)
    p = np.clip(prob.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    inside = (prob.data > BCE_CLAMP) & (prob.data < 1.0 - BCE_CLAMP)
    n = max(prob.size, 1)
    out = float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n)

    def back(g):
        dp = float(g.reshape(())) * (p - y) / (p * (1.0 - p)) / n
        _accumulate(prob, dp * inside)

    return _result(out, (prob,), back)


# --- parameters and Adam -------------------------------------------------------

class Parameter:
    """Trainable tensor plus its Adam moment estimates."""

    def __init__(self, data):
        self.tensor = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.adam_m = np.zeros_like(self.tensor.data)
        self.adam_v = np.zeros_like(self.tensor.data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.data.shape


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; gradients are cleared afterwards."""
    params = list(params)
    for p in params:
        if p.tensor.grad is None:
            raise StateError("adam_step before backward: parameter has no gradient")
    for p in params:
        g = p.tensor.grad
        p.step_count += 1
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1 ** p.step_count)
        v_hat = p.adam_v / (1.0 - beta2 ** p.step_count)
        p.tensor.data = p.tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.tensor.grad = None
