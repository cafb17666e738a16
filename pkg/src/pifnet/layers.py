"""Standard layers for the baseline networks, plus initialisation, loss and Adam.

Convolutions are cross-correlations (the kernel is not flipped), the usual
deep-learning convention. With learned kernels this is equivalent to a true
convolution up to a flip of every kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .tensor import Rng, Tensor, check_finite

BCE_CLAMP = 1e-12


@dataclass(frozen=True)
class Conv3dSpec:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(f"invalid conv3d spec {self}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"conv3d channel counts must be positive: {self}")

    def output_extent(self, n: int) -> int:
        out = (n + 2 * self.padding - self.kernel_size) // self.stride + 1
        if n + 2 * self.padding < self.kernel_size or out < 1:
            raise ShapeError(f"conv3d kernel {self.kernel_size} does not fit extent {n} (padding {self.padding})")
        return out

    @property
    def weight_shape(self) -> tuple[int, ...]:
        k = self.kernel_size
        return (self.out_channels, self.in_channels, k, k, k)


@dataclass(frozen=True)
class PoolSpec:
    kernel_size: int
    stride: int

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1:
            raise ConfigError(f"invalid pool spec {self}")

    def output_extent(self, n: int) -> int:
        if n < self.kernel_size:
            raise ShapeError(f"pooling window {self.kernel_size} larger than extent {n}")
        return (n - self.kernel_size) // self.stride + 1


# ---------------------------------------------------------------------------
# convolution kernels on raw arrays (shared with the PIF layer and LRP)

def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    return win[:, :, ::stride, ::stride, ::stride]


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    p = padding
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def _out_extents(shape: Sequence[int], k: int, stride: int) -> tuple[int, int, int]:
    return tuple((n - k) // stride + 1 for n in shape[-3:])


def im2col(xp: np.ndarray, k: int, stride: int = 1) -> np.ndarray:
    """Unroll (N,C,D,H,W) into a (C*k^3, N*D'*H'*W') matrix of receptive fields."""
    n, c = xp.shape[:2]
    od, oh, ow = _out_extents(xp.shape, k, stride)
    cols = np.empty((c, k, k, k, n, od, oh, ow))
    xt = xp.transpose(1, 0, 2, 3, 4)
    for a, b, e in product(range(k), repeat=3):
        cols[:, a, b, e] = xt[:, :, a:a + stride * (od - 1) + 1:stride, b:b + stride * (oh - 1) + 1:stride,
                              e:e + stride * (ow - 1) + 1:stride]
    return cols.reshape(c * k ** 3, -1)


def _conv3d_cols(x, w, b, stride, padding):
    f, k = w.shape[0], w.shape[-1]
    xp = _pad(x, padding)
    od, oh, ow = _out_extents(xp.shape, k, stride)
    cols = im2col(xp, k, stride)
    out = (w.reshape(f, -1) @ cols).reshape(f, x.shape[0], od, oh, ow)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3, 4))
    if b is not None:
        out += b[None, :, None, None, None]
    return out, cols


def conv3d_array(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (N,C,D,H,W) with ``w`` (F,C,k,k,k); returns (N,F,D',H',W')."""
    return _conv3d_cols(x, w, b, stride, padding)[0]


def _as_rows(g: np.ndarray) -> np.ndarray:
    return g.transpose(1, 0, 2, 3, 4).reshape(g.shape[1], -1)


def conv3d_input_grad(g: np.ndarray, w: np.ndarray, in_shape: Sequence[int], stride: int = 1, padding: int = 0) -> np.ndarray:
    """Transpose of :func:`conv3d_array` with respect to its input."""
    n, c, d, h, wd = in_shape
    f, k = w.shape[0], w.shape[-1]
    p = padding
    od, oh, ow = g.shape[2:]
    gcols = (w.reshape(f, -1).T @ _as_rows(g)).reshape(c, k, k, k, n, od, oh, ow)
    gx = np.zeros((c, n, d + 2 * p, h + 2 * p, wd + 2 * p))
    for a, b, e in product(range(k), repeat=3):
        gx[:, :, a:a + stride * (od - 1) + 1:stride, b:b + stride * (oh - 1) + 1:stride,
           e:e + stride * (ow - 1) + 1:stride] += gcols[:, a, b, e]
    if p:
        gx = gx[:, :, p:-p, p:-p, p:-p]
    return np.ascontiguousarray(gx.transpose(1, 0, 2, 3, 4))


def conv3d_weight_grad(g: np.ndarray, x: np.ndarray, k: int, stride: int = 1, padding: int = 0,
                       cols: np.ndarray | None = None) -> np.ndarray:
    if cols is None:
        cols = im2col(_pad(x, padding), k, stride)
    f, c = g.shape[1], x.shape[1]
    return (_as_rows(g) @ cols.T).reshape(f, c, k, k, k)


def conv3d(x: Tensor, spec: Conv3dSpec, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """3D cross-correlation with per-output-channel bias."""
    if x.ndim != 5:
        raise ShapeError(f"conv3d expects (N,C,D,H,W) input, got shape {x.shape}")
    if x.shape[1] != spec.in_channels or weights.shape != spec.weight_shape:
        raise ShapeError(
            f"conv3d channel mismatch: input {x.shape}, weights {weights.shape}, spec {spec}")
    for n in x.shape[2:]:
        spec.output_extent(n)
    k, s, p = spec.kernel_size, spec.stride, spec.padding
    out, cols = _conv3d_cols(x.data, weights.data, None if bias is None else bias.data, s, p)

    def backward(g):
        gx = conv3d_input_grad(g, weights.data, x.shape, s, p) if x.requires_grad else None
        gw = conv3d_weight_grad(g, x.data, k, s, p, cols) if weights.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    parents = (x, weights) if bias is None else (x, weights, bias)
    return Tensor.from_op(out, parents, backward)


# ---------------------------------------------------------------------------
# pooling

def maxpool3d(x: Tensor, spec: PoolSpec) -> tuple[Tensor, np.ndarray]:
    """Windowed maximum without padding.

    Returns the pooled tensor and, for every output voxel, the flat index
    (into the input's D*H*W volume) of the winning input voxel. Ties go to
    the first voxel of the window in row-major order.
    """
    if x.ndim != 5:
        raise ShapeError(f"maxpool3d expects (N,C,D,H,W) input, got shape {x.shape}")
    k, s = spec.kernel_size, spec.stride
    n, c, d, h, w = x.shape
    od, oh, ow = (spec.output_extent(e) for e in (d, h, w))
    win = _windows(x.data, k, s)[:, :, :od, :oh, :ow].reshape(n, c, od, oh, ow, k ** 3)
    local = win.argmax(axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    ld, lh, lw = np.unravel_index(local, (k, k, k))
    gd = ld + s * np.arange(od)[:, None, None]
    gh = lh + s * np.arange(oh)[None, :, None]
    gw = lw + s * np.arange(ow)[None, None, :]
    argmax = (gd * h + gh) * w + gw

    def backward(g):
        return (route_to_argmax(g, argmax, x.shape),)

    return Tensor.from_op(out, (x,), backward), argmax


def route_to_argmax(values: np.ndarray, argmax: np.ndarray, in_shape: Sequence[int]) -> np.ndarray:
    """Scatter-add each pooled value back onto its winning input voxel."""
    n, c, d, h, w = in_shape
    vol = d * h * w
    plane = (np.arange(n * c) * vol).reshape(n, c, 1, 1, 1)
    flat = np.bincount((argmax + plane).ravel(), weights=values.ravel(), minlength=n * c * vol)
    return flat.reshape(in_shape)


# ---------------------------------------------------------------------------
# activations

def elu(x: Tensor) -> Tensor:
    """ELU with unit alpha."""
    neg = np.expm1(np.minimum(x.data, 0.0))
    pos = x.data > 0
    out = np.where(pos, x.data, neg)
    return Tensor.from_op(out, (x,), lambda g: (g * np.where(pos, 1.0, neg + 1.0),))


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    out = sigmoid_array(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def dropout_mask(shape: Sequence[int], p: float, rng: Rng) -> np.ndarray:
    return (rng.uniform(size=tuple(shape)) >= p).astype(np.float64)


def dropout(x: Tensor, p: float, rng: Rng | None = None, training: bool = True,
            mask: np.ndarray | None = None) -> Tensor:
    """Inverted dropout; identity when ``training`` is false.

    Masks are drawn per element. Pass ``mask`` to reuse a previous draw.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if mask is None:
        if rng is None:
            raise ConfigError("dropout in training mode needs an rng or an explicit mask")
        mask = dropout_mask(x.shape, p, rng)
    scale = mask / (1.0 - p)
    return Tensor.from_op(x.data * scale, (x,), lambda g: (g * scale,))


# ---------------------------------------------------------------------------
# dense layers

def linear(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weights.T + bias`` with weights shaped (out, in)."""
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weights {weights.shape}")
    out = x.data @ weights.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ weights.data if x.requires_grad else None
        gw = g.T @ x.data
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=0))

    parents = (x, weights) if bias is None else (x, weights, bias)
    return Tensor.from_op(out, parents, backward)


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], -1)


# ---------------------------------------------------------------------------
# initialisation, loss, optimiser

def he_init(shape: Sequence[int], rng: Rng) -> Tensor:
    """Zero-mean Gaussian weights with variance 2 / fan_in (fan_in = prod(shape[1:]))."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < 2:
        raise ShapeError(f"cannot infer fan-in from shape {shape}")
    fan_in = int(np.prod(shape[1:]))
    return Tensor(rng.normal(shape, scale=np.sqrt(2.0 / fan_in)), requires_grad=True)


def zeros_bias(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def bce_loss(pred: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of probabilities ``pred`` against 0/1 labels.

    Predictions are clamped to [1e-12, 1 - 1e-12]; the clamp passes zero
    gradient outside that range.
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ConfigError("labels must be 0 or 1")
    p = pred.data.reshape(-1)
    if p.shape != y.shape:
        raise ShapeError(f"bce: {p.size} predictions for {y.size} labels")
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    inside = (p >= BCE_CLAMP) & (p <= 1.0 - BCE_CLAMP)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))

    def backward(g):
        dp = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / y.size
        return ((g * np.where(inside, dp, 0.0)).reshape(pred.shape),)

    return Tensor.from_op(np.asarray(loss), (pred,), backward)


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Each step first shrinks parameters by ``1 - lr * weight_decay`` and then
    applies the usual Adam update.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr < 0 or weight_decay < 0:
            raise ConfigError("learning rate and weight decay must be non-negative")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ConfigError(f"parameters {missing} have no gradient; run backward first")
        self.t += 1
        b1, b2, t = self.beta1, self.beta2, self.t
        for i, p in enumerate(self.params):
            g = p.grad
            data = p.data * (1.0 - self.lr * self.weight_decay)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1 ** t)
            v_hat = self.v[i] / (1.0 - b2 ** t)
            p.data = check_finite(data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps), "parameter update")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
