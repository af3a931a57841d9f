"""Pure forward ops and their vector-Jacobian products.

Every activation is a 4-D array shaped (batch, channels, rows, cols).
Convolution is implemented as cross-correlation (no kernel flip); the
transposed convolution is its exact adjoint, so for shared weights and
zero bias  <conv2d(x), y> == <x, transposed_conv2d(y)>.

Arithmetic runs in the dtype of the inputs: float32 for training,
float64 when the gradient checker drives the ops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import LabelOutOfRange, ShapeMismatch


def _as_pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _check_4d(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ShapeMismatch(f"{what} must be 4-D (n, c, h, w), got shape {x.shape}")


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a (possibly dilated) convolution."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_pair(self.kernel))
        if min(self.in_channels, self.out_channels, *self.kernel) < 1:
            raise ShapeMismatch(f"non-positive dimension in {self}")
        if self.stride < 1 or self.dilation < 1 or self.padding < 0:
            raise ShapeMismatch(f"bad stride/padding/dilation in {self}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        oh = (h + 2 * self.padding - self.dilation * (kh - 1) - 1) // self.stride + 1
        ow = (w + 2 * self.padding - self.dilation * (kw - 1) - 1) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"conv output {oh}x{ow} < 1 for input {h}x{w} with {self}")
        return oh, ow

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels) + self.kernel


@dataclass(frozen=True)
class DeconvSpec:
    """Geometry of a transposed convolution (adjoint of a strided conv)."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kernel", _as_pair(self.kernel))
        if min(self.in_channels, self.out_channels, *self.kernel) < 1:
            raise ShapeMismatch(f"non-positive dimension in {self}")
        if self.stride < 1 or self.padding < 0:
            raise ShapeMismatch(f"bad stride/padding in {self}")

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        oh = (h - 1) * self.stride - 2 * self.padding + kh
        ow = (w - 1) * self.stride - 2 * self.padding + kw
        if oh < 1 or ow < 1:
            raise ShapeMismatch(f"deconv output {oh}x{ow} < 1 for input {h}x{w} with {self}")
        return oh, ow

    def weight_shape(self) -> tuple[int, int, int, int]:
        # dim 0 is this layer's input side so conv/deconv can share weights
        return (self.in_channels, self.out_channels) + self.kernel


def _conv_patches(xp: np.ndarray, kernel, stride: int, dilation: int, oh: int, ow: int):
    """Strided view (n, c, oh, ow, kh, kw) of dilated sliding windows."""
    n, c = xp.shape[:2]
    kh, kw = kernel
    s0, s1, s2, s3 = xp.strides
    shape = (n, c, oh, ow, kh, kw)
    strides = (s0, s1, s2 * stride, s3 * stride, s2 * dilation, s3 * dilation)
    return as_strided(xp, shape=shape, strides=strides)


def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: np.ndarray, spec: ConvSpec, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-correlation with dilation; weights (out_c, in_c, kh, kw)."""
    _check_4d(x, "conv2d input")
    if w.shape != spec.weight_shape():
        raise ShapeMismatch(f"conv2d weights {w.shape} != {spec.weight_shape()}")
    if x.shape[1] != spec.in_channels:
        raise ShapeMismatch(f"conv2d input has {x.shape[1]} channels, spec wants {spec.in_channels}")
    if b.shape != (spec.out_channels,):
        raise ShapeMismatch(f"conv2d bias {b.shape} != ({spec.out_channels},)")
    oh, ow = spec.out_hw(x.shape[2], x.shape[3])
    xp = _pad_hw(x, spec.padding)
    patches = _conv_patches(xp, spec.kernel, spec.stride, spec.dilation, oh, ow)
    y = np.tensordot(patches, w, axes=([1, 4, 5], [1, 2, 3]))  # (n, oh, ow, out_c)
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    y += b.reshape(1, -1, 1, 1)
    return y


def conv2d_vjp(x: np.ndarray, spec: ConvSpec, w: np.ndarray, gy: np.ndarray):
    """Gradients of conv2d w.r.t. (input, weights, bias) given upstream gy."""
    _check_4d(gy, "conv2d upstream gradient")
    oh, ow = spec.out_hw(x.shape[2], x.shape[3])
    if gy.shape != (x.shape[0], spec.out_channels, oh, ow):
        raise ShapeMismatch(f"conv2d gy {gy.shape} != {(x.shape[0], spec.out_channels, oh, ow)}")
    kh, kw = spec.kernel
    s, p, d = spec.stride, spec.padding, spec.dilation
    xp = _pad_hw(x, p)
    patches = _conv_patches(xp, spec.kernel, s, d, oh, ow)

    gw = np.tensordot(gy, patches, axes=([0, 2, 3], [0, 2, 3]))  # (out_c, in_c, kh, kw)
    gb = gy.sum(axis=(0, 2, 3))

    # Scatter gy*w back onto the (padded) input, one kernel tap at a time.
    taps = np.tensordot(gy, w, axes=([1], [0]))  # (n, oh, ow, in_c, kh, kw)
    taps = np.moveaxis(taps, 3, 1)  # (n, in_c, oh, ow, kh, kw)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i * d : i * d + s * (oh - 1) + 1 : s,
                j * d : j * d + s * (ow - 1) + 1 : s] += taps[:, :, :, :, i, j]
    gx = gxp[:, :, p : p + x.shape[2], p : p + x.shape[3]] if p else gxp
    return gx, gw, gb


def transposed_conv2d(x: np.ndarray, spec: DeconvSpec, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Adjoint of conv2d; weights (in_c, out_c, kh, kw)."""
    _check_4d(x, "transposed_conv2d input")
    if w.shape != spec.weight_shape():
        raise ShapeMismatch(f"transposed_conv2d weights {w.shape} != {spec.weight_shape()}")
    if x.shape[1] != spec.in_channels:
        raise ShapeMismatch(
            f"transposed_conv2d input has {x.shape[1]} channels, spec wants {spec.in_channels}")
    if b.shape != (spec.out_channels,):
        raise ShapeMismatch(f"transposed_conv2d bias {b.shape} != ({spec.out_channels},)")
    n, _, ih, iw = x.shape
    kh, kw = spec.kernel
    s, p = spec.stride, spec.padding
    oh, ow = spec.out_hw(ih, iw)

    taps = np.tensordot(x, w, axes=([1], [0]))  # (n, ih, iw, out_c, kh, kw)
    taps = np.moveaxis(taps, 3, 1)  # (n, out_c, ih, iw, kh, kw)
    full = np.zeros((n, spec.out_channels, oh + 2 * p, ow + 2 * p), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i : i + s * (ih - 1) + 1 : s,
                 j : j + s * (iw - 1) + 1 : s] += taps[:, :, :, :, i, j]
    y = full[:, :, p : p + oh, p : p + ow] if p else full
    y = y + b.reshape(1, -1, 1, 1)
    return y


def transposed_conv2d_vjp(x: np.ndarray, spec: DeconvSpec, w: np.ndarray, gy: np.ndarray):
    """Gradients of transposed_conv2d w.r.t. (input, weights, bias)."""
    _check_4d(gy, "transposed_conv2d upstream gradient")
    n, _, ih, iw = x.shape
    oh, ow = spec.out_hw(ih, iw)
    if gy.shape != (n, spec.out_channels, oh, ow):
        raise ShapeMismatch(f"transposed_conv2d gy {gy.shape} != {(n, spec.out_channels, oh, ow)}")
    s, p = spec.stride, spec.padding
    gfull = _pad_hw(gy, p)
    # gfull windows seen from each input position: (n, out_c, ih, iw, kh, kw)
    windows = _conv_patches(gfull, spec.kernel, s, 1, ih, iw)
    gx = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # (n, ih, iw, in_c)
    gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
    gw = np.tensordot(x, windows, axes=([0, 2, 3], [0, 2, 3]))  # (in_c, out_c, kh, kw)
    gb = gy.sum(axis=(0, 2, 3))
    return gx, gw, gb


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_vjp(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0, gy, 0)


def _pool_geometry(h: int, w: int, window: int, stride: int, ceil_mode: bool):
    if window < 1 or stride < 1:
        raise ShapeMismatch(f"bad pool window={window} stride={stride}")
    if window > h or window > w:
        raise ShapeMismatch(f"pool window {window} exceeds spatial extent {h}x{w}")
    if ceil_mode:
        oh = math.ceil((h - window) / stride) + 1
        ow = math.ceil((w - window) / stride) + 1
    else:
        oh = (h - window) // stride + 1
        ow = (w - window) // stride + 1
    pad_h = max(0, (oh - 1) * stride + window - h)
    pad_w = max(0, (ow - 1) * stride + window - w)
    return oh, ow, pad_h, pad_w


def maxpool2d(x: np.ndarray, window: int, stride: int, ceil_mode: bool = False) -> np.ndarray:
    """Per-window maxima.  ceil_mode lets a trailing partial window count."""
    _check_4d(x, "maxpool2d input")
    n, c, h, w = x.shape
    oh, ow, pad_h, pad_w = _pool_geometry(h, w, window, stride, ceil_mode)
    xp = x
    if pad_h or pad_w:
        xp = np.pad(x, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), constant_values=-np.inf)
    patches = _conv_patches(xp, (window, window), stride, 1, oh, ow)
    return patches.max(axis=(4, 5))


def maxpool2d_vjp(x: np.ndarray, window: int, stride: int, gy: np.ndarray,
                  ceil_mode: bool = False) -> np.ndarray:
    """Route gy to the argmax of each window (first in row-major order on ties)."""
    n, c, h, w = x.shape
    oh, ow, pad_h, pad_w = _pool_geometry(h, w, window, stride, ceil_mode)
    if gy.shape != (n, c, oh, ow):
        raise ShapeMismatch(f"maxpool2d gy {gy.shape} != {(n, c, oh, ow)}")
    xp = x
    if pad_h or pad_w:
        xp = np.pad(x, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), constant_values=-np.inf)
    hp, wp = xp.shape[2], xp.shape[3]
    patches = _conv_patches(xp, (window, window), stride, 1, oh, ow)
    flat = patches.reshape(n, c, oh, ow, window * window)
    idx = flat.argmax(axis=4)  # first occurrence wins ties

    if stride == window:
        # windows are disjoint: scatter with put_along_axis on a zero buffer
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], gy[..., None], axis=4)
        gp = gflat.reshape(n, c, oh, ow, window, window)
        gxp = np.zeros_like(xp)
        gview = _conv_patches(gxp, (window, window), stride, 1, oh, ow)
        gview[...] = gp  # disjoint windows, plain assignment is safe
    else:
        gxp = np.zeros_like(xp)
        di, dj = np.divmod(idx, window)
        base_i = (np.arange(oh) * stride)[None, None, :, None]
        base_j = (np.arange(ow) * stride)[None, None, None, :]
        abs_i = base_i + di
        abs_j = base_j + dj
        nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        nn = nn[:, :, None, None]
        cc = cc[:, :, None, None]
        np.add.at(gxp, (np.broadcast_to(nn, abs_i.shape),
                        np.broadcast_to(cc, abs_i.shape), abs_i, abs_j), gy)
    return gxp[:, :, :h, :w] if (pad_h or pad_w) else gxp


def l2_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over all elements of (pred - target)^2."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"l2_loss shapes differ: {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d))


def l2_loss_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"l2_loss shapes differ: {pred.shape} vs {target.shape}")
    return 2.0 * (pred - target) / pred.size


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_labels(logits: np.ndarray, labels: np.ndarray) -> None:
    _check_4d(logits, "softmax logits")
    if labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeMismatch(
            f"labels {labels.shape} do not match logits {logits.shape} spatial dims")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise LabelOutOfRange(
            f"labels must lie in [0, {logits.shape[1]}), got range "
            f"[{labels.min()}, {labels.max()}]")


def softmax_ce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean per-pixel cross-entropy after a channel-wise softmax."""
    _check_labels(logits, labels)
    logp = _log_softmax(logits)
    picked = np.take_along_axis(logp, labels[:, None].astype(np.int64), axis=1)
    return float(-picked.mean())


def softmax_ce_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """(softmax - one_hot) / pixel_count."""
    _check_labels(logits, labels)
    p = np.exp(_log_softmax(logits))
    lab = labels[:, None].astype(np.int64)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, lab, 1.0, axis=1)
    count = labels.size
    return (p - onehot) / count
