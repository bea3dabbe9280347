"""Dense HWC tensors and the convolution primitives the network is built from.

A tensor here is a plain ``numpy.ndarray`` of shape ``(height, width, channels)``
and dtype float32.  Row-major layout means the flat index of element
``(y, x, c)`` is ``(y * width + x) * channels + c``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "ConvParams",
    "BatchNormParams",
    "as_tensor",
    "conv_output_size",
    "conv2d",
    "depthwise_conv2d",
    "pointwise_conv",
    "relu6",
    "fold_batchnorm",
    "fold_batchnorm_arrays",
    "resize_bilinear",
    "normalize_input",
]


def as_tensor(x, name: str = "input") -> np.ndarray:
    """Validate ``x`` as an HWC tensor and return it as contiguous float32."""
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected an HxWxC tensor, got shape {arr.shape}")
    if min(arr.shape) <= 0:
        raise ValueError(f"{name}: every dimension must be positive, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvParams:
    """Weights of one convolution. ``weight`` is ``[kH, kW, inC, outC]``."""

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float32)
        b = np.asarray(self.bias, dtype=np.float32)
        if w.ndim != 4 or min(w.shape) < 1:
            raise ValueError(f"conv weight must be [kH,kW,inC,outC], got {w.shape}")
        if b.shape != (w.shape[3],):
            raise ValueError(f"conv bias must have shape ({w.shape[3]},), got {b.shape}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"bad stride/padding {self.stride}/{self.padding}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self) -> int:
        return self.weight.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[3]


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    epsilon: float = 1e-3

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.float64) for a in
                  (self.gamma, self.beta, self.mean, self.variance)]
        n = arrays[0].shape
        if any(a.ndim != 1 or a.shape != n for a in arrays):
            raise ValueError("batch-norm arrays must be 1-D and of equal length")
        if np.any(arrays[3] < 0):
            raise ValueError("batch-norm variance must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("batch-norm epsilon must be positive")
        for field, a in zip(("gamma", "beta", "mean", "variance"), arrays):
            object.__setattr__(self, field, a)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """``floor((size + 2*padding - kernel) / stride) + 1``."""
    return (size + 2 * padding - kernel) // stride + 1


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((padding, padding), (padding, padding), (0, 0)))


def _output_dims(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    oh = conv_output_size(x.shape[0], kh, stride, padding)
    ow = conv_output_size(x.shape[1], kw, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ValueError(
            f"kernel {kh}x{kw} with stride {stride}, padding {padding} "
            f"does not fit a {x.shape[0]}x{x.shape[1]} input")
    return oh, ow


def conv2d(x: np.ndarray, params: ConvParams) -> np.ndarray:
    """Dense 2-D convolution (cross-correlation) with symmetric zero padding."""
    x = as_tensor(x)
    kh, kw, in_c, out_c = params.weight.shape
    if x.shape[2] != in_c:
        raise ValueError(f"conv expects {in_c} input channels, got {x.shape[2]}")
    s, p = params.stride, params.padding
    oh, ow = _output_dims(x, kh, kw, s, p)

    if kh == kw == 1 and p == 0:
        cols = x[: (oh - 1) * s + 1: s, : (ow - 1) * s + 1: s, :].reshape(oh * ow, in_c)
    else:
        xp = _pad(x, p)
        # (H', W', C, kh, kw) view -> pick strided positions -> (oh*ow, kh*kw*C)
        win = sliding_window_view(xp, (kh, kw), axis=(0, 1))
        win = win[: (oh - 1) * s + 1: s, : (ow - 1) * s + 1: s]
        cols = win.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * in_c)
    out = cols @ params.weight.reshape(kh * kw * in_c, out_c)
    out += params.bias
    return out.reshape(oh, ow, out_c)


def depthwise_conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                     stride: int = 1, padding: int = 0) -> np.ndarray:
    """Per-channel spatial convolution.

    ``kernel`` may be ``[kH, kW, C]`` or the container layout ``[kH, kW, C, 1]``.
    """
    x = as_tensor(x)
    k = np.asarray(kernel, dtype=np.float32)
    if k.ndim == 4 and k.shape[3] == 1:
        k = k[..., 0]
    if k.ndim != 3:
        raise ValueError(f"depthwise kernel must be [kH,kW,C], got {k.shape}")
    kh, kw, c = k.shape
    if c != x.shape[2]:
        raise ValueError(f"depthwise kernel has {c} channels, input has {x.shape[2]}")
    b = np.asarray(bias, dtype=np.float32)
    if b.shape != (c,):
        raise ValueError(f"depthwise bias must have shape ({c},), got {b.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"bad stride/padding {stride}/{padding}")
    oh, ow = _output_dims(x, kh, kw, stride, padding)
    xp = _pad(x, padding)

    out = np.zeros((oh, ow, c), dtype=np.float32)
    span_y, span_x = (oh - 1) * stride + 1, (ow - 1) * stride + 1
    for dy in range(kh):
        for dx in range(kw):
            out += xp[dy: dy + span_y: stride, dx: dx + span_x: stride, :] * k[dy, dx]
    out += b
    return out


def pointwise_conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """1x1 convolution, stride 1, no padding. ``weight`` is ``[1, 1, inC, outC]``."""
    w = np.asarray(weight, dtype=np.float32)
    if w.ndim == 2:
        w = w[None, None]
    if w.shape[:2] != (1, 1):
        raise ValueError(f"pointwise weight must be [1,1,inC,outC], got {w.shape}")
    return conv2d(x, ConvParams(w, bias, stride=1, padding=0))


def relu6(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 6.0)


def fold_batchnorm_arrays(weight: np.ndarray, bias: np.ndarray | None,
                          bn: BatchNormParams, depthwise: bool = False):
    """Fold batch norm into raw ``(weight, bias)`` arrays.

    Output channels live on the last axis for dense kernels and on axis 2 for
    depthwise kernels ``[kH,kW,C,1]``.  A missing bias is treated as zeros.
    """
    w = np.asarray(weight, dtype=np.float64)
    n_out = w.shape[2] if depthwise else w.shape[-1]
    if bn.gamma.shape[0] != n_out:
        raise ValueError(
            f"batch norm has {bn.gamma.shape[0]} channels, conv has {n_out} outputs")
    b = np.zeros(n_out) if bias is None else np.asarray(bias, dtype=np.float64)
    if b.shape != (n_out,):
        raise ValueError(f"bias must have shape ({n_out},), got {b.shape}")
    scale = bn.gamma / np.sqrt(bn.variance + bn.epsilon)
    if depthwise:
        w = w * scale[None, None, :, None]
    else:
        w = w * scale
    folded_bias = bn.beta + (b - bn.mean) * scale
    return w.astype(np.float32), folded_bias.astype(np.float32)


def fold_batchnorm(conv: ConvParams, bn: BatchNormParams) -> ConvParams:
    """Return a convolution equivalent to ``bn(conv(x))`` at inference time."""
    w, b = fold_batchnorm_arrays(conv.weight, conv.bias, bn)
    return ConvParams(w, b, stride=conv.stride, padding=conv.padding)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers, edge-clamped.

    Source coordinate for destination index ``d`` is
    ``(d + 0.5) * (in / out) - 0.5``, clamped to ``[0, in - 1]``.
    """
    image = as_tensor(image, "image")
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    h, w, _ = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, (src - i0).astype(np.float32)

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    # lerp written as a + (b - a) * t so that equal neighbours reproduce exactly
    rows = image[y0] + (image[y1] - image[y0]) * fy[:, None, None]
    out = rows[:, x0] + (rows[:, x1] - rows[:, x0]) * fx[None, :, None]
    return np.ascontiguousarray(out, dtype=np.float32)


def normalize_input(image: np.ndarray) -> np.ndarray:
    """Map byte intensities 0..255 onto [-1, 1]."""
    x = np.asarray(image, dtype=np.float32)
    return x / np.float32(127.5) - np.float32(1.0)
