"""Forward and backward passes of the CNN building blocks (NHWC layout)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ValidationError


@dataclass(frozen=True)
class ConvSpec:
    """Square convolution: input size ``m``, kernel ``k``, stride ``l``,
    padding ``d`` and ``t`` filters."""

    m: int
    k: int = 3
    l: int = 1
    d: int = 0
    t: int = 32


def conv_output_dims(spec: ConvSpec) -> tuple[int, int, int]:
    """Output ``(size, size, filters)`` with size ``(m - k + 2d) / l + 1``."""
    if spec.m < 1 or spec.k < 1 or spec.l < 1 or spec.d < 0 or spec.t < 1:
        raise ValidationError(f"invalid conv spec {spec}")
    span = spec.m - spec.k + 2 * spec.d
    if span < 0 or span % spec.l:
        raise ValidationError(f"(m - k + 2d) = {span} is not a non-negative multiple of stride {spec.l}")
    size = span // spec.l + 1
    return size, size, spec.t


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (B, H, W, C) with ``w`` (k, k, C, t)."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    bsz, h, wd, c = x.shape
    k, _, cin, t = w.shape
    if cin != c:
        raise ValidationError(f"kernel expects {cin} channels, input has {c}")
    ho, wo = (h - k) // stride + 1, (wd - k) // stride + 1
    if stride == 1 and c < 8:
        # few channels: one wide matmul over gathered patches is fastest
        patches = sliding_window_view(x, (k, k), axis=(1, 2))
        cols = np.ascontiguousarray(patches.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, k * k * c)
        out = (cols @ w.reshape(k * k * c, t)).reshape(bsz, ho, wo, t)
    else:
        out = np.zeros((bsz, ho, wo, t), dtype=np.result_type(x, w))
        for i in range(k):
            for j in range(k):
                xs = x[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]
                out += xs @ w[i, j]
    out += b
    return out


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int = 1,
                    pad: int = 0, need_dx: bool = True):
    """Gradients ``(dx, dw, db)`` of a convolution given upstream ``dout``."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    bsz = x.shape[0]
    k, _, c, t = w.shape
    _, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, t)
    dx = np.zeros_like(x) if need_dx else None
    if stride == 1 and c < 8:
        patches = sliding_window_view(x, (k, k), axis=(1, 2))
        cols = np.ascontiguousarray(patches.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, k * k * c)
        dw = (cols.T @ d2).reshape(w.shape).astype(w.dtype, copy=False)
        if need_dx:
            dcols = (d2 @ w.reshape(k * k * c, t).T).reshape(bsz, ho, wo, k, k, c)
            for i in range(k):
                for j in range(k):
                    dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    else:
        dw = np.empty_like(w)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(i, i + stride * (ho - 1) + 1, stride),
                      slice(j, j + stride * (wo - 1) + 1, stride), slice(None))
                dw[i, j] = np.ascontiguousarray(x[sl]).reshape(-1, c).T @ d2
                if need_dx:
                    dx[sl] += (d2 @ w[i, j].T).reshape(bsz, ho, wo, c)
    db = d2.sum(axis=0)
    if need_dx and pad:
        dx = dx[:, pad:-pad, pad:-pad, :]
    return dx, dw, db


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, out: np.ndarray) -> np.ndarray:
    return dout * (out > 0)


def _window(x: np.ndarray, size: int, a: int, b: int) -> np.ndarray:
    ho, wo = x.shape[1] // size, x.shape[2] // size
    return x[:, a:a + size * ho:size, b:b + size * wo:size, :]


def maxpool_infer(x: np.ndarray, size: int = 2) -> np.ndarray:
    """Non-overlapping max pool; trailing rows/cols that do not fill a window are dropped."""
    out = _window(x, size, 0, 0).copy()
    for a in range(size):
        for b in range(size):
            if a or b:
                np.maximum(out, _window(x, size, a, b), out=out)
    return out


def maxpool_forward(x: np.ndarray, size: int = 2):
    """Max pool plus a boolean mask of the input marking each window's winner.

    Ties go to the first maximal element in row-major window order, so every
    window has exactly one winner.
    """
    out = maxpool_infer(x, size)
    mask = np.zeros(x.shape, dtype=bool)
    free = np.ones(out.shape, dtype=bool)
    for a in range(size):
        for b in range(size):
            win = (_window(x, size, a, b) == out) & free
            _window(mask, size, a, b)[...] = win
            free &= ~win
    return out, mask


def maxpool_backward(dout: np.ndarray, mask: np.ndarray, in_shape, size: int = 2) -> np.ndarray:
    """Route each upstream gradient to the window element chosen in the forward pass."""
    dx = np.zeros(in_shape, dtype=dout.dtype)
    for a in range(size):
        for b in range(size):
            _window(dx, size, a, b)[...] = dout * _window(mask, size, a, b)
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout multiplier: 0 for dropped units, ``1 / (1 - rate)`` otherwise."""
    if rate <= 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype(1.0 - rate)
