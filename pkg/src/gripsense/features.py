"""Time-frequency images of pulse segments.

A segment is turned into a windowed short-time DFT, cropped to the sensing
band, converted to log magnitude, min-max scaled and resized to a square
image whose three channels are copies of one another.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import atomic_write_bytes
from .errors import FormatError, TruncatedFileError, ValidationError

GSIM_MAGIC = b"GSIM"


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 256
    hop: int = 64
    fft_len: int = 256
    crop_lo: float = 18000.0
    crop_hi: float = 22000.0
    out_size: int = 150
    log_floor: float = -80.0
    sample_rate: int = 48000

    def __post_init__(self):
        if not 0 < self.hop <= self.window_len <= self.fft_len:
            raise ValidationError("need 0 < hop <= window_len <= fft_len")
        if not 0 <= self.crop_lo < self.crop_hi <= self.sample_rate / 2:
            raise ValidationError("crop band must lie within Nyquist")
        if self.out_size < 1:
            raise ValidationError("out_size must be >= 1")

    @property
    def window(self) -> np.ndarray:
        return np.hamming(self.window_len)

    def band_bins(self) -> np.ndarray:
        """Indices of the DFT bins whose centre frequency lies in the crop band."""
        centres = np.arange(self.fft_len // 2 + 1) * self.sample_rate / self.fft_len
        return np.flatnonzero((centres >= self.crop_lo) & (centres <= self.crop_hi))


def frame_count(n: int, cfg: StftConfig) -> int:
    return (n - cfg.window_len) // cfg.hop + 1


def dtstft(segment, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Short-time DFT, shape ``(frames, fft_len // 2 + 1)``.

    Entry ``(m, f)`` is ``sum_n x[n] w[n - m*hop] exp(-2j*pi*f*n/fft_len)``
    with ``n`` the absolute sample index, so frame phases are referenced to
    the start of the segment.  Only frames lying fully inside the segment
    are computed.  Leading axes of ``segment`` are treated as a batch.
    """
    x = np.asarray(segment, dtype=np.float64)
    if x.ndim < 1 or x.shape[-1] < cfg.window_len:
        raise ValidationError(f"segment needs >= {cfg.window_len} samples")
    n_frames = frame_count(x.shape[-1], cfg)
    frames = sliding_window_view(x, cfg.window_len, axis=-1)[..., ::cfg.hop, :][..., :n_frames, :]
    spec = np.fft.rfft(frames * cfg.window, n=cfg.fft_len, axis=-1)
    bins = np.arange(spec.shape[-1])
    offsets = np.arange(n_frames)[:, None] * cfg.hop
    # rfft measures phase from each frame start; move the reference to n = 0
    return spec * np.exp(-2j * np.pi * ((offsets * bins) % cfg.fft_len) / cfg.fft_len)


def crop_band(spec, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Log magnitude (dB) of the sensing-band bins, floored at ``log_floor``."""
    mag = np.abs(np.asarray(spec)[..., cfg.band_bins()])
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    return np.maximum(db, cfg.log_floor)


def _linear_resize_axis(m: np.ndarray, size: int, axis: int) -> np.ndarray:
    n = m.shape[axis]
    if n == size:
        return m
    pos = np.linspace(0.0, n - 1, size) if n > 1 else np.zeros(size)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    a = np.take(m, lo, axis=axis)
    b = np.take(m, hi, axis=axis)
    shape = [1] * m.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def resize_bilinear(m, rows: int, cols: int) -> np.ndarray:
    """Bilinear resize with corner pixels pinned to the input corners."""
    m = np.asarray(m, dtype=np.float64)
    return _linear_resize_axis(_linear_resize_axis(m, rows, -2), cols, -1)


def to_image(m, out_size: int = 150) -> np.ndarray:
    """Min-max scaled, resized, 3-channel float32 image of a real matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0 or m.ndim != 2:
        raise ValidationError("to_image needs a non-empty 2-D matrix")
    if np.isnan(m).any():
        raise ValidationError("matrix contains NaN")
    lo, hi = m.min(), m.max()
    scaled = np.full(m.shape, 0.5) if hi == lo else (m - lo) / (hi - lo)
    img = np.clip(resize_bilinear(scaled, out_size, out_size), 0.0, 1.0).astype(np.float32)
    return np.repeat(img[:, :, None], 3, axis=2)


def segment_features(segment, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Cropped log-magnitude matrix of one (already normalized) segment."""
    return crop_band(dtstft(segment, cfg), cfg)


def featurize(segment, cfg: StftConfig = StftConfig()) -> np.ndarray:
    return to_image(segment_features(segment, cfg), cfg.out_size)


def to_images(matrices, out_size: int = 150) -> np.ndarray:
    """Vectorized :func:`to_image` over a stack ``(N, rows, cols)``."""
    m = np.asarray(matrices, dtype=np.float64)
    if m.ndim == 2:
        return to_image(m, out_size)[None]
    if m.ndim != 3:
        raise ValidationError("to_images needs a (N, rows, cols) stack")
    if m.shape[0] == 0:
        return np.zeros((0, out_size, out_size, 3), dtype=np.float32)
    if np.isnan(m).any():
        raise ValidationError("matrix contains NaN")
    lo = m.min(axis=(1, 2), keepdims=True)
    hi = m.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = span == 0
    scaled = np.where(flat, 0.5, (m - lo) / np.where(flat, 1.0, span))
    img = np.clip(resize_bilinear(scaled, out_size, out_size), 0.0, 1.0).astype(np.float32)
    return np.repeat(img[..., None], 3, axis=3)


class ImageSet:
    """Lazily rendered images backed by small log-magnitude matrices.

    Indexing with an integer array returns an ``(N, S, S, 3)`` float32 batch,
    identical to stacking :func:`to_image` outputs.
    """

    def __init__(self, matrices, out_size: int = 150):
        self.matrices = np.asarray(matrices, dtype=np.float64)
        self.out_size = out_size

    def __len__(self):
        return self.matrices.shape[0]

    @property
    def shape(self):
        return (len(self), self.out_size, self.out_size, 3)

    def __getitem__(self, idx):
        if np.isscalar(idx):
            return to_image(self.matrices[idx], self.out_size)
        return to_images(self.matrices[idx], self.out_size)


def write_gsim(array, path) -> None:
    """Store a 2-D or 3-D float matrix as ``GSIM`` + u32 rows/cols/channels + float32 data."""
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValidationError("GSIM holds 2-D or 3-D matrices")
    header = GSIM_MAGIC + struct.pack("<III", *a.shape)
    atomic_write_bytes(path, header + np.ascontiguousarray(a).tobytes())


def read_gsim(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != GSIM_MAGIC:
        raise FormatError(f"{path}: bad magic")
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: truncated header")
    rows, cols, chans = struct.unpack_from("<III", raw, 4)
    need = rows * cols * chans * 4
    if len(raw) - 16 < need:
        raise TruncatedFileError(f"{path}: expected {need} data bytes")
    return np.frombuffer(raw, dtype="<f4", count=rows * cols * chans, offset=16).reshape(rows, cols, chans).copy()
