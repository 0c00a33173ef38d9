"""WAV and JSON-lines persistence.

Audio is carried as an :class:`AudioBuffer` holding float32 samples shaped
``(channels, frames)`` with a nominal range of [-1, 1].  Only little-endian
RIFF/WAVE files are handled, either 16-bit PCM or 32-bit IEEE float.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import FormatError, TruncatedFileError, UnsupportedEncodingError, ValidationError

DEFAULT_SAMPLE_RATE = 48000

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE
_PCM16_MAX = 1.0 - 1.0 / 32768.0


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Multi-channel PCM samples at a fixed sample rate.

    Attributes:
        samples: float32 array of shape ``(channels, frames)``.
        sample_rate: samples per second per channel.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        data = np.asarray(self.samples, dtype=np.float32)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValidationError(f"samples must be (channels, frames), got shape {data.shape}")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.frames / self.sample_rate

    def channel(self, index: int) -> np.ndarray:
        return self.samples[index]

    def __eq__(self, other):
        if not isinstance(other, AudioBuffer):
            return NotImplemented
        return (self.sample_rate == other.sample_rate
                and self.samples.shape == other.samples.shape
                and bool(np.array_equal(self.samples, other.samples)))


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_wav(buffer: AudioBuffer, encoding: str) -> bytes:
    data = buffer.samples
    if not np.all(np.isfinite(data)):
        raise ValidationError("cannot write non-finite amplitudes")
    if encoding == "float32":
        fmt_tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
        body = np.ascontiguousarray(data.T).astype("<f4").tobytes()
    elif encoding == "pcm16":
        fmt_tag, bits = _WAVE_FORMAT_PCM, 16
        clipped = np.clip(data.astype(np.float64), -1.0, _PCM16_MAX)
        quant = np.rint(clipped * 32768.0).astype("<i2")
        body = np.ascontiguousarray(quant.T).tobytes()
    else:
        raise ValidationError(f"unknown encoding {encoding!r}; use 'pcm16' or 'float32'")

    channels = buffer.channels
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, buffer.sample_rate,
                      buffer.sample_rate * block_align, block_align, bits)
    chunks = b"fmt " + struct.pack("<I", len(fmt)) + fmt
    if fmt_tag == _WAVE_FORMAT_IEEE_FLOAT:
        # non-PCM formats carry a fact chunk with the frame count
        chunks += b"fact" + struct.pack("<II", 4, buffer.frames)
    chunks += b"data" + struct.pack("<I", len(body)) + body
    if len(body) % 2:
        chunks += b"\x00"
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


def write_wav(buffer: AudioBuffer, path, encoding: str = "pcm16") -> None:
    """Write ``buffer`` to ``path`` as a RIFF/WAVE file.

    ``pcm16`` clamps to [-1, 1 - 2**-15] and rounds to the nearest code;
    ``float32`` is lossless for float32 samples.
    """
    atomic_write_bytes(path, _encode_wav(buffer, encoding))


def _iter_chunks(raw: bytes) -> Iterator[tuple[bytes, bytes]]:
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise TruncatedFileError(f"chunk {cid!r} declares {size} bytes, {len(body)} present")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioBuffer:
    """Read a 16-bit PCM or 32-bit float WAV file into an :class:`AudioBuffer`."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = data = None
    for cid, body in _iter_chunks(raw):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
    if fmt is None or len(fmt) < 16:
        raise FormatError(f"{path}: missing or short fmt chunk")
    if data is None:
        raise FormatError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise FormatError(f"{path}: short WAVE_FORMAT_EXTENSIBLE header")
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if channels < 1 or rate <= 0:
        raise FormatError(f"{path}: invalid channel count or sample rate")

    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = "<f4", None
    else:
        raise UnsupportedEncodingError(f"{path}: format tag {tag:#06x} with {bits} bits is not supported")
    if block_align != channels * bits // 8:
        raise FormatError(f"{path}: block_align {block_align} inconsistent with header")

    usable = len(data) - len(data) % block_align
    frames = np.frombuffer(data[:usable], dtype=dtype).reshape(-1, channels).T
    if scale is None:
        samples = frames.astype(np.float32)
    else:
        samples = (frames.astype(np.float32) * np.float32(scale))
    return AudioBuffer(samples, rate)


def write_jsonl(records: Iterable[dict], path) -> None:
    payload = "".join(json.dumps(r, sort_keys=False) + "\n" for r in records)
    atomic_write_bytes(path, payload.encode("utf-8"))


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc.msg}") from None
    return out


def write_json(obj, path) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def truth_records(labels, sample_period: float = 0.1) -> list[dict]:
    """Ground-truth label track as JSONL records ``{"t": ..., "status": ...}``."""
    return [{"t": round(i * sample_period, 6), "status": lab} for i, lab in enumerate(labels)]


def read_truth(path) -> list[str]:
    """Status labels from a ground-truth JSONL file, ordered by time."""
    records = sorted(read_jsonl(path), key=lambda r: float(r["t"]))
    labels = []
    for rec in records:
        status = rec.get("status")
        if status not in ("handheld", "handsfree"):
            raise FormatError(f"{path}: bad status {status!r}")
        labels.append(status)
    return labels
