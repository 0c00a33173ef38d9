"""Periodic ultrasonic sensing pulses.

Each pulse is a linear chirp whose two ends are smoothed with the halves of
a Hamming window; pulses repeat once per period with silence in between.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .audio_io import AudioBuffer, DEFAULT_SAMPLE_RATE, atomic_write_bytes
from .errors import FormatError, ValidationError


@dataclass(frozen=True)
class PulseConfig:
    f_start: float = 18000.0
    f_end: float = 22000.0
    pulse_len: float = 0.025
    gap_len: float = 0.075
    taper_len: float = 0.002
    sample_rate: int = DEFAULT_SAMPLE_RATE
    amplitude: float = 0.5

    def __post_init__(self):
        nyquist = self.sample_rate / 2
        if not 0 < self.f_start < self.f_end < nyquist:
            raise ValidationError(
                f"need 0 < f_start < f_end < {nyquist:g} Hz, got {self.f_start:g}..{self.f_end:g}")
        if not self.pulse_len > 2 * self.taper_len >= 0:
            raise ValidationError("need pulse_len > 2 * taper_len >= 0")
        if self.gap_len < 0:
            raise ValidationError("gap_len must be >= 0")
        if not 0 < self.amplitude <= 1:
            raise ValidationError("amplitude must lie in (0, 1]")

    @property
    def pulse_samples(self) -> int:
        return int(round(self.pulse_len * self.sample_rate))

    @property
    def period_samples(self) -> int:
        return int(round((self.pulse_len + self.gap_len) * self.sample_rate))

    @property
    def taper_samples(self) -> int:
        return int(round(self.taper_len * self.sample_rate))

    @property
    def period(self) -> float:
        return self.pulse_len + self.gap_len


@dataclass(frozen=True)
class PulseSchedule:
    """Sample index of every emitted pulse."""

    pulse_starts: tuple[int, ...]
    pulse_len_samples: int
    period_samples: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        starts = tuple(int(s) for s in self.pulse_starts)
        if any(b - a != self.period_samples for a, b in zip(starts, starts[1:])):
            raise ValidationError("pulse starts must be spaced exactly one period apart")
        object.__setattr__(self, "pulse_starts", starts)

    def __len__(self):
        return len(self.pulse_starts)

    def to_json(self) -> dict:
        return {"period_samples": self.period_samples,
                "pulse_len_samples": self.pulse_len_samples,
                "sample_rate": self.sample_rate,
                "starts": list(self.pulse_starts)}

    @classmethod
    def from_json(cls, obj: dict) -> "PulseSchedule":
        try:
            return cls(tuple(obj["starts"]), int(obj["pulse_len_samples"]),
                       int(obj["period_samples"]), int(obj.get("sample_rate", DEFAULT_SAMPLE_RATE)))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad schedule record: {exc}") from None

    def save(self, path) -> None:
        atomic_write_bytes(path, (json.dumps(self.to_json()) + "\n").encode())

    @classmethod
    def load(cls, path) -> "PulseSchedule":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_json(json.load(fh))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: {exc.msg}") from None


def instantaneous_frequency(config: PulseConfig, t):
    """Chirp frequency in Hz at time ``t`` seconds into the pulse."""
    return config.f_start + (config.f_end - config.f_start) * np.asarray(t) / config.pulse_len


def linear_chirp(config: PulseConfig) -> np.ndarray:
    """Untapered linear sweep from ``f_start`` to ``f_end`` over one pulse."""
    t = np.arange(config.pulse_samples) / config.sample_rate
    sweep = config.f_end - config.f_start
    phase = config.f_start * t + sweep * t**2 / (2 * config.pulse_len)
    return config.amplitude * np.sin(2 * np.pi * phase)


def hamming_half(length: int) -> np.ndarray:
    """Rising half of a Hamming window: 0.08 at index 0 up to 1.0 at the end."""
    if length <= 0:
        return np.ones(0)
    if length == 1:
        return np.array([0.08])
    i = np.arange(length)
    return 0.54 - 0.46 * np.cos(np.pi * i / (length - 1))


def apply_edge_taper(samples, taper_len_samples: int) -> np.ndarray:
    """Smooth the first and last ``taper_len_samples`` with Hamming halves."""
    out = np.array(samples, dtype=np.float64, copy=True)
    n = int(taper_len_samples)
    if n < 0 or 2 * n > out.size:
        raise ValidationError(f"taper of {n} samples does not fit a {out.size}-sample pulse")
    if n == 0:
        return out
    ramp = hamming_half(n)
    out[:n] *= ramp
    out[-n:] *= ramp[::-1]
    return out


def tapered_pulse(config: PulseConfig) -> np.ndarray:
    return apply_edge_taper(linear_chirp(config), config.taper_samples)


def pulse_train(config: PulseConfig, duration: float) -> tuple[AudioBuffer, PulseSchedule]:
    """Mono pulse train of ``duration`` seconds and the matching schedule."""
    if duration < config.period - 1e-12:
        raise ValidationError(f"duration {duration} s is shorter than one period ({config.period} s)")
    total = int(round(duration * config.sample_rate))
    period, plen = config.period_samples, config.pulse_samples
    count = (total - plen) // period + 1
    starts = tuple(k * period for k in range(count))

    pulse = tapered_pulse(config)
    train = np.zeros(total, dtype=np.float64)
    for s in starts:
        train[s:s + plen] = pulse
    schedule = PulseSchedule(starts, plen, period, config.sample_rate)
    return AudioBuffer(train, config.sample_rate), schedule


def pulse_config_dict(config: PulseConfig) -> dict:
    return asdict(config)
