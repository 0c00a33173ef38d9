"""Denoising, synchronization, segmentation and normalization of recordings."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from .audio_io import AudioBuffer
from .errors import ValidationError
from .signal_gen import PulseSchedule

LOW_QUALITY_PEAK = 0.2


@dataclass(frozen=True)
class BandpassSpec:
    """Sensing-band filter.

    ``fir_window`` is a Kaiser-window FIR applied centred (zero delay);
    ``biquad_cascade`` is an elliptic second-order-section cascade applied
    forward and backward.
    """

    f_lo: float = 18000.0
    f_hi: float = 22000.0
    design: str = "fir_window"
    order: int = 0
    min_stop_atten: float = 40.0
    transition: float = 1000.0

    def __post_init__(self):
        if not 0 < self.f_lo < self.f_hi:
            raise ValidationError("need 0 < f_lo < f_hi")
        if self.design not in ("fir_window", "biquad_cascade"):
            raise ValidationError(f"unknown bandpass design {self.design!r}")

    def check_rate(self, sample_rate: int) -> None:
        if self.f_hi + self.transition / 2 >= sample_rate / 2:
            raise ValidationError(
                f"band {self.f_lo:g}-{self.f_hi:g} Hz is infeasible at {sample_rate} Hz")


@dataclass(frozen=True)
class SyncResult:
    delay: int
    peak_corr: float
    normalized_peak: float

    @property
    def low_quality(self) -> bool:
        return self.normalized_peak < LOW_QUALITY_PEAK


@lru_cache(maxsize=16)
def _design(spec: BandpassSpec, sample_rate: int):
    spec.check_rate(sample_rate)
    half = spec.transition / 2
    # cutoffs sit half a transition outside the band so the band edges stay flat
    lo, hi = spec.f_lo - 0.4 * spec.transition, spec.f_hi + 0.4 * spec.transition
    if spec.design == "fir_window":
        atten = max(60.0, spec.min_stop_atten + 20.0)
        numtaps, beta = sps.kaiserord(atten, spec.transition / (0.5 * sample_rate))
        if spec.order:
            numtaps = spec.order
        numtaps |= 1
        taps = sps.firwin(numtaps, [lo, hi], window=("kaiser", beta), pass_zero=False, fs=sample_rate)
        return "fir", taps
    order = spec.order or 6
    sos = sps.ellip(order, 0.1, max(40.0, spec.min_stop_atten), [lo - half * 0.2, hi + half * 0.2],
                    btype="bandpass", fs=sample_rate, output="sos")
    return "sos", sos


def filter_taps(spec: BandpassSpec, sample_rate: int):
    """The designed filter: ``("fir", taps)`` or ``("sos", sections)``."""
    return _design(spec, sample_rate)


def filter_margin(spec: BandpassSpec, sample_rate: int) -> int:
    """Samples of context on each side that make local filtering exact (FIR)."""
    kind, coeffs = _design(spec, sample_rate)
    return (len(coeffs) - 1) // 2 if kind == "fir" else 2048


def bandpass_samples(x, spec: BandpassSpec, sample_rate: int) -> np.ndarray:
    kind, coeffs = _design(spec, sample_rate)
    x = np.asarray(x, dtype=np.float64)
    if kind == "fir":
        if x.shape[-1] == 0:
            return x.copy()
        delay = (len(coeffs) - 1) // 2
        kernel = np.reshape(coeffs, (1,) * (x.ndim - 1) + (-1,))
        full = sps.oaconvolve(x, kernel, mode="full", axes=-1)
        return full[..., delay:delay + x.shape[-1]]
    padlen = min(3 * (2 * len(coeffs) + 1), x.shape[-1] - 1)
    return sps.sosfiltfilt(coeffs, x, axis=-1, padlen=max(padlen, 0))


def bandpass(buffer: AudioBuffer, spec: BandpassSpec = BandpassSpec()) -> AudioBuffer:
    """Keep the sensing band of every channel, without shifting pulse positions."""
    out = np.empty_like(buffer.samples)
    for ch in range(buffer.channels):
        out[ch] = bandpass_samples(buffer.samples[ch], spec, buffer.sample_rate)
    return AudioBuffer(out, buffer.sample_rate)


def find_delay(recorded, template, max_shift: int | None = None) -> SyncResult:
    """Shift of ``recorded`` that maximizes its correlation with ``template``.

    The score for shift ``m`` is ``sum_n recorded[n + m] * template[n]``;
    ties resolve to the smaller shift.
    """
    rec = np.asarray(recorded, dtype=np.float64)
    tpl = np.asarray(template, dtype=np.float64)
    if rec.size == 0 or tpl.size == 0:
        raise ValidationError("find_delay needs non-empty inputs")
    if tpl.size > rec.size:
        raise ValidationError("template longer than recording")
    limit = rec.size - tpl.size
    if max_shift is None:
        max_shift = limit
    if not 0 <= max_shift <= limit:
        raise ValidationError(f"max_shift must lie in [0, {limit}]")

    corr = np.correlate(rec[:max_shift + tpl.size], tpl, mode="valid")
    m = int(np.argmax(corr))
    peak = float(corr[m])
    denom = float(np.linalg.norm(tpl) * np.linalg.norm(rec[m:m + tpl.size]))
    normalized = min(max(peak / denom, 0.0), 1.0) if denom > 0 else 0.0
    return SyncResult(m, peak, normalized)


def synchronize(channel, schedule: PulseSchedule, template, max_shift: int | None = None,
                recheck_every: int = 50, drift_tol: int = 2, recheck_radius: int = 32) -> np.ndarray:
    """Per-pulse delays for one channel.

    The first pulse is located by a search over one period; every
    ``recheck_every`` pulses the delay is re-estimated locally and replaced
    if it drifted by more than ``drift_tol`` samples.
    """
    x = np.asarray(channel, dtype=np.float64)
    tpl = np.asarray(template, dtype=np.float64)
    starts = schedule.pulse_starts
    delays = np.zeros(len(starts), dtype=np.int64)
    if not starts:
        return delays
    if max_shift is None:
        max_shift = schedule.period_samples
    first = starts[0]
    window = x[first:first + max_shift + tpl.size]
    delay = find_delay(window, tpl, min(max_shift, window.size - tpl.size)).delay

    for k, p in enumerate(starts):
        if k and k % recheck_every == 0:
            lo = p + delay - recheck_radius
            hi = p + delay + tpl.size + recheck_radius
            if lo >= 0 and hi <= x.size:
                local = find_delay(x[lo:hi], tpl, 2 * recheck_radius)
                candidate = delay - recheck_radius + local.delay
                if abs(candidate - delay) > drift_tol:
                    delay = candidate
        delays[k] = delay
    return delays


def extract_segments(buffer: AudioBuffer, schedule: PulseSchedule, delay) -> list[np.ndarray]:
    """One ``(channels, pulse_len)`` array per pulse that fits inside ``buffer``.

    ``delay`` is a single shift or one shift per pulse.  Audio after the
    pulse (echo tail) is never included.
    """
    plen = schedule.pulse_len_samples
    delays = np.broadcast_to(np.asarray(delay, dtype=np.int64), (len(schedule),))
    segments = []
    for p, d in zip(schedule.pulse_starts, delays):
        lo = p + int(d)
        if lo < 0 or lo + plen > buffer.frames:
            continue
        segments.append(buffer.samples[:, lo:lo + plen].astype(np.float64))
    return segments


def normalize(segment) -> tuple[np.ndarray, bool]:
    """Scale so that the peak magnitude is 1.

    Returns the scaled segment and a flag that is True when the segment was
    all zeros (returned unchanged).
    """
    x = np.asarray(segment, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("cannot normalize an empty segment")
    peak = np.max(np.abs(x))
    if peak == 0:
        return x.copy(), True
    return x / peak, False
