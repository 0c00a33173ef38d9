"""Parametric stand-in for what the two phone microphones record.

Every contact surface is modelled as a piecewise-constant gain profile over
the sensing band plus one short echo.  Hands damp the upper half of the sweep
and lift the region near 19 kHz; support surfaces leave 20-22 kHz strong.
The numbers are simulation parameters, not measurements of real surfaces.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .audio_io import AudioBuffer
from .errors import FormatError, ValidationError
from .signal_gen import PulseConfig, PulseSchedule, pulse_train, tapered_pulse

HANDHELD = "handheld"
HANDSFREE = "handsfree"

BAND_LO = 18000.0
BAND_HI = 22000.0
_SILENT_DB = -120.0


def surface_class(name: str) -> str:
    return HANDHELD if name.startswith("hand_") else HANDSFREE


@dataclass(frozen=True)
class SurfaceModel:
    """Contact-surface signature.

    ``band_gains`` holds ``(f_lo, f_hi, gain_db)`` triples that partition
    18-22 kHz.  Gains of the outermost bands extend to DC and Nyquist.
    """

    name: str
    band_gains: tuple[tuple[float, float, float], ...]
    echo_gain: float = -math.inf
    echo_delay: float = 0.0
    jitter_db: float = 0.0

    def __post_init__(self):
        bands = tuple(sorted((float(lo), float(hi), float(g)) for lo, hi, g in self.band_gains))
        if not bands:
            raise ValidationError(f"{self.name}: no bands")
        if bands[0][0] != BAND_LO or bands[-1][1] != BAND_HI:
            raise ValidationError(f"{self.name}: bands must span {BAND_LO:g}-{BAND_HI:g} Hz")
        for (lo, hi, _), nxt in zip(bands, bands[1:] + ((BAND_HI, None, None),)):
            if not lo < hi or hi != nxt[0]:
                raise ValidationError(f"{self.name}: bands must partition the band without gaps or overlap")
        if self.echo_delay < 0 or self.jitter_db < 0:
            raise ValidationError(f"{self.name}: echo_delay and jitter_db must be >= 0")
        object.__setattr__(self, "band_gains", bands)

    @property
    def kind(self) -> str:
        return surface_class(self.name)

    @property
    def edges(self) -> np.ndarray:
        return np.array([b[0] for b in self.band_gains] + [BAND_HI])

    @property
    def gains_db(self) -> np.ndarray:
        return np.array([b[2] for b in self.band_gains])


def _bands(*gains, edges=(18000, 19000, 20000, 21000, 22000)):
    return tuple((edges[i], edges[i + 1], g) for i, g in enumerate(gains))


# hand_* share suppression above 20 kHz and a lift around 19 kHz
SURFACES: dict[str, SurfaceModel] = {s.name: s for s in (
    SurfaceModel("hand_still", _bands(2.0, 4.0, -18.0, -20.0), -12.0, 0.0004, 1.5),
    SurfaceModel("hand_texting", _bands(1.0, 3.0, -17.0, -21.0), -12.0, 0.0004, 2.0),
    SurfaceModel("hand_scrolling", _bands(2.0, 3.0, -19.0, -18.0), -13.0, 0.0004, 2.0),
    SurfaceModel("hand_calling", _bands(3.0, 4.0, -20.0, -22.0), -10.0, 0.0005, 1.5),
    SurfaceModel("coat_pocket", _bands(-4.0, -6.0, -2.0, -1.0), -20.0, 0.0003, 1.5),
    SurfaceModel("pant_pocket", _bands(-3.0, -7.0, -3.0, -2.0), -20.0, 0.0003, 1.5),
    SurfaceModel("cup_holder", _bands(0.0, -1.0, 3.0, 2.0), -6.0, 0.0006, 1.0),
    SurfaceModel("console", _bands(-2.0, -5.0, 2.0, 3.0), -6.0, 0.0005, 1.0),
    SurfaceModel("mount", _bands(1.0, 0.0, 4.0, 3.0), -8.0, 0.0007, 1.0),
    SurfaceModel("mount_charging", _bands(1.0, -1.0, 3.0, 4.0), -8.0, 0.0007, 1.0),
    SurfaceModel("seat", _bands(-3.0, -6.0, 0.0, 0.0), -10.0, 0.0004, 1.0),
)}

HANDHELD_SURFACES = tuple(n for n in SURFACES if surface_class(n) == HANDHELD)
HANDSFREE_SURFACES = tuple(n for n in SURFACES if surface_class(n) == HANDSFREE)

IDENTITY_SURFACE = SurfaceModel("identity", _bands(0.0, 0.0, 0.0, 0.0))


def get_surface(name: str) -> SurfaceModel:
    try:
        return SURFACES[name]
    except KeyError:
        raise ValidationError(f"unknown surface {name!r}") from None


def mic2_variant(surface: SurfaceModel) -> SurfaceModel:
    """Bottom microphone sits next to the speaker: echo 3 dB stronger."""
    return replace(surface, echo_gain=surface.echo_gain + 3.0)


def _finite_db(g: float) -> float:
    return max(g, _SILENT_DB)


def blend_surfaces(a: SurfaceModel, b: SurfaceModel, alpha: float) -> SurfaceModel:
    """Interpolate every parameter linearly (gains in dB) from ``a`` to ``b``."""
    alpha = float(np.clip(alpha, 0.0, 1.0))
    if alpha == 0.0:
        return a
    if alpha == 1.0:
        return b
    edges = np.union1d(a.edges, b.edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    ga, gb = band_gain_db(a, mids), band_gain_db(b, mids)
    gains = (1 - alpha) * ga + alpha * gb
    bands = tuple((edges[i], edges[i + 1], gains[i]) for i in range(len(mids)))
    echo = (1 - alpha) * _finite_db(a.echo_gain) + alpha * _finite_db(b.echo_gain)
    return SurfaceModel(
        b.name, bands, echo,
        (1 - alpha) * a.echo_delay + alpha * b.echo_delay,
        (1 - alpha) * a.jitter_db + alpha * b.jitter_db,
    )


def band_gain_db(surface: SurfaceModel, freqs, gains_db=None) -> np.ndarray:
    """Gain in dB the surface applies at each frequency in ``freqs``."""
    gains = surface.gains_db if gains_db is None else np.asarray(gains_db)
    idx = np.searchsorted(surface.edges[1:-1], np.asarray(freqs), side="right")
    return gains[idx]


def surface_response(surface: SurfaceModel, pulse, rng_seed: int,
                     sample_rate: int = 48000) -> np.ndarray:
    """Pulse as received through ``surface``; same length as ``pulse``.

    Band gains are jittered by ``N(0, jitter_db)`` per realization, applied as
    an FFT-domain multiplication, and followed by one delayed echo.
    """
    x = np.asarray(pulse, dtype=np.float64)
    rng = np.random.default_rng(rng_seed)
    gains = surface.gains_db + rng.normal(0.0, 1.0, surface.gains_db.size) * surface.jitter_db

    if np.any(gains != 0.0):
        spec = np.fft.rfft(x)
        freqs = np.fft.rfftfreq(x.size, 1.0 / sample_rate)
        spec *= 10.0 ** (band_gain_db(surface, freqs, gains) / 20.0)
        y = np.fft.irfft(spec, n=x.size)
    else:
        y = x.copy()

    if surface.echo_gain > -math.inf:
        delay = int(round(surface.echo_delay * sample_rate))
        echo = 10.0 ** (surface.echo_gain / 20.0)
        if delay == 0:
            y = y * (1.0 + echo)
        elif delay < y.size:
            y[delay:] += echo * y[:-delay].copy()
    return y


@dataclass(frozen=True)
class NoiseModel:
    """RMS levels of the three in-vehicle noise components."""

    lowband_level: float = 0.0
    wideband_level: float = 0.0
    music_level: float = 0.0

    def __post_init__(self):
        if min(self.lowband_level, self.wideband_level, self.music_level) < 0:
            raise ValidationError("noise levels must be >= 0")


@dataclass(frozen=True)
class SessionScript:
    """Timeline of contact surfaces.

    ``events`` are ``(time_s, surface_name)`` pairs; the surface before the
    first event is the first event's surface.  ``latency`` delays the whole
    recording relative to the emitted train.
    """

    events: tuple[tuple[float, str], ...]
    duration: float
    noise: NoiseModel = field(default_factory=NoiseModel)
    transient_len: float = 0.3
    latency: float = 0.002

    def __post_init__(self):
        events = tuple((float(t), str(s)) for t, s in self.events)
        if not events:
            raise ValidationError("script has no events")
        times = [t for t, _ in events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("event times must be strictly increasing")
        if times[0] < 0 or times[-1] >= self.duration:
            raise ValidationError("event times must lie in [0, duration)")
        if self.transient_len < 0 or self.latency < 0:
            raise ValidationError("transient_len and latency must be >= 0")
        for _, name in events:
            get_surface(name)
        object.__setattr__(self, "events", events)

    @classmethod
    def from_json(cls, obj: dict) -> "SessionScript":
        try:
            events = []
            for ev in obj["events"]:
                if isinstance(ev, dict):
                    events.append((ev["t"], ev["surface"]))
                else:
                    events.append((ev[0], ev[1]))
            noise = NoiseModel(**obj.get("noise", {}))
            return cls(tuple(events), float(obj["duration"]), noise,
                       float(obj.get("transient_len", 0.3)), float(obj.get("latency", 0.002)))
        except (KeyError, TypeError, IndexError) as exc:
            raise FormatError(f"bad session script: {exc!r}") from None

    @classmethod
    def load(cls, path) -> "SessionScript":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_json(json.load(fh))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: {exc.msg}") from None

    def to_json(self) -> dict:
        return {"duration": self.duration,
                "events": [{"t": t, "surface": s} for t, s in self.events],
                "noise": {"lowband_level": self.noise.lowband_level,
                          "wideband_level": self.noise.wideband_level,
                          "music_level": self.noise.music_level},
                "transient_len": self.transient_len,
                "latency": self.latency}

    def surface_index_at(self, t) -> np.ndarray:
        times = np.array([e[0] for e in self.events])
        return np.maximum(np.searchsorted(times, np.asarray(t), side="right") - 1, 0)


@lru_cache(maxsize=8)
def _lowband_filter(sample_rate: int):
    cutoff = min(4500.0, 0.4 * sample_rate)
    sos = sps.butter(8, cutoff, btype="low", fs=sample_rate, output="sos")
    impulse = np.zeros(8192)
    impulse[0] = 1.0
    power_gain = float(np.sum(sps.sosfilt(sos, impulse) ** 2))
    return sos, power_gain


def add_noise(buffer: AudioBuffer, noise: NoiseModel, rng_seed: int,
              block: int = 1 << 20) -> AudioBuffer:
    """Return ``buffer`` plus lowband, white and tonal noise (independent per channel)."""
    if noise.lowband_level == noise.wideband_level == noise.music_level == 0:
        return AudioBuffer(buffer.samples.copy(), buffer.sample_rate)
    fs = buffer.sample_rate
    rng = np.random.default_rng(rng_seed)
    out = buffer.samples.astype(np.float32, copy=True)
    n = buffer.frames
    sos, power_gain = _lowband_filter(fs)

    for ch in range(buffer.channels):
        ch_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        n_tones = 6
        freqs = np.exp(ch_rng.uniform(np.log(100.0), np.log(min(15000.0, 0.45 * fs)), n_tones))
        phases = ch_rng.uniform(0, 2 * np.pi, n_tones)
        tone_amp = noise.music_level * math.sqrt(2.0 / n_tones)
        zi = sps.sosfilt_zi(sos) * 0.0
        for lo in range(0, n, block):
            hi = min(lo + block, n)
            acc = np.zeros(hi - lo)
            if noise.wideband_level > 0:
                acc += ch_rng.normal(0.0, noise.wideband_level, hi - lo)
            if noise.lowband_level > 0:
                white = ch_rng.normal(0.0, 1.0, hi - lo)
                low, zi = sps.sosfilt(sos, white, zi=zi)
                acc += low * (noise.lowband_level / math.sqrt(power_gain))
            if noise.music_level > 0:
                t = np.arange(lo, hi) / fs
                acc += tone_amp * np.sin(2 * np.pi * np.outer(t, freqs) + phases).sum(axis=1)
            out[ch, lo:hi] += acc.astype(np.float32)
    return AudioBuffer(out, fs)


@dataclass
class SimulatedSession:
    buffer: AudioBuffer
    schedule: PulseSchedule
    truth: list[str]
    latency_samples: int
    responses: np.ndarray | None = None
    seed: int = 0

    def __iter__(self):
        return iter((self.buffer, self.schedule, self.truth))


def simulate_session(script: SessionScript, pulse_cfg: PulseConfig, rng_seed: int,
                     store_responses: bool = False) -> SimulatedSession:
    """Stereo recording of ``script`` plus schedule and per-period truth labels.

    Each pulse passes through the surface active at the pulse midpoint.
    Within ``transient_len`` after an event the surface parameters are
    interpolated from the previous surface to the new one; truth labels in
    that window already follow the destination surface.
    """
    fs = pulse_cfg.sample_rate
    emitted, schedule = pulse_train(pulse_cfg, script.duration)
    pulse = tapered_pulse(pulse_cfg)
    plen = pulse.size
    latency = int(round(script.latency * fs))
    rng = np.random.default_rng(rng_seed)
    seeds = rng.integers(0, 2**63 - 1, size=(len(schedule), 2))
    noise_seed = int(rng.integers(0, 2**63 - 1))

    surfaces = [get_surface(name) for _, name in script.events]
    times = np.array([t for t, _ in script.events])
    out = np.zeros((2, emitted.frames), dtype=np.float32)
    responses = np.zeros((len(schedule), 2, plen)) if store_responses else None
    mic2_cache: dict[str, SurfaceModel] = {}

    for k, start in enumerate(schedule.pulse_starts):
        t_mid = (start + plen / 2) / fs
        idx = int(script.surface_index_at(t_mid))
        surf = surfaces[idx]
        since = t_mid - times[idx]
        if idx > 0 and since < script.transient_len:
            surf = blend_surfaces(surfaces[idx - 1], surf, since / script.transient_len)
            surf2 = mic2_variant(surf)
        else:
            surf2 = mic2_cache.setdefault(surf.name, mic2_variant(surf))
        r1 = surface_response(surf, pulse, int(seeds[k, 0]), fs)
        r2 = surface_response(surf2, pulse, int(seeds[k, 1]), fs)
        if responses is not None:
            responses[k, 0], responses[k, 1] = r1, r2
        lo = start + latency
        hi = min(lo + plen, emitted.frames)
        if hi > lo:
            out[0, lo:hi] = r1[:hi - lo]
            out[1, lo:hi] = r2[:hi - lo]

    recorded = add_noise(AudioBuffer(out, fs), script.noise, noise_seed)
    n_labels = int(math.floor(script.duration / pulse_cfg.period + 1e-9))
    label_times = np.arange(n_labels) * pulse_cfg.period
    truth = [surfaces[i].kind for i in script.surface_index_at(label_times)]
    return SimulatedSession(recorded, schedule, truth, latency, responses, rng_seed)


def alternating_script(duration: float, seed: int, dwell: tuple[float, float] = (3.0, 12.0),
                       noise: NoiseModel = NoiseModel(), transient_len: float = 0.3,
                       latency: float = 0.002) -> SessionScript:
    """Random timeline alternating handheld and handsfree surfaces.

    Dwell times are uniform in ``dwell`` and event times are not aligned to
    the pulse grid.
    """
    rng = np.random.default_rng(seed)
    events = []
    t = 0.0
    holding = bool(rng.integers(2))
    while t < duration:
        pool = HANDHELD_SURFACES if holding else HANDSFREE_SURFACES
        events.append((round(t, 4), pool[int(rng.integers(len(pool)))]))
        t += float(rng.uniform(*dwell))
        holding = not holding
    return SessionScript(tuple(events), duration, noise, transient_len, latency)


def grab_session_script(duration: float, n_grabs: int, seed: int,
                        hold: tuple[float, float] = (5.0, 30.0), min_rest: float = 10.0,
                        noise: NoiseModel = NoiseModel(), transient_len: float = 0.3,
                        latency: float = 0.002) -> SessionScript:
    """Handsfree timeline with ``n_grabs`` handheld intervals at random times."""
    rng = np.random.default_rng(seed)
    holds = rng.uniform(*hold, n_grabs)
    slack = duration - holds.sum() - min_rest * (n_grabs + 1)
    if slack < 0:
        raise ValidationError("session too short for the requested grabs")
    rests = min_rest + np.diff(np.concatenate(([0.0], np.sort(rng.uniform(0, slack, n_grabs)), [slack])))
    events = [(0.0, HANDSFREE_SURFACES[int(rng.integers(len(HANDSFREE_SURFACES)))])]
    t = 0.0
    for k in range(n_grabs):
        t += rests[k]
        events.append((round(t, 4), HANDHELD_SURFACES[int(rng.integers(len(HANDHELD_SURFACES)))]))
        t += holds[k]
        events.append((round(t, 4), HANDSFREE_SURFACES[int(rng.integers(len(HANDSFREE_SURFACES)))]))
    return SessionScript(tuple(events), duration, noise, transient_len, latency)


def band_energies(samples: Sequence[float], sample_rate: int, edges) -> np.ndarray:
    """Energy of ``samples`` in each ``[edges[i], edges[i+1])`` band."""
    spec = np.abs(np.fft.rfft(np.asarray(samples, dtype=np.float64))) ** 2
    freqs = np.fft.rfftfreq(len(samples), 1.0 / sample_rate)
    edges = np.asarray(edges, dtype=float)
    return np.array([spec[(freqs >= lo) & (freqs < hi)].sum() for lo, hi in zip(edges[:-1], edges[1:])])
