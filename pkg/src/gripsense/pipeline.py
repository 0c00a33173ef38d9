"""End-to-end glue: configuration, pulse featurization, dual-mic detection, demo run."""

from __future__ import annotations

import configparser
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import AudioBuffer, atomic_write_bytes, write_json, write_jsonl
from .channel_sim import (NoiseModel, SimulatedSession, alternating_script, grab_session_script,
                          simulate_session)
from .classifier import (HANDHELD_CLASS, Architecture, CnnModel, TrainConfig, TrainResult,
                         save_model, train)
from .errors import ValidationError
from .evaluation import classification_report, eer, match_instances, roc
from .features import ImageSet, StftConfig, crop_band, dtstft
from .monitor import (HANDHELD, HANDSFREE, Chunk, MonitorConfig, MonitorEvent, PhoneUseInstance,
                      StatusSample, StreamingMonitor, chunk_sequence, events_from_chunks,
                      extract_instances, flip_and_merge)
from .preprocess import BandpassSpec, bandpass_samples, filter_margin, synchronize
from .signal_gen import PulseConfig, PulseSchedule, tapered_pulse

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DemoConfig:
    """Session sizes and noise used by the one-shot demo."""

    train_duration: float = 40.0
    test_duration: float = 90.0
    n_grabs: int = 2
    hold_min: float = 5.0
    hold_max: float = 20.0
    min_rest: float = 10.0
    lowband_level: float = 0.1
    wideband_level: float = 0.01
    music_level: float = 0.0

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.lowband_level, self.wideband_level, self.music_level)


@dataclass(frozen=True)
class PipelineConfig:
    pulse: PulseConfig = field(default_factory=PulseConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bandpass: BandpassSpec = field(default_factory=BandpassSpec)
    demo: DemoConfig = field(default_factory=DemoConfig)
    seed: int = 0

    def __post_init__(self):
        if self.pulse.sample_rate != self.stft.sample_rate:
            raise ValidationError("pulse and stft sample rates differ")
        if abs(self.monitor.sample_period - self.pulse.period) > 1e-9:
            raise ValidationError("monitor sample_period must equal the pulse period")
        self.bandpass.check_rate(self.pulse.sample_rate)

    @property
    def architecture(self) -> Architecture:
        s = self.stft.out_size
        return Architecture(input_shape=(s, s, 3))

    def sections(self) -> dict[str, dict]:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in _SECTIONS}
        out["pipeline"] = {"seed": self.seed}
        return out

    def to_ini(self) -> str:
        lines = []
        for name, values in self.sections().items():
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in values.items()]
            lines.append("")
        return "\n".join(lines)

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(self, seed=int(seed))


_SECTIONS = {"pulse": PulseConfig, "stft": StftConfig, "monitor": MonitorConfig,
             "train": TrainConfig, "bandpass": BandpassSpec, "demo": DemoConfig}


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_config(path=None, text: str | None = None) -> PipelineConfig:
    """Read an INI file whose sections mirror :class:`PipelineConfig`; missing keys keep defaults."""
    parser = configparser.ConfigParser()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    if text is not None:
        parser.read_string(text)
    base = PipelineConfig()
    parts = {}
    for section in parser.sections():
        if section == "pipeline":
            continue
        if section not in _SECTIONS:
            raise ValidationError(f"unknown config section [{section}]")
        current = dataclasses.asdict(getattr(base, section))
        values = {}
        for key, raw in parser.items(section):
            if key not in current:
                raise ValidationError(f"unknown key {key!r} in [{section}]")
            try:
                values[key] = _coerce(raw, current[key])
            except ValueError:
                raise ValidationError(f"[{section}] {key}: cannot parse {raw!r}") from None
        parts[section] = _SECTIONS[section](**{**current, **values})
    seed = base.seed
    if parser.has_section("pipeline"):
        for key, raw in parser.items("pipeline"):
            if key != "seed":
                raise ValidationError(f"unknown key {key!r} in [pipeline]")
            try:
                seed = int(raw)
            except ValueError:
                raise ValidationError(f"[pipeline] seed: cannot parse {raw!r}") from None
    return PipelineConfig(**parts, seed=seed)


@dataclass
class PulseFeatures:
    """Per-pulse log-magnitude matrices ``(N, channels, frames, bins)``."""

    matrices: np.ndarray
    pulse_index: np.ndarray
    delays: np.ndarray
    silent: np.ndarray

    def __len__(self):
        return self.matrices.shape[0]


def pulse_features(buffer: AudioBuffer, schedule: PulseSchedule, cfg: PipelineConfig = PipelineConfig(),
                   delays=None, block: int = 512) -> PulseFeatures:
    """Synchronize, band-pass, segment, normalize and transform every pulse.

    Filtering is done on each pulse plus enough context for the FIR filter,
    which gives the same samples as filtering the whole recording.
    """
    fs = buffer.sample_rate
    if fs != cfg.pulse.sample_rate:
        raise ValidationError(f"recording is {fs} Hz, config expects {cfg.pulse.sample_rate} Hz")
    if delays is None:
        delays = synchronize(buffer.samples[0], schedule, tapered_pulse(cfg.pulse))
    delays = np.broadcast_to(np.asarray(delays, dtype=np.int64), (len(schedule),))
    plen = schedule.pulse_len_samples
    margin = filter_margin(cfg.bandpass, fs)
    starts = np.asarray(schedule.pulse_starts, dtype=np.int64) + delays
    keep = np.flatnonzero((starts >= 0) & (starts + plen <= buffer.frames))

    mats, silent = [], []
    offsets = np.arange(plen + 2 * margin) - margin
    for lo in range(0, keep.size, block):
        idx = keep[lo:lo + block]
        pos = starts[idx][:, None] + offsets
        inside = (pos >= 0) & (pos < buffer.frames)
        # context beyond the recording counts as silence
        windows = buffer.samples[:, np.clip(pos, 0, buffer.frames - 1)].transpose(1, 0, 2) * inside[:, None, :]
        windows = windows.astype(np.float64)
        seg = bandpass_samples(windows, cfg.bandpass, fs)[..., margin:margin + plen]
        peak = np.max(np.abs(seg), axis=-1, keepdims=True)
        silent.append(peak[..., 0] == 0)
        seg = seg / np.where(peak == 0, 1.0, peak)
        mats.append(crop_band(dtstft(seg, cfg.stft), cfg.stft).astype(np.float32))
    rows = (0, buffer.channels, 0, 0)
    matrices = np.concatenate(mats) if mats else np.zeros(rows, dtype=np.float32)
    silent = np.concatenate(silent) if silent else np.zeros((0, buffer.channels), dtype=bool)
    return PulseFeatures(matrices, keep, delays[keep], silent)


def labels_to_classes(labels) -> np.ndarray:
    return np.array([HANDHELD_CLASS if lab == HANDHELD else 1 - HANDHELD_CLASS for lab in labels])


def labelled_features(session: SimulatedSession, cfg: PipelineConfig = PipelineConfig()):
    """Features of a simulated session and the class index of every kept pulse."""
    feats = pulse_features(session.buffer, session.schedule, cfg)
    ok = feats.pulse_index < len(session.truth)
    feats = PulseFeatures(feats.matrices[ok], feats.pulse_index[ok], feats.delays[ok], feats.silent[ok])
    labels = labels_to_classes([session.truth[i] for i in feats.pulse_index])
    return feats, labels


@dataclass
class Detection:
    pulse_index: np.ndarray
    p_mic1: np.ndarray
    p_mic2: np.ndarray

    @property
    def fused(self) -> np.ndarray:
        return (self.p_mic1 + self.p_mic2) / 2.0

    def labels(self, threshold: float = 0.5) -> list[str]:
        return [HANDHELD if s >= threshold else HANDSFREE for s in self.fused]

    def samples(self, cfg: MonitorConfig = MonitorConfig(), threshold: float = 0.5) -> list[StatusSample]:
        """Status samples for the contiguous run of pulses starting at index 0."""
        out = []
        for k, (idx, score, lab) in enumerate(zip(self.pulse_index, self.fused, self.labels(threshold))):
            if idx != k:
                break
            out.append(StatusSample(int(idx), lab, float(score), cfg.sample_period))
        return out


@dataclass
class Detector:
    """Two per-microphone models whose handheld probabilities are averaged."""

    mic1: CnnModel
    mic2: CnnModel
    cfg: PipelineConfig = field(default_factory=PipelineConfig)
    batch_size: int = 32

    def score(self, feats: PulseFeatures) -> Detection:
        out = self.cfg.stft.out_size
        p = []
        for mic, model in enumerate((self.mic1, self.mic2)):
            images = ImageSet(feats.matrices[:, mic], out)
            p.append(model.predict_proba(images, self.batch_size)[:, HANDHELD_CLASS])
        return Detection(feats.pulse_index, p[0], p[1])

    def detect(self, buffer: AudioBuffer, schedule: PulseSchedule) -> Detection:
        return self.score(pulse_features(buffer, schedule, self.cfg))


def train_detector(feats: PulseFeatures, labels, cfg: PipelineConfig = PipelineConfig(),
                   dtype=np.float32) -> tuple[Detector, list[TrainResult]]:
    """Train one model per microphone on the same pulses."""
    results = []
    for mic in range(2):
        tcfg = dataclasses.replace(cfg.train, rng_seed=cfg.train.rng_seed + mic)
        images = ImageSet(feats.matrices[:, mic], cfg.stft.out_size)
        log.info("training mic%d on %d pulses", mic + 1, len(images))
        results.append(train(images, tcfg, labels=labels, arch=cfg.architecture, dtype=dtype))
    return Detector(results[0].model, results[1].model, cfg), results


def run_monitor(samples: list[StatusSample], cfg: MonitorConfig = MonitorConfig(),
                online: bool = False) -> tuple[list[Chunk], list[MonitorEvent]]:
    """Corrected chunks and start/end events, offline or by streaming replay."""
    if not online:
        chunks = flip_and_merge(chunk_sequence(samples), cfg) if samples else []
        return chunks, events_from_chunks(chunks, cfg)
    state = StreamingMonitor(cfg)
    for s in samples:
        state.push(s)
    chunks = state.flush()
    return chunks, list(state.events)


def truth_instances(labels, cfg: MonitorConfig = MonitorConfig()) -> list[PhoneUseInstance]:
    """Uncorrected runs of a ground-truth label track as closed instances."""
    if not labels:
        return []
    return extract_instances(chunk_sequence(labels), cfg)


def events_to_instances(events: list[dict], end: float) -> list[PhoneUseInstance]:
    """Handheld instances from start/end event records; an open start ends at ``end``."""
    out, start = [], None
    for ev in sorted(events, key=lambda e: float(e["t"])):
        kind, t = ev["event"], float(ev["t"])
        if kind == "handheld_start" and start is None:
            start = t
        elif kind == "handheld_end" and start is not None:
            out.append(PhoneUseInstance(HANDHELD, start, t))
            start = None
    if start is not None:
        out.append(PhoneUseInstance(HANDHELD, start, max(start, end), ongoing=True))
    return out


def evaluation_report(detection: Detection, truth: list[str], instances: list[PhoneUseInstance],
                      cfg: PipelineConfig = PipelineConfig()) -> tuple[dict, list[str]]:
    """Report dictionary plus ROC CSV rows for one scored session."""
    period = cfg.monitor.sample_period
    pairs = [(float(s), truth[i]) for i, s in zip(detection.pulse_index, detection.fused) if i < len(truth)]
    report: dict = {"classification": classification_report(pairs).to_json()}
    roc_rows: list[str] = []
    try:
        curve = roc(pairs)
        report["eer"] = eer(curve)
        roc_rows = curve.csv_rows()
    except ValidationError:
        report["eer"] = None
    timing = match_instances(instances, truth_instances(truth, cfg.monitor),
                             duration=len(truth) * period)
    report["timing"] = timing.to_json()
    return report, roc_rows


def simulate_demo_sessions(cfg: PipelineConfig) -> tuple[SimulatedSession, SimulatedSession]:
    d = cfg.demo
    seeds = np.random.SeedSequence(cfg.seed).generate_state(4)
    train_script = alternating_script(d.train_duration, int(seeds[0]), noise=d.noise)
    test_script = grab_session_script(d.test_duration, d.n_grabs, int(seeds[1]), hold=(d.hold_min, d.hold_max),
                                      min_rest=d.min_rest, noise=d.noise)
    return (simulate_session(train_script, cfg.pulse, int(seeds[2])),
            simulate_session(test_script, cfg.pulse, int(seeds[3])))


def run_demo(cfg: PipelineConfig, out_dir) -> dict:
    """Simulate, train, monitor and evaluate; write all artifacts to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_sess, test_sess = simulate_demo_sessions(cfg)
    feats, labels = labelled_features(train_sess, cfg)
    tcfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, rng_seed=cfg.seed))
    detector, results = train_detector(feats, labels, tcfg)
    save_model(detector.mic1, out / "mic1.gsnn")
    save_model(detector.mic2, out / "mic2.gsnn")

    detection = detector.detect(test_sess.buffer, test_sess.schedule)
    chunks, events = run_monitor(detection.samples(cfg.monitor), cfg.monitor)
    instances = extract_instances(chunks, cfg.monitor)
    write_jsonl([e.to_json() for e in events], out / "events.jsonl")
    write_jsonl([i.to_json() for i in instances], out / "instances.jsonl")

    report, roc_rows = evaluation_report(detection, test_sess.truth,
                                         [i for i in instances if i.kind == HANDHELD], cfg)
    report["seed"] = cfg.seed
    report["training"] = [{"mic": m + 1, "final_loss": r.final_loss, "final_accuracy": r.final_accuracy}
                          for m, r in enumerate(results)]
    report["truth_instances"] = [i.to_json() for i in truth_instances(test_sess.truth, cfg.monitor)
                                 if i.kind == HANDHELD]
    report["pred_instances"] = [i.to_json() for i in instances if i.kind == HANDHELD]
    write_json(report, out / "report.json")
    atomic_write_bytes(out / "roc.csv", ("\n".join(roc_rows) + "\n").encode())
    return report
