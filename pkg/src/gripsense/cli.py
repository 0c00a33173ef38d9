"""Command-line entry point: ``gripsense <subcommand> [flags]``.

Exit status is 0 on success, 1 for invalid input (bad flags, values or file
contents) and 2 for I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import zipfile
from pathlib import Path

import numpy as np

from . import pipeline as P
from .audio_io import (atomic_write_bytes, read_jsonl, read_truth, read_wav,
                       truth_records, write_json, write_jsonl, write_wav)
from .channel_sim import SessionScript, simulate_session
from .classifier import load_model, save_model
from .errors import FormatError, ValidationError
from .evaluation import classification_report, eer, match_instances, roc
from .features import to_image, write_gsim
from .monitor import PhoneUseInstance, extract_instances
from .signal_gen import PulseSchedule, pulse_train

log = logging.getLogger("gripsense")

FEATURES_FILE = "features.npz"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _configure_logging() -> None:
    level = os.environ.get("GRIPSENSE_LOG", "error").upper()
    if level not in ("ERROR", "WARNING", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _effective_config(args) -> P.PipelineConfig:
    cfg = P.load_config(args.config) if args.config else P.PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    sys.stderr.write("# effective config\n" + cfg.to_ini() + "\n")
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _npz_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    # fixed member timestamps keep the archive byte-identical across runs
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    return buf.getvalue()


def _load_features(path: Path) -> P.PulseFeatures:
    if path.is_dir():
        path = path / FEATURES_FILE
    try:
        with np.load(path, allow_pickle=False) as data:
            return P.PulseFeatures(data["matrices"], data["pulse_index"], data["delays"], data["silent"])
    except (KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise FormatError(f"{path}: not a feature archive ({exc})") from None


def cmd_gen_pulse(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    buffer, schedule = pulse_train(cfg.pulse, args.duration)
    write_wav(buffer, out / "pulse.wav", args.encoding)
    schedule.save(out / "schedule.json")
    return 0


def cmd_simulate(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    script = SessionScript.load(args.scenario)
    session = simulate_session(script, cfg.pulse, cfg.seed)
    write_wav(session.buffer, out / "session.wav", args.encoding)
    write_jsonl(truth_records(session.truth, cfg.monitor.sample_period), out / "truth.jsonl")
    session.schedule.save(out / "schedule.json")
    return 0


def cmd_featurize(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    buffer = read_wav(args.wav)
    schedule = PulseSchedule.load(args.schedule)
    feats = P.pulse_features(buffer, schedule, cfg)
    atomic_write_bytes(out / FEATURES_FILE, _npz_bytes({
        "matrices": feats.matrices, "pulse_index": feats.pulse_index,
        "delays": feats.delays, "silent": feats.silent}))
    if args.dump_features:
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for k, idx in enumerate(feats.pulse_index):
            for mic in range(feats.matrices.shape[1]):
                write_gsim(to_image(feats.matrices[k, mic], cfg.stft.out_size),
                           img_dir / f"pulse_{int(idx):06d}_mic{mic + 1}.gsim")
    log.info("featurized %d pulses", len(feats))
    return 0


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    feats = _load_features(Path(args.features))
    truth = read_truth(args.truth)
    keep = feats.pulse_index < len(truth)
    feats = P.PulseFeatures(feats.matrices[keep], feats.pulse_index[keep], feats.delays[keep], feats.silent[keep])
    labels = P.labels_to_classes([truth[i] for i in feats.pulse_index])
    detector, results = P.train_detector(feats, labels, cfg)
    save_model(detector.mic1, out / "mic1.gsnn")
    save_model(detector.mic2, out / "mic2.gsnn")
    write_json({"seed": cfg.seed, "pulses": len(feats),
                "mic1": results[0].report(), "mic2": results[1].report()}, out / "train_report.json")
    return 0


def cmd_monitor(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    models = Path(args.models)
    detector = P.Detector(load_model(models / "mic1.gsnn"), load_model(models / "mic2.gsnn"), cfg)
    if detector.mic1.arch.input_shape[0] != cfg.stft.out_size:
        raise ValidationError("model input size does not match stft.out_size")
    buffer = read_wav(args.wav)
    schedule = PulseSchedule.load(args.schedule)
    detection = detector.detect(buffer, schedule)
    samples = detection.samples(cfg.monitor)
    chunks, events = P.run_monitor(samples, cfg.monitor, online=args.online)
    write_jsonl([e.to_json() for e in events], out / "events.jsonl")
    write_jsonl([i.to_json() for i in extract_instances(chunks, cfg.monitor)], out / "instances.jsonl")

    truth = read_truth(args.truth) if args.truth else None
    rows = ["index,score,truth" if truth else "index,score"]
    for s in samples:
        if truth is not None:
            if s.index < len(truth):
                rows.append(f"{s.index},{s.score!r},{truth[s.index]}")
        else:
            rows.append(f"{s.index},{s.score!r}")
    atomic_write_bytes(out / "scores.csv", ("\n".join(rows) + "\n").encode())
    return 0


def _read_pred(path, end: float) -> list[PhoneUseInstance]:
    records = read_jsonl(path)
    try:
        if records and "event" in records[0]:
            return P.events_to_instances(records, end)
        return [PhoneUseInstance.from_json(r) for r in records]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad prediction record ({exc!r})") from None


def _read_scores(path) -> list[tuple[float, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"score", "truth"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected columns index,score,truth")
        try:
            return [(float(r["score"]), r["truth"]) for r in reader]
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None


def cmd_eval(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    truth = read_truth(args.truth)
    duration = len(truth) * cfg.monitor.sample_period
    pred = _read_pred(args.pred, duration)
    timing = match_instances(pred, P.truth_instances(truth, cfg.monitor), duration=duration)
    report = {"timing": timing.to_json(), "classification": None, "eer": None}
    rows = ["threshold,tpr,fpr"]
    if args.scores:
        pairs = _read_scores(args.scores)
        report["classification"] = classification_report(pairs).to_json()
        try:
            curve = roc(pairs)
            report["eer"] = eer(curve)
            rows = curve.csv_rows()
        except ValidationError as exc:
            log.warning("no ROC: %s", exc)
    write_json(report, out / "report.json")
    atomic_write_bytes(out / "roc.csv", ("\n".join(rows) + "\n").encode())
    return 0


def cmd_demo(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(args)
    report = P.run_demo(cfg, out)
    summary = {"seed": report["seed"], "classification": report["classification"], "eer": report["eer"],
               "detection_rate": report["timing"]["detection_rate"],
               "spurious_pred": report["timing"]["spurious_pred"],
               "median_start": report["timing"]["median_start"],
               "median_end": report["timing"]["median_end"]}
    sys.stdout.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gripsense", description="Handheld phone-use detection from ultrasonic pulses.")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with [pulse] [stft] [monitor] [train] [bandpass] [demo] sections")
    common.add_argument("--seed", type=int, help="overrides [pipeline] seed")
    common.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-pulse", parents=[common], help="write a pulse train WAV and its schedule")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--encoding", choices=("pcm16", "float32"), default="pcm16")
    p.set_defaults(func=cmd_gen_pulse)

    p = sub.add_parser("simulate", parents=[common], help="render a session script to stereo WAV + truth")
    p.add_argument("--scenario", required=True)
    p.add_argument("--encoding", choices=("pcm16", "float32"), default="float32")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", parents=[common], help="per-pulse spectrogram features")
    p.add_argument("--wav", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--dump-features", action="store_true", help="also write every image as a GSIM file")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="train the two per-microphone models")
    p.add_argument("--features", required=True, help="directory written by featurize")
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("monitor", parents=[common], help="detect handheld instances in a recording")
    p.add_argument("--wav", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--models", required=True, help="directory holding mic1.gsnn and mic2.gsnn")
    p.add_argument("--truth", help="optional truth JSONL; adds a truth column to scores.csv")
    p.add_argument("--online", action="store_true", help="streaming emulation instead of batch")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="instances or events JSONL")
    p.add_argument("--truth", required=True)
    p.add_argument("--scores", help="per-sample CSV with columns index,score,truth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", parents=[common], help="simulate, train, monitor and evaluate in one go")
    p.set_defaults(func=cmd_demo)
    return parser


def run_subcommand(argv) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(list(argv))
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"gripsense: I/O error: {exc}\n")
        return 2
    except (ValueError, KeyError) as exc:
        sys.stderr.write(f"gripsense: invalid input: {exc}\n")
        return 1


def main(argv=None) -> int:
    return run_subcommand(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
