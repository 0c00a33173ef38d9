"""Adaptive-window error correction of the 10 Hz phone-use label stream.

Labels are grouped into maximal runs ("chunks").  A chunk of length
``W >= th2`` samples is valid.  Shorter chunks are corrected:

* ``W < th1``: every label in the chunk is flipped.
* ``th1 <= W < th2``: look at the nearest valid chunk on each side.  If
  they agree (a missing side counts as agreeing), everything between them
  takes their label.  If they disagree, the chunk keeps its label and
  everything between it and the valid chunk carrying that label is
  absorbed into it.

Chunks are visited left to right; a chunk already absorbed by an earlier
one is skipped.  After a pass adjacent equal chunks merge and the pass is
repeated until only valid chunks remain.  Because valid chunks never change
label, the stretch between two valid chunks is settled as soon as the second
one is seen, which is what :class:`StreamingMonitor` exploits.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .errors import ValidationError

HANDHELD = "handheld"
HANDSFREE = "handsfree"


def flip(label: str) -> str:
    if label == HANDHELD:
        return HANDSFREE
    if label == HANDSFREE:
        return HANDHELD
    raise ValidationError(f"unknown label {label!r}")


@dataclass(frozen=True)
class MonitorConfig:
    th1: int = 5
    th2: int = 8
    sample_period: float = 0.1

    def __post_init__(self):
        if not 0 < self.th1 < self.th2:
            raise ValidationError("need 0 < th1 < th2")
        if self.sample_period <= 0:
            raise ValidationError("sample_period must be positive")


@dataclass(frozen=True)
class StatusSample:
    index: int
    label: str
    score: float = math.nan
    sample_period: float = 0.1

    @property
    def t(self) -> float:
        return round(self.index * self.sample_period, 9)


@dataclass(frozen=True)
class Chunk:
    label: str
    start_index: int
    length: int
    provisional: bool = field(default=False, compare=False)
    # set on the fallback chunk produced when no run ever reached th2
    majority: bool = field(default=False, compare=False)

    @property
    def end_index(self) -> int:
        return self.start_index + self.length


@dataclass(frozen=True)
class PhoneUseInstance:
    kind: str
    start: float
    end: float
    ongoing: bool = False

    @property
    def duration(self) -> float:
        return round(self.end - self.start, 9)

    def to_json(self) -> dict:
        return {"start": self.start, "end": self.end, "duration": self.duration,
                "kind": self.kind, "ongoing": self.ongoing}

    @classmethod
    def from_json(cls, obj: dict) -> "PhoneUseInstance":
        return cls(obj.get("kind", HANDHELD), float(obj["start"]), float(obj["end"]),
                   bool(obj.get("ongoing", False)))


@dataclass(frozen=True)
class MonitorEvent:
    kind: str
    t: float
    index: int

    def to_json(self) -> dict:
        return {"event": self.kind, "t": self.t}


def _label_of(item):
    return getattr(item, "label", item)


def chunk_sequence(labels) -> list[Chunk]:
    """Maximal runs of equal labels, in order."""
    chunks: list[Chunk] = []
    for i, item in enumerate(labels):
        lab = _label_of(item)
        if chunks and chunks[-1].label == lab:
            last = chunks[-1]
            chunks[-1] = Chunk(lab, last.start_index, last.length + 1)
        else:
            chunks.append(Chunk(lab, i, 1))
    return chunks


def _merge(chunks: list[Chunk], labels: list[str]) -> list[Chunk]:
    out: list[Chunk] = []
    for c, lab in zip(chunks, labels):
        if out and out[-1].label == lab:
            out[-1] = Chunk(lab, out[-1].start_index, out[-1].length + c.length)
        else:
            out.append(Chunk(lab, c.start_index, c.length))
    return out


def _correction_pass(chunks: list[Chunk], th1: int, th2: int) -> list[Chunk]:
    m = len(chunks)
    valid = [c.length >= th2 for c in chunks]
    left = [None] * m
    last = None
    for i in range(m):
        left[i] = last
        if valid[i]:
            last = i
    right = [None] * m
    last = None
    for i in reversed(range(m)):
        right[i] = last
        if valid[i]:
            last = i

    labels = [c.label for c in chunks]
    absorbed = [False] * m
    for i, c in enumerate(chunks):
        if valid[i] or absorbed[i]:
            continue
        if c.length < th1:
            labels[i] = flip(c.label)
            continue
        li, ri = left[i], right[i]
        v_pre = chunks[li].label if li is not None else None
        v_next = chunks[ri].label if ri is not None else None
        v_pre = v_next if v_pre is None else v_pre
        v_next = v_pre if v_next is None else v_next
        lo = 0 if li is None else li + 1
        hi = m - 1 if ri is None else ri - 1
        if v_pre == v_next:
            span, lab = range(lo, hi + 1), v_pre
        elif c.label == v_pre:
            span, lab = range(lo, i + 1), c.label
        else:
            span, lab = range(i, hi + 1), c.label
        for j in span:
            labels[j] = lab
            absorbed[j] = True
    return _merge(chunks, labels)


def _settle(chunks: list[Chunk], th1: int, th2: int) -> list[Chunk]:
    current = _merge(chunks, [c.label for c in chunks])
    while any(c.length < th2 for c in current):
        current = _correction_pass(current, th1, th2)
    return current


def _majority_chunk(chunks: list[Chunk]) -> Chunk:
    counts = Counter()
    for c in chunks:
        counts[c.label] += c.length
    best = max(counts.values())
    # ties go to the label seen first
    label = next(c.label for c in chunks if counts[c.label] == best)
    total = sum(c.length for c in chunks)
    return Chunk(label, chunks[0].start_index, total, provisional=True, majority=True)


def flip_and_merge(chunks: list[Chunk], cfg: MonitorConfig = MonitorConfig()) -> list[Chunk]:
    """Corrected chunk list; every chunk is valid and the last one is provisional.

    Without any valid chunk the whole sequence becomes one provisional chunk
    carrying the majority label.
    """
    chunks = list(chunks)
    if not chunks:
        return []
    if not any(c.length >= cfg.th2 for c in chunks):
        return [_majority_chunk(chunks)]
    out = _settle(chunks, cfg.th1, cfg.th2)
    out[-1] = Chunk(out[-1].label, out[-1].start_index, out[-1].length, provisional=True)
    return out


def extract_instances(corrected: list[Chunk], cfg: MonitorConfig = MonitorConfig()) -> list[PhoneUseInstance]:
    """One instance per chunk, times in seconds; provisional chunks are ongoing."""
    p = cfg.sample_period
    return [PhoneUseInstance(c.label, round(c.start_index * p, 9), round(c.end_index * p, 9), c.provisional)
            for c in corrected]


def handheld_instances(labels, cfg: MonitorConfig = MonitorConfig()) -> list[PhoneUseInstance]:
    """Chunk, correct and keep the handheld instances of a label sequence."""
    corrected = flip_and_merge(chunk_sequence(labels), cfg)
    return [inst for inst in extract_instances(corrected, cfg) if inst.kind == HANDHELD]


def _transition_event(chunk: Chunk, prev: Chunk | None, period: float) -> MonitorEvent | None:
    t = round(chunk.start_index * period, 9)
    if chunk.label == HANDHELD:
        return MonitorEvent("handheld_start", t, chunk.start_index)
    if prev is not None and prev.label == HANDHELD:
        return MonitorEvent("handheld_end", t, chunk.start_index)
    return None


def events_from_chunks(corrected: list[Chunk], cfg: MonitorConfig = MonitorConfig()) -> list[MonitorEvent]:
    """Start/end events implied by a corrected chunk list.

    The majority fallback chunk was never confirmed and produces no event.
    """
    if len(corrected) == 1 and corrected[0].majority:
        return []
    events = []
    for k, chunk in enumerate(corrected):
        ev = _transition_event(chunk, corrected[k - 1] if k else None, cfg.sample_period)
        if ev is not None:
            events.append(ev)
    return events


def expand(chunks: list[Chunk]) -> list[str]:
    out: list[str] = []
    for c in chunks:
        out.extend([c.label] * c.length)
    return out


class StreamingMonitor:
    """Online flip-and-merge over samples pushed one at a time.

    Only the stretch after the last valid chunk is kept undecided; it is
    settled as soon as a new run reaches ``th2`` samples.  Everything in
    :attr:`chunks` is final and agrees with :func:`flip_and_merge` on the
    full stream.
    """

    def __init__(self, cfg: MonitorConfig = MonitorConfig()):
        self.cfg = cfg
        self._committed: list[Chunk] = []
        self._pending: list[Chunk] = []
        self._run: Chunk | None = None
        self._next = 0
        self.events: list[MonitorEvent] = []

    @property
    def chunks(self) -> list[Chunk]:
        return list(self._committed)

    @property
    def settled_length(self) -> int:
        return sum(c.length for c in self._committed)

    def settled_labels(self) -> list[str]:
        return expand(self._committed)

    def push(self, sample) -> list[MonitorEvent]:
        if isinstance(sample, str):
            index, label = self._next, sample
        else:
            index, label = sample.index, sample.label
        if index != self._next:
            raise ValidationError(f"expected sample index {self._next}, got {index}")
        flip(label)  # rejects unknown labels
        self._next += 1

        anchor = self._committed[-1] if self._committed else None
        if self._run is None and anchor is not None and label == anchor.label:
            self._committed[-1] = Chunk(label, anchor.start_index, anchor.length + 1)
            return []
        if self._run is not None and label == self._run.label:
            self._run = Chunk(label, self._run.start_index, self._run.length + 1)
        else:
            if self._run is not None:
                self._pending.append(self._run)
            self._run = Chunk(label, index, 1)
        if self._run.length >= self.cfg.th2:
            return self._confirm()
        return []

    def _resolve(self, tail: list[Chunk]) -> list[MonitorEvent]:
        """Settle ``tail`` against the last committed chunk and commit the result."""
        anchor = self._committed.pop() if self._committed else None
        resolved = _settle(([anchor] if anchor else []) + tail, self.cfg.th1, self.cfg.th2)
        self._pending, self._run = [], None
        events = []
        for k, chunk in enumerate(resolved):
            prev = self._committed[-1] if self._committed else None
            # the anchor's own event was emitted when it was first confirmed
            if not (k == 0 and anchor is not None):
                ev = _transition_event(chunk, prev, self.cfg.sample_period)
                if ev is not None:
                    events.append(ev)
            self._committed.append(chunk)
        self.events.extend(events)
        return events

    def _confirm(self) -> list[MonitorEvent]:
        return self._resolve(self._pending + [self._run])

    def flush(self) -> list[Chunk]:
        """Settle the trailing stretch as end-of-stream and return all chunks.

        The final chunk is marked provisional.  Events for chunks created
        here are appended to :attr:`events`.
        """
        tail = self._pending + ([self._run] if self._run else [])
        if tail and not self._committed:
            self._committed = [_majority_chunk(tail)]
            self._pending, self._run = [], None
        elif tail:
            self._resolve(tail)
        if self._committed:
            last = self._committed[-1]
            self._committed[-1] = Chunk(last.label, last.start_index, last.length,
                                        provisional=True, majority=last.majority)
        return self.chunks


def push_sample(state: StreamingMonitor, sample) -> list[MonitorEvent]:
    return state.push(sample)
