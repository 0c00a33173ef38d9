"""Combining the two per-microphone handheld probabilities."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ValidationError

HANDHELD = "handheld"
HANDSFREE = "handsfree"


@dataclass(frozen=True)
class FusedDecision:
    label: str
    score: float
    per_mic_scores: tuple[float, float]


def fuse(p_mic1: float, p_mic2: float, threshold: float = 0.5) -> FusedDecision:
    """Mean of the two handheld probabilities; ties at the threshold count as handheld."""
    for p in (p_mic1, p_mic2):
        if not 0.0 <= p <= 1.0:
            raise ValidationError(f"probability {p} outside [0, 1]")
    score = (p_mic1 + p_mic2) / 2.0
    return FusedDecision(HANDHELD if score >= threshold else HANDSFREE, score, (p_mic1, p_mic2))
