"""Mini-batch Adam training with a seeded, reproducible schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .model import Architecture, CnnModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 2
    dropout_rate: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.adam_eps <= 0:
            raise ValidationError("learning_rate and adam_eps must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size >= 1 and epochs >= 0 required")
        if not 0 <= self.dropout_rate < 1:
            raise ValidationError("dropout_rate must lie in [0, 1)")


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name].astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


@dataclass
class TrainResult:
    model: CnnModel
    loss_trace: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    final_accuracy: float | None = None

    @property
    def final_loss(self) -> float | None:
        return self.epoch_losses[-1] if self.epoch_losses else None

    def report(self) -> dict:
        return {"loss_trace": self.loss_trace, "epoch_losses": self.epoch_losses,
                "final_loss": self.final_loss, "final_accuracy": self.final_accuracy,
                "param_count": self.model.param_count}


def _split_dataset(dataset, labels):
    if labels is None:
        pairs = list(dataset)
        if not pairs:
            raise ValidationError("empty dataset")
        images = np.stack([np.asarray(img) for img, _ in pairs])
        labels = np.array([int(lab) for _, lab in pairs])
        return images, labels
    return dataset, np.asarray(labels, dtype=np.int64)


def train(dataset, cfg: TrainConfig = TrainConfig(), labels=None, arch: Architecture | None = None,
          dtype=np.float32, evaluate: bool = True) -> TrainResult:
    """Train a fresh model.

    ``dataset`` is either a sequence of ``(image, label)`` pairs or, when
    ``labels`` is given, any collection indexable by integer arrays
    (``numpy`` array or :class:`~gripsense.features.ImageSet`).
    """
    images, labels = _split_dataset(dataset, labels)
    n = len(images)
    if n == 0 or labels.size != n:
        raise ValidationError("need one label per image and at least one image")
    if np.unique(labels).size < 2:
        raise ValidationError("training data must contain both classes")

    rng = np.random.default_rng(cfg.rng_seed)
    model = CnnModel.initialized(arch, seed=int(rng.integers(2**63 - 1)),
                                 dropout_rate=cfg.dropout_rate, dtype=dtype)
    opt = Adam(model.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    result = TrainResult(model)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = np.sort(order[lo:lo + cfg.batch_size])
            batch_loss, grads, _ = model.loss_and_grads(images[idx], labels[idx], rng)
            opt.step(model.params, grads)
            result.loss_trace.append(batch_loss)
            total += batch_loss * idx.size
        result.epoch_losses.append(total / n)
        log.info("epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, total / n)

    if evaluate:
        probs = model.predict_proba(images)
        result.final_accuracy = float(np.mean(np.argmax(probs, axis=1) == labels))
    return result
