"""Small CNN binary classifier: conv/ReLU/pool blocks, dropout, dense stack, softmax."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from . import layers as L

HANDSFREE_CLASS = 0
HANDHELD_CLASS = 1
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Architecture:
    """Layer sizes.  Defaults give the 150x150x3 network with 1,211,126 parameters."""

    input_shape: tuple[int, int, int] = (150, 150, 3)
    conv_filters: tuple[int, ...] = (32, 32, 32)
    kernel_size: int = 3
    pool_size: int = 2
    dense_units: tuple[int, ...] = (128, 60)
    n_classes: int = 2
    dense_activation: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_filters", tuple(int(v) for v in self.conv_filters))
        object.__setattr__(self, "dense_units", tuple(int(v) for v in self.dense_units))
        if self.dense_activation not in ("linear", "relu"):
            raise ValidationError(f"unknown dense activation {self.dense_activation!r}")
        if len(self.input_shape) != 3:
            raise ValidationError("input_shape must be (height, width, channels)")
        self.layer_table()

    def layer_table(self) -> list[tuple[str, tuple[int, ...], int]]:
        """``(layer, output shape, trainable parameter count)`` for every layer."""
        h, w, c = self.input_shape
        rows = []
        for i, t in enumerate(self.conv_filters):
            ho, wo = h - self.kernel_size + 1, w - self.kernel_size + 1
            if ho < 1 or wo < 1:
                raise ValidationError(f"conv{i} has no valid output for input {h}x{w}")
            rows.append((f"conv{i}", (ho, wo, t), self.kernel_size ** 2 * c * t + t))
            h, w, c = ho // self.pool_size, wo // self.pool_size, t
            if h < 1 or w < 1:
                raise ValidationError(f"pool{i} has no valid output")
            rows.append((f"pool{i}", (h, w, c), 0))
        flat = h * w * c
        rows.append(("flatten", (flat,), 0))
        rows.append(("dropout", (flat,), 0))
        fan_in = flat
        for i, u in enumerate(self.dense_units + (self.n_classes,)):
            rows.append((f"dense{i}", (u,), fan_in * u + u))
            fan_in = u
        return rows

    @property
    def param_count(self) -> int:
        return sum(r[2] for r in self.layer_table())

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        c = self.input_shape[2]
        for i, t in enumerate(self.conv_filters):
            shapes.append((f"conv{i}.kernel", (self.kernel_size, self.kernel_size, c, t)))
            shapes.append((f"conv{i}.bias", (t,)))
            c = t
        fan_in = self.layer_table()[2 * len(self.conv_filters)][1][0]
        for i, u in enumerate(self.dense_units + (self.n_classes,)):
            shapes.append((f"dense{i}.kernel", (fan_in, u)))
            shapes.append((f"dense{i}.bias", (u,)))
            fan_in = u
        return shapes

    def to_json(self) -> dict:
        return {"input_shape": list(self.input_shape), "conv_filters": list(self.conv_filters),
                "kernel_size": self.kernel_size, "pool_size": self.pool_size,
                "dense_units": list(self.dense_units), "n_classes": self.n_classes,
                "dense_activation": self.dense_activation}

    @classmethod
    def from_json(cls, obj: dict) -> "Architecture":
        return cls(tuple(obj["input_shape"]), tuple(obj["conv_filters"]), int(obj["kernel_size"]),
                   int(obj["pool_size"]), tuple(obj["dense_units"]), int(obj["n_classes"]),
                   obj.get("dense_activation", "linear"))


@dataclass
class CnnModel:
    """Weights plus architecture.  ``params`` maps names to arrays in layer order."""

    arch: Architecture = field(default_factory=Architecture)
    dropout_rate: float = 0.5
    dtype: type = np.float32
    params: dict[str, np.ndarray] = field(default_factory=dict)
    version: str = "1"

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValidationError("dropout_rate must lie in [0, 1)")
        if not self.params:
            self.params = {name: np.zeros(shape, dtype=self.dtype) for name, shape in self.arch.param_shapes()}
        else:
            expected = dict(self.arch.param_shapes())
            if list(self.params) != list(expected):
                raise ValidationError("parameter names do not match the architecture")
            for name, arr in self.params.items():
                if tuple(arr.shape) != expected[name]:
                    raise ValidationError(f"{name}: shape {arr.shape} != {expected[name]}")
            self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in self.params.items()}

    @classmethod
    def initialized(cls, arch: Architecture | None = None, seed: int = 0, **kwargs) -> "CnnModel":
        """He-uniform kernels, zero biases."""
        model = cls(arch or Architecture(), **kwargs)
        rng = np.random.default_rng(seed)
        for name, arr in model.params.items():
            if name.endswith(".kernel"):
                fan_in = int(np.prod(arr.shape[:-1]))
                limit = np.sqrt(6.0 / fan_in)
                arr[...] = rng.uniform(-limit, limit, arr.shape)
        return model

    @property
    def param_count(self) -> int:
        return sum(a.size for a in self.params.values())

    def astype(self, dtype) -> "CnnModel":
        return CnnModel(self.arch, self.dropout_rate, dtype,
                        {k: v.astype(dtype) for k, v in self.params.items()}, self.version)

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.arch.input_shape:
            raise ValidationError(f"expected input {self.arch.input_shape}, got {x.shape[1:] if x.ndim == 4 else x.shape}")
        return x, single

    def forward(self, x, mode: str = "infer", rng: np.random.Generator | None = None) -> np.ndarray:
        """Class probabilities; a single image gives shape (2,), a batch (B, 2)."""
        if mode not in ("infer", "train"):
            raise ValidationError(f"mode must be 'infer' or 'train', got {mode!r}")
        x, single = self._check_input(x)
        if mode == "train":
            probs = self._forward_cached(x, rng or np.random.default_rng())[0]
        else:
            probs = L.softmax(self._logits_infer(x).astype(np.float64))
        return probs[0] if single else probs

    def _logits_infer(self, x: np.ndarray) -> np.ndarray:
        p, a = self.params, self.arch
        h = x
        for i in range(len(a.conv_filters)):
            # max-pool and ReLU commute; pooling first halves the work
            h = L.relu_forward(L.maxpool_infer(L.conv2d_forward(h, p[f"conv{i}.kernel"], p[f"conv{i}.bias"]),
                                               a.pool_size))
        h = h.reshape(h.shape[0], -1)
        n_dense = len(a.dense_units) + 1
        for i in range(n_dense):
            h = h @ p[f"dense{i}.kernel"] + p[f"dense{i}.bias"]
            if i < n_dense - 1 and a.dense_activation == "relu":
                h = L.relu_forward(h)
        return h

    def _forward_cached(self, x: np.ndarray, rng: np.random.Generator):
        p, a = self.params, self.arch
        cache = {"conv": [], "dense": []}
        h = x
        for i in range(len(a.conv_filters)):
            z = L.conv2d_forward(h, p[f"conv{i}.kernel"], p[f"conv{i}.bias"])
            pooled, arg = L.maxpool_forward(z, a.pool_size)
            h_next = L.relu_forward(pooled)
            cache["conv"].append((h, z.shape, arg, h_next))
            h = h_next
        cache["pool_shape"] = h.shape
        h = h.reshape(h.shape[0], -1)
        mask = L.dropout_mask(h.shape, self.dropout_rate, rng, self.dtype)
        h = h * mask
        cache["mask"] = mask
        n_dense = len(a.dense_units) + 1
        for i in range(n_dense):
            inp = h
            h = inp @ p[f"dense{i}.kernel"] + p[f"dense{i}.bias"]
            if i < n_dense - 1 and a.dense_activation == "relu":
                h = L.relu_forward(h)
            cache["dense"].append((inp, h))
        cache["logits"] = h.astype(np.float64)
        return L.softmax(cache["logits"]), cache

    def loss_and_grads(self, x, labels, rng: np.random.Generator | None = None,
                       mode: str = "train") -> tuple[float, dict[str, np.ndarray], np.ndarray]:
        """Mean cross-entropy over the batch, its gradient for every parameter, and the probabilities.

        ``mode='infer'`` disables dropout (useful for gradient checks).
        """
        x, _ = self._check_input(x)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.size != x.shape[0]:
            raise ValidationError("one label per image required")
        if mode == "train":
            probs, cache = self._forward_cached(x, rng or np.random.default_rng())
        else:
            saved, self.dropout_rate = self.dropout_rate, 0.0
            try:
                probs, cache = self._forward_cached(x, np.random.default_rng(0))
            finally:
                self.dropout_rate = saved
        bsz = x.shape[0]
        # log-softmax in logit space: exact even when a probability underflows
        z = cache["logits"]
        zmax = z.max(axis=1)
        lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
        loss = float(np.mean(lse - z[np.arange(bsz), labels]))

        dlogits = probs.copy()
        dlogits[np.arange(bsz), labels] -= 1
        dlogits /= bsz
        dlogits = dlogits.astype(self.dtype)

        p, a = self.params, self.arch
        grads: dict[str, np.ndarray] = {}
        dh = dlogits
        n_dense = len(a.dense_units) + 1
        for i in reversed(range(n_dense)):
            inp, out = cache["dense"][i]
            if i < n_dense - 1 and a.dense_activation == "relu":
                dh = L.relu_backward(dh, out)
            grads[f"dense{i}.kernel"] = inp.T @ dh
            grads[f"dense{i}.bias"] = dh.sum(axis=0)
            dh = dh @ p[f"dense{i}.kernel"].T
        dh = (dh * cache["mask"]).reshape(cache["pool_shape"])
        for i in reversed(range(len(a.conv_filters))):
            h_in, z_shape, arg, out = cache["conv"][i]
            dz = L.maxpool_backward(L.relu_backward(dh, out), arg, z_shape, a.pool_size)
            dx, dw, db = L.conv2d_backward(dz, h_in, p[f"conv{i}.kernel"], need_dx=i > 0)
            grads[f"conv{i}.kernel"] = dw
            grads[f"conv{i}.bias"] = db
            dh = dx
        grads = {name: grads[name] for name in p}
        return loss, grads, probs

    def predict_proba(self, images, batch_size: int = 32) -> np.ndarray:
        """Inference over an indexable image collection, in fixed-size batches."""
        n = len(images)
        out = np.zeros((n, self.arch.n_classes), dtype=np.float64)
        for lo in range(0, n, batch_size):
            idx = np.arange(lo, min(lo + batch_size, n))
            out[idx] = self.forward(images[idx], mode="infer")
        return out


def loss(probs, label: int) -> float:
    """Sparse categorical cross-entropy of one probability vector."""
    probs = np.asarray(probs, dtype=np.float64)
    if label not in (0, 1) or label >= probs.size:
        raise ValidationError("label must be a valid class index")
    return float(-np.log(max(probs[label], PROB_FLOOR)))
