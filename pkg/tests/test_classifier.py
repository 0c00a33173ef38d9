import math

import numpy as np
import pytest

from gripsense.classifier import (Architecture, CnnModel, ConvSpec, TrainConfig, conv_output_dims,
                                  fuse, load_model, loss, model_bytes, save_model, train)
from gripsense.classifier import layers as L
from gripsense.errors import FormatError, TruncatedFileError, ValidationError

TABLE = [
    ("conv0", (148, 148, 32), 896),
    ("pool0", (74, 74, 32), 0),
    ("conv1", (72, 72, 32), 9248),
    ("pool1", (36, 36, 32), 0),
    ("conv2", (34, 34, 32), 9248),
    ("pool2", (17, 17, 32), 0),
    ("flatten", (9248,), 0),
    ("dropout", (9248,), 0),
    ("dense0", (128,), 1183872),
    ("dense1", (60,), 7740),
    ("dense2", (2,), 122),
]


def test_full_size_layer_table():
    arch = Architecture()
    assert arch.layer_table() == TABLE
    assert arch.param_count == 1211126
    model = CnnModel(arch)
    assert model.param_count == 1211126


def test_actual_forward_shapes_match_table():
    model = CnnModel.initialized(seed=0)
    p = model.params
    h = np.random.default_rng(0).random((1, 150, 150, 3), dtype=np.float32)
    seen = []
    for i in range(3):
        h = L.relu_forward(L.conv2d_forward(h, p[f"conv{i}.kernel"], p[f"conv{i}.bias"]))
        seen.append(h.shape[1:])
        h = L.maxpool_infer(h)
        seen.append(h.shape[1:])
    assert seen == [row[1] for row in TABLE[:6]]
    assert h.reshape(1, -1).shape[1] == 9248


@pytest.mark.parametrize("m,t,expected", [(150, 32, (148, 148, 32)), (74, 32, (72, 72, 32)),
                                          (36, 32, (34, 34, 32)), (3, 7, (1, 1, 7))])
def test_conv_output_dims_examples(m, t, expected):
    assert conv_output_dims(ConvSpec(m=m, t=t)) == expected


def test_conv_output_dims_rejects_non_integral():
    with pytest.raises(ValidationError):
        conv_output_dims(ConvSpec(m=10, k=3, l=2))
    with pytest.raises(ValidationError):
        conv_output_dims(ConvSpec(m=2, k=3))


def test_conv_output_dims_agree_with_convolution():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < 50:
        k = int(rng.integers(1, 6))
        l = int(rng.integers(1, 4))
        d = int(rng.integers(0, 3))
        m = int(rng.integers(1, 20))
        if m - k + 2 * d < 0 or (m - k + 2 * d) % l:
            continue
        t = int(rng.integers(1, 5))
        c = int(rng.integers(1, 10))
        x = rng.random((1, m, m, c))
        w = rng.random((k, k, c, t))
        out = L.conv2d_forward(x, w, np.zeros(t), stride=l, pad=d)
        assert out.shape[1:] == conv_output_dims(ConvSpec(m, k, l, d, t))
        checked += 1


# -- brute-force reference network -----------------------------------------

def _conv_loops(x, w, b):
    h, wd, c = x.shape
    k, _, _, t = w.shape
    out = np.zeros((h - k + 1, wd - k + 1, t))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            for f in range(t):
                acc = b[f]
                for di in range(k):
                    for dj in range(k):
                        for ch in range(c):
                            acc += x[i + di, j + dj, ch] * w[di, dj, ch, f]
                out[i, j, f] = acc
    return out


def _pool_loops(x, size):
    ho, wo = x.shape[0] // size, x.shape[1] // size
    out = np.zeros((ho, wo, x.shape[2]))
    for i in range(ho):
        for j in range(wo):
            for ch in range(x.shape[2]):
                out[i, j, ch] = max(x[i * size + a, j * size + b, ch]
                                    for a in range(size) for b in range(size))
    return out


def _reference_probs(model, image):
    p, a = model.params, model.arch
    h = np.asarray(image, dtype=np.float64)
    for i in range(len(a.conv_filters)):
        h = _conv_loops(h, p[f"conv{i}.kernel"], p[f"conv{i}.bias"])
        h = np.where(h > 0, h, 0.0)
        h = _pool_loops(h, a.pool_size)
    v = list(h.reshape(-1))
    n_dense = len(a.dense_units) + 1
    for i in range(n_dense):
        w, bias = p[f"dense{i}.kernel"], p[f"dense{i}.bias"]
        v = [bias[u] + sum(v[q] * w[q, u] for q in range(len(v))) for u in range(w.shape[1])]
        if i < n_dense - 1 and a.dense_activation == "relu":
            v = [max(z, 0.0) for z in v]
    m = max(v)
    e = [math.exp(z - m) for z in v]
    return np.array([z / sum(e) for z in e])


@pytest.mark.parametrize("arch", [
    Architecture((8, 8, 3), (4, 3), kernel_size=2, dense_units=(6, 5)),
    Architecture((8, 8, 3), (4,), kernel_size=3, dense_units=(7,), dense_activation="relu"),
])
def test_tiny_net_matches_loop_oracle(arch):
    model = CnnModel.initialized(arch, seed=3, dtype=np.float64)
    rng = np.random.default_rng(9)
    for name in model.params:
        if name.endswith(".bias"):
            model.params[name][...] = rng.normal(0, 0.1, model.params[name].shape)
    for _ in range(3):
        image = rng.random((8, 8, 3))
        got = model.forward(image)
        np.testing.assert_allclose(got, _reference_probs(model, image), rtol=0, atol=1e-9)


def test_zero_weights_give_even_split():
    probs = CnnModel(Architecture((8, 8, 3), (2,), dense_units=(3,))).forward(np.ones((8, 8, 3)))
    np.testing.assert_array_equal(probs, [0.5, 0.5])


def test_inference_deterministic_and_dropout_only_in_training():
    arch = Architecture((12, 12, 3), (4, 4), dense_units=(8,))
    model = CnnModel.initialized(arch, seed=1, dropout_rate=0.5)
    image = np.random.default_rng(0).random((12, 12, 3))
    a, b = model.forward(image), model.forward(image)
    np.testing.assert_array_equal(a, b)
    trained = {tuple(model.forward(image, "train", np.random.default_rng(s))) for s in range(5)}
    assert len(trained) > 1


def test_dropout_mask_is_inverted():
    mask = L.dropout_mask((100000,), 0.5, np.random.default_rng(0), np.float64)
    assert set(np.unique(mask)) <= {0.0, 2.0}
    assert abs(mask.mean() - 1.0) < 0.02


def test_input_shape_mismatch_rejected():
    model = CnnModel(Architecture((8, 8, 3), (2,), dense_units=(3,)))
    with pytest.raises(ValidationError):
        model.forward(np.zeros((9, 8, 3)))


# -- softmax / loss / fusion ------------------------------------------------

def test_softmax_normalized_and_shift_invariant():
    rng = np.random.default_rng(2)
    z = rng.normal(0, 20, (500, 2))
    p = L.softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(L.softmax(z + rng.normal(0, 50, (500, 1))), p, atol=1e-9)


def test_loss_values():
    assert loss([0.5, 0.5], 0) == pytest.approx(math.log(2))
    assert loss([0.5, 0.5], 1) == pytest.approx(0.6931, abs=1e-4)
    assert loss([1.0, 0.0], 0) == 0.0
    assert loss([0.9, 0.1], 1) == pytest.approx(-math.log(0.1))
    assert loss([1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))


def test_fuse_examples():
    d = fuse(1.0, 1.0)
    assert (d.label, d.score) == ("handheld", 1.0)
    d = fuse(0.2, 0.2)
    assert (d.label, d.score) == ("handsfree", 0.2)
    d = fuse(0.9, 0.2)
    assert d.label == "handheld" and d.score == pytest.approx(0.55)
    assert fuse(0.5, 0.5).label == "handheld"
    assert d.per_mic_scores == (0.9, 0.2)


def test_fuse_symmetric_and_validated():
    rng = np.random.default_rng(4)
    for a, b in rng.random((200, 2)):
        assert fuse(a, b).score == fuse(b, a).score
    with pytest.raises(ValidationError):
        fuse(1.2, 0.5)


# -- gradients --------------------------------------------------------------

def _numeric_grad(model, x, y, name, step=1e-4):
    arr = model.params[name]
    num = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + step
        up = model.loss_and_grads(x, y, mode="infer")[0]
        arr[idx] = orig - step
        down = model.loss_and_grads(x, y, mode="infer")[0]
        arr[idx] = orig
        num[idx] = (up - down) / (2 * step)
    return num


@pytest.mark.parametrize("activation", ["linear", "relu"])
def test_gradients_match_central_differences(activation):
    arch = Architecture((12, 12, 2), (3, 4), dense_units=(5, 3), dense_activation=activation)
    model = CnnModel.initialized(arch, seed=11, dtype=np.float64)
    rng = np.random.default_rng(12)
    for name in model.params:
        if name.endswith(".bias"):
            model.params[name][...] = rng.normal(0, 0.05, model.params[name].shape)
    x = rng.random((3, 12, 12, 2))
    y = np.array([0, 1, 1])
    _, grads, _ = model.loss_and_grads(x, y, mode="infer")
    for name in model.params:
        num = _numeric_grad(model, x, y, name)
        ana = grads[name]
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), 1e-6)
        rel = np.abs(ana - num) / denom
        assert rel.max() < 1e-4, f"{name}: max relative error {rel.max():.2e}"


def test_maxpool_ties_route_to_first_element():
    x = np.zeros((1, 2, 4, 1))
    x[0, :, :2, 0] = 1.0                    # whole window tied
    x[0, 1, 2, 0] = x[0, 1, 3, 0] = 3.0     # tie on the bottom row
    out, arg = L.maxpool_forward(x)
    np.testing.assert_array_equal(out[0, 0, :, 0], [1.0, 3.0])
    dx = L.maxpool_backward(np.array([[[[5.0], [7.0]]]]), arg, x.shape)
    expected = np.zeros((2, 4))
    expected[0, 0] = 5.0
    expected[1, 2] = 7.0
    np.testing.assert_array_equal(dx[0, :, :, 0], expected)


def test_maxpool_gradient_matches_differences_without_ties():
    rng = np.random.default_rng(0)
    x = rng.permutation(2 * 5 * 4 * 3).reshape(2, 5, 4, 3).astype(np.float64)
    g = rng.normal(size=(2, 2, 2, 3))
    _, arg = L.maxpool_forward(x)
    dx = L.maxpool_backward(g, arg, x.shape)
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += 1e-4
        xm[idx] -= 1e-4
        num[idx] = (np.sum(L.maxpool_infer(xp) * g) - np.sum(L.maxpool_infer(xm) * g)) / 2e-4
    np.testing.assert_allclose(dx, num, atol=1e-8)


# -- training ---------------------------------------------------------------

TOY_ARCH = Architecture((10, 10, 3), (4, 4), dense_units=(8, 6))


def _toy_dataset(n=40, seed=0):
    # two features (brightness of the left and right halves); class = which half is brighter
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n):
        lab = i % 2
        lo, hi = rng.uniform(0.0, 0.3), rng.uniform(0.7, 1.0)
        img = np.zeros((10, 10, 3), dtype=np.float32)
        img[:, :5] = hi if lab else lo
        img[:, 5:] = lo if lab else hi
        data.append((img, lab))
    return data


def test_toy_training_separates_perfectly():
    result = train(_toy_dataset(), TrainConfig(epochs=20, batch_size=8, rng_seed=1), arch=TOY_ARCH)
    assert result.final_accuracy == 1.0
    assert result.epoch_losses[-1] < result.epoch_losses[0]
    assert result.final_loss == result.epoch_losses[-1]


def test_training_is_bit_identical_for_same_seed():
    cfg = TrainConfig(epochs=3, batch_size=8, rng_seed=42)
    a = train(_toy_dataset(), cfg, arch=TOY_ARCH).model
    b = train(_toy_dataset(), cfg, arch=TOY_ARCH).model
    assert model_bytes(a) == model_bytes(b)
    c = train(_toy_dataset(), TrainConfig(epochs=3, batch_size=8, rng_seed=43), arch=TOY_ARCH).model
    assert model_bytes(a) != model_bytes(c)


def test_single_class_dataset_rejected():
    data = [(img, 1) for img, _ in _toy_dataset(6)]
    with pytest.raises(ValidationError):
        train(data, TrainConfig(epochs=1), arch=TOY_ARCH)


def test_bad_train_config_rejected():
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValidationError):
        TrainConfig(dropout_rate=1.0)


# -- serialization ----------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    model = CnnModel.initialized(TOY_ARCH, seed=8)
    path = tmp_path / "m.gsnn"
    save_model(model, path)
    loaded = load_model(path)
    images = np.random.default_rng(1).random((10, 10, 10, 3))
    np.testing.assert_array_equal(model.forward(images), loaded.forward(images))
    assert model_bytes(loaded) == path.read_bytes()


def test_full_size_file_is_about_4_8_mb():
    size = len(model_bytes(CnnModel()))
    assert 1211126 * 4 <= size < 1211126 * 4 + 4096


def test_corrupt_and_truncated_files(tmp_path):
    raw = model_bytes(CnnModel.initialized(TOY_ARCH, seed=0))
    bad = tmp_path / "bad.gsnn"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_model(bad)
    bad.write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError):
        load_model(bad)
    for cut in (6, 20, len(raw) - 1):
        bad.write_bytes(raw[:cut])
        with pytest.raises(TruncatedFileError):
            load_model(bad)
