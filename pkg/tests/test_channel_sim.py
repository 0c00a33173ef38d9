import math

import numpy as np
import pytest

from gripsense.audio_io import AudioBuffer
from gripsense.channel_sim import (HANDHELD_SURFACES, HANDSFREE_SURFACES, IDENTITY_SURFACE, SURFACES,
                                   NoiseModel, SessionScript, SurfaceModel, add_noise, band_energies,
                                   blend_surfaces, grab_session_script, simulate_session,
                                   surface_response)
from gripsense.errors import FormatError, ValidationError
from gripsense.preprocess import BandpassSpec, bandpass_samples
from gripsense.signal_gen import PulseConfig, tapered_pulse

FS = 48000


def test_eleven_surfaces_split_by_class():
    assert len(SURFACES) == 11
    assert set(HANDHELD_SURFACES) == {"hand_still", "hand_texting", "hand_scrolling", "hand_calling"}
    assert len(HANDSFREE_SURFACES) == 7
    for s in SURFACES.values():
        assert s.edges[0] == 18000 and s.edges[-1] == 22000


def test_band_partition_enforced():
    with pytest.raises(ValidationError):
        SurfaceModel("x", ((18000, 20000, 0.0), (20500, 22000, 0.0)))
    with pytest.raises(ValidationError):
        SurfaceModel("x", ((18000, 21000, 0.0), (20000, 22000, 0.0)))
    with pytest.raises(ValidationError):
        SurfaceModel("x", ((17000, 22000, 0.0),))


def test_identity_surface_is_unit_channel(rng):
    x = rng.normal(size=1200)
    np.testing.assert_array_equal(surface_response(IDENTITY_SURFACE, x, 3), x)


def test_band_suppression_energy():
    hand = SurfaceModel("hand_test", ((18000, 20000, 0.0), (20000, 22000, -20.0)))
    pulse = tapered_pulse(PulseConfig())
    out = surface_response(hand, pulse, 0)
    e_in = band_energies(pulse, FS, [20000, 22000])[0]
    e_out = band_energies(out, FS, [20000, 22000])[0]
    assert e_out / e_in == pytest.approx(0.01, rel=0.10)


def test_response_determinism():
    pulse = tapered_pulse(PulseConfig())
    a = surface_response(SURFACES["hand_texting"], pulse, 99)
    b = surface_response(SURFACES["hand_texting"], pulse, 99)
    c = surface_response(SURFACES["hand_texting"], pulse, 100)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_blend_endpoints_and_midpoint():
    a, b = SURFACES["seat"], SURFACES["hand_still"]
    assert blend_surfaces(a, b, 0.0) == a
    assert blend_surfaces(a, b, 1.0) == b
    mid = blend_surfaces(a, b, 0.5)
    np.testing.assert_allclose(mid.gains_db, (a.gains_db + b.gains_db) / 2)


def test_single_surface_truth():
    script = SessionScript(((0.0, "seat"),), 2.0)
    sess = simulate_session(script, PulseConfig(), 1)
    assert sess.truth == ["handsfree"] * 20
    assert sess.buffer.channels == 2 and sess.buffer.frames == 2 * FS


def test_truth_bookkeeping():
    script = SessionScript(((0.0, "seat"), (1.0, "hand_still"), (6.0, "seat")), 8.0)
    truth = simulate_session(script, PulseConfig(), 2).truth
    assert truth == ["handsfree"] * 10 + ["handheld"] * 50 + ["handsfree"] * 20


@pytest.mark.parametrize("duration", [0.95, 2.0, 3.37, 10.0])
def test_truth_length(duration):
    script = SessionScript(((0.0, "console"),), duration)
    assert len(simulate_session(script, PulseConfig(), 0).truth) == math.floor(duration / 0.1 + 1e-9)


def test_unknown_surface_and_bad_scripts():
    with pytest.raises(ValidationError):
        SessionScript(((0.0, "dashboard"),), 2.0)
    with pytest.raises(ValidationError):
        SessionScript(((0.0, "seat"), (0.0, "console")), 2.0)
    with pytest.raises(ValidationError):
        SessionScript(((0.0, "seat"), (2.5, "console")), 2.0)
    with pytest.raises(FormatError):
        SessionScript.from_json({"events": []})


def test_script_json_roundtrip():
    script = grab_session_script(120.0, 3, seed=5, noise=NoiseModel(0.1, 0.01))
    assert SessionScript.from_json(script.to_json()) == script


def test_mic2_has_stronger_echo():
    script = SessionScript(((0.0, "cup_holder"),), 1.0, latency=0.0)
    sess = simulate_session(script, PulseConfig(), 4, store_responses=True)
    r1, r2 = sess.responses[0]
    assert not np.array_equal(r1, r2)


def test_zero_noise_is_identity(rng):
    buf = AudioBuffer(rng.normal(size=(2, 1000)).astype(np.float32))
    assert add_noise(buf, NoiseModel(), 1) == buf


def test_wideband_rms():
    out = add_noise(AudioBuffer(np.zeros((1, 200000))), NoiseModel(wideband_level=0.05), 7)
    assert np.sqrt(np.mean(out.samples.astype(np.float64) ** 2)) == pytest.approx(0.05, rel=0.05)


def test_lowband_energy_below_6k():
    out = add_noise(AudioBuffer(np.zeros((1, 1 << 18))), NoiseModel(lowband_level=0.1), 8)
    x = out.samples[0].astype(np.float64)
    assert np.sqrt(np.mean(x ** 2)) == pytest.approx(0.1, rel=0.05)
    below, total = band_energies(x, FS, [0, 6000])[0], band_energies(x, FS, [0, FS / 2 + 1])[0]
    assert below / total >= 0.99


def test_noise_determinism():
    noise = NoiseModel(0.1, 0.01, 0.02)
    a = add_noise(AudioBuffer(np.zeros((2, 5000))), noise, 3)
    b = add_noise(AudioBuffer(np.zeros((2, 5000))), noise, 3)
    assert a == b


def test_lowband_noise_barely_hurts_band_snr():
    cfg = PulseConfig()
    clean = SessionScript(((0.0, "seat"),), 3.0)
    noisy = SessionScript(((0.0, "seat"),), 3.0, noise=NoiseModel(lowband_level=0.1))
    a = simulate_session(clean, cfg, 11).buffer.samples[0].astype(np.float64)
    b = simulate_session(noisy, cfg, 11).buffer.samples[0].astype(np.float64)
    spec = BandpassSpec()
    fa, fb = bandpass_samples(a, spec, FS), bandpass_samples(b, spec, FS)
    # clean reference contains no noise; residual is the noise that leaks through
    snr = 10 * np.log10(np.sum(fa ** 2) / np.sum((fb - fa) ** 2))
    assert snr > 40  # a loss of < 1 dB from any realistic band SNR
