import numpy as np
import pytest

from gripsense.errors import ValidationError
from gripsense.signal_gen import (PulseConfig, PulseSchedule, apply_edge_taper, instantaneous_frequency,
                                  linear_chirp, pulse_train, tapered_pulse)


def test_chirp_length_and_midpoint_frequency():
    cfg = PulseConfig()
    assert linear_chirp(cfg).size == 1200
    assert instantaneous_frequency(cfg, cfg.pulse_len / 2) == pytest.approx(20000.0)


def test_chirp_matches_phase_formula():
    cfg = PulseConfig(amplitude=0.7)
    t = np.arange(cfg.pulse_samples) / cfg.sample_rate
    phi = cfg.f_start * t + (cfg.f_end - cfg.f_start) * t ** 2 / (2 * cfg.pulse_len)
    np.testing.assert_allclose(linear_chirp(cfg), 0.7 * np.sin(2 * np.pi * phi), atol=1e-12)


def test_chirp_spectrum_stays_in_band():
    cfg = PulseConfig()
    x = linear_chirp(cfg)
    power = np.abs(np.fft.rfft(x, 8 * x.size)) ** 2
    freqs = np.fft.rfftfreq(8 * x.size, 1 / cfg.sample_rate)
    assert 18000 <= freqs[np.argmax(power)] <= 22000
    outside = power[(freqs < 17000) | (freqs > 23000)].sum()
    assert outside < 0.05 * power.sum()


def test_instantaneous_frequency_from_phase_derivative():
    # numerical derivative of the unwrapped analytic phase tracks the linear sweep
    cfg = PulseConfig(sample_rate=192000)
    t = np.arange(cfg.pulse_samples) / cfg.sample_rate
    phi = cfg.f_start * t + (cfg.f_end - cfg.f_start) * t ** 2 / (2 * cfg.pulse_len)
    measured = np.diff(phi) * cfg.sample_rate
    expected = instantaneous_frequency(cfg, t[:-1] + 0.5 / cfg.sample_rate)
    np.testing.assert_allclose(measured, expected, rtol=1e-9)


@pytest.mark.parametrize("kwargs", [
    {"f_start": 22000, "f_end": 18000}, {"f_end": 24000}, {"taper_len": 0.0125},
    {"gap_len": -0.01}, {"amplitude": 0.0}, {"amplitude": 1.5},
])
def test_config_invariants(kwargs):
    with pytest.raises(ValidationError):
        PulseConfig(**kwargs)


def test_taper_identity_endpoint_and_middle(rng):
    x = rng.normal(size=200)
    np.testing.assert_array_equal(apply_edge_taper(x, 0), x)
    y = apply_edge_taper(x, 40)
    assert y[0] == pytest.approx(0.08 * x[0])
    assert y[-1] == pytest.approx(0.08 * x[-1])
    np.testing.assert_array_equal(y[40:160], x[40:160])
    L = 40
    np.testing.assert_allclose(y[:L] / x[:L], 0.54 - 0.46 * np.cos(np.pi * np.arange(L) / (L - 1)))
    with pytest.raises(ValidationError):
        apply_edge_taper(x, 101)


def test_one_second_train():
    buf, sched = pulse_train(PulseConfig(), 1.0)
    assert len(sched) == 10
    assert sched.period_samples == 4800 and sched.pulse_len_samples == 1200
    assert buf.frames == 48000 and buf.channels == 1


def test_single_period_train():
    buf, sched = pulse_train(PulseConfig(), 0.1)
    assert sched.pulse_starts == (0,)
    with pytest.raises(ValidationError):
        pulse_train(PulseConfig(), 0.05)


def test_train_structure():
    cfg = PulseConfig(amplitude=0.9)
    buf, sched = pulse_train(cfg, 2.37)
    x = buf.samples[0].astype(np.float64)
    rebuilt = np.zeros_like(x)
    pulse = tapered_pulse(cfg)
    for s in sched.pulse_starts:
        rebuilt[s:s + pulse.size] = pulse
    np.testing.assert_allclose(x, rebuilt, atol=1e-7)  # float32 storage
    mask = np.zeros(x.size, dtype=bool)
    for s in sched.pulse_starts:
        mask[s:s + sched.pulse_len_samples] = True
    assert not x[~mask].any()
    assert np.max(np.abs(x)) <= 0.9 + 1e-7
    # the last partial period still has room for a pulse, so 24 pulses
    assert len(sched) == 24


def test_schedule_json_roundtrip(tmp_path):
    _, sched = pulse_train(PulseConfig(), 0.5)
    sched.save(tmp_path / "s.json")
    assert PulseSchedule.load(tmp_path / "s.json") == sched
    with pytest.raises(ValidationError):
        PulseSchedule((0, 10, 25), 5, 10)
