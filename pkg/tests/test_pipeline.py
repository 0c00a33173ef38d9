import numpy as np
import pytest

from gripsense import pipeline as P
from gripsense.channel_sim import NoiseModel, SessionScript, simulate_session
from gripsense.errors import ValidationError
from gripsense.features import crop_band, dtstft
from gripsense.monitor import HANDHELD, PhoneUseInstance
from gripsense.preprocess import bandpass_samples


def test_config_ini_round_trip():
    cfg = P.load_config(text="[stft]\nout_size = 64\n[monitor]\nth1 = 4\n[pipeline]\nseed = 9\n")
    assert cfg.stft.out_size == 64 and cfg.monitor.th1 == 4 and cfg.seed == 9
    assert P.load_config(text=cfg.to_ini()) == cfg
    assert cfg.architecture.input_shape == (64, 64, 3)


@pytest.mark.parametrize("text", ["[nope]\na = 1\n", "[train]\nepochs = two\n", "[pipeline]\nfoo = 1\n",
                                  "[monitor]\nsample_period = 0.2\n"])
def test_config_errors(text):
    with pytest.raises(ValidationError):
        P.load_config(text=text)


def test_windowed_features_match_whole_recording_filtering():
    cfg = P.PipelineConfig()
    script = SessionScript(((0.0, "seat"), (1.2, "hand_still")), 3.0, NoiseModel(0.1, 0.01, 0.0))
    sess = simulate_session(script, cfg.pulse, 2)
    feats = P.pulse_features(sess.buffer, sess.schedule, cfg, block=7)

    whole = bandpass_samples(sess.buffer.samples.astype(np.float64), cfg.bandpass, cfg.pulse.sample_rate)
    plen = sess.schedule.pulse_len_samples
    for k, idx in enumerate(feats.pulse_index):
        start = sess.schedule.pulse_starts[idx] + feats.delays[k]
        seg = whole[:, start:start + plen]
        seg = seg / np.max(np.abs(seg), axis=-1, keepdims=True)
        expected = crop_band(dtstft(seg, cfg.stft), cfg.stft)
        np.testing.assert_allclose(feats.matrices[k], expected, atol=1e-4)
    assert len(feats) == 30


def test_detection_samples_stop_at_first_gap():
    det = P.Detection(np.array([0, 1, 3]), np.array([0.9, 0.1, 0.9]), np.array([0.7, 0.1, 0.9]))
    samples = det.samples()
    assert [s.label for s in samples] == [HANDHELD, "handsfree"]
    assert samples[0].score == pytest.approx(0.8)


def test_events_to_instances():
    events = [{"event": "handheld_start", "t": 1.0}, {"event": "handheld_end", "t": 2.5},
              {"event": "handheld_start", "t": 4.0}]
    assert P.events_to_instances(events, 6.0) == [PhoneUseInstance(HANDHELD, 1.0, 2.5),
                                                  PhoneUseInstance(HANDHELD, 4.0, 6.0, True)]
