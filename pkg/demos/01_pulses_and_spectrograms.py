"""
Pulses, surfaces and spectrograms
=================================

One chirp every 100 ms, recorded by two microphones while the phone rests
on a seat and then sits in a hand.  The surface shapes how the 18-22 kHz
band comes back, and that shape is what the classifier later sees.
"""

from gripsense.channel_sim import NoiseModel, SessionScript, simulate_session
from gripsense.pipeline import PipelineConfig, pulse_features

cfg = PipelineConfig()
print(f"pulse: {cfg.pulse.pulse_len * 1e3:.0f} ms chirp, "
      f"{cfg.pulse.f_start / 1e3:.0f}-{cfg.pulse.f_end / 1e3:.0f} kHz, every {cfg.pulse.period * 1e3:.0f} ms")

# %% four seconds on the seat, four seconds in a still hand
script = SessionScript(((0.0, "seat"), (4.0, "hand_still")), 8.0, NoiseModel(0.1, 0.01, 0.0))
session = simulate_session(script, cfg.pulse, 1)
print("recording:", session.buffer.samples.shape, "at", session.buffer.sample_rate, "Hz")
print("first labels:", session.truth[:3], "... last:", session.truth[-3:])

# %% synchronize, band-pass and transform every pulse
feats = pulse_features(session.buffer, session.schedule, cfg)
print("delay found by the template search:", int(feats.delays[0]), "samples",
      f"(true latency {session.latency_samples})")
print("feature matrices:", feats.matrices.shape, "(pulse, mic, frame, bin)")

# %% mean log-magnitude per frequency bin, seat vs hand, microphone 1
seat = feats.matrices[5:35, 0].mean(axis=(0, 1))
hand = feats.matrices[45:75, 0].mean(axis=(0, 1))
freqs = cfg.stft.band_bins() * cfg.stft.sample_rate / cfg.stft.fft_len
for f, a, b in zip(freqs, seat, hand):
    print(f"{f / 1e3:6.2f} kHz   seat {a:7.2f} dB   hand {b:7.2f} dB   diff {b - a:+6.2f}")
