"""Handheld phone-use detection from inaudible ultrasonic pulses.

A phone plays a 25 ms 18-22 kHz chirp ten times per second and records the
result on two microphones.  A hand gripping the phone damps the upper half
of the band; support surfaces do not.  The package simulates that channel,
turns each recorded pulse into a short-time spectrum image, classifies it
with a small CNN per microphone and cleans the resulting 10 Hz label stream
into handheld intervals.
"""

from .audio_io import AudioBuffer, read_wav, write_wav
from .errors import FormatError, TruncatedFileError, UnsupportedEncodingError, ValidationError
from .monitor import (Chunk, MonitorConfig, PhoneUseInstance, StatusSample, StreamingMonitor,
                      chunk_sequence, extract_instances, flip_and_merge, push_sample)
from .signal_gen import PulseConfig, PulseSchedule, pulse_train

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "Chunk", "FormatError", "MonitorConfig", "PhoneUseInstance", "PulseConfig",
    "PulseSchedule", "StatusSample", "StreamingMonitor", "TruncatedFileError",
    "UnsupportedEncodingError", "ValidationError", "chunk_sequence", "extract_instances",
    "flip_and_merge", "pulse_train", "push_sample", "read_wav", "write_wav",
]
