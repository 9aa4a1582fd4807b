"""WAV file I/O: 16-bit PCM little-endian mono with a canonical header.

Samples are normalized to [-1, 1) on read and saturating-clamped on write.
"""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .dsp import Waveform
from .errors import ConfigError

_SCALE = 32768.0


def read_wav(path) -> Waveform:
    path = Path(path)
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ConfigError(f"{path}: expected mono, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ConfigError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
        if fh.getcomptype() != "NONE":
            raise ConfigError(f"{path}: compressed WAV not supported")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / _SCALE, rate)


def write_wav(path, waveform: Waveform) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.rint(waveform.samples * _SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(waveform.sample_rate)
        fh.writeframes(pcm.tobytes())
