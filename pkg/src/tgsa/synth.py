"""Synthetic clean/noise generators and dataset synthesis.

Clean signals are harmonic or chirp composites with slow envelopes, so
nearby frames stay correlated (something a distance-dependent attention
scale can latch onto).  Everything is driven by one seeded generator in a
fixed consumption order, making the emitted WAV bytes reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import Waveform, measured_snr_db, mix
from .errors import ConfigError, DomainError
from .wavio import write_wav

CLEAN_KINDS = ("harmonic-tones", "chirp-mixture", "filtered-noise-bursts")
NOISE_KINDS = ("white", "pink", "babble-surrogate")

RMS_TARGET = 0.1
PEAK_TARGET = 0.95


@dataclass
class SynthRecipe:
    num_utterances: int = 4
    duration_s: float = 1.0
    clean_kind: str = "harmonic-tones"
    noise_kind: str = "white"
    snr_db: tuple[float, ...] = (-5.0, 5.0)
    sample_rate: int = 16000

    def __post_init__(self):
        if self.clean_kind not in CLEAN_KINDS:
            raise DomainError(f"clean_kind must be one of {CLEAN_KINDS}, got {self.clean_kind!r}")
        if self.noise_kind not in NOISE_KINDS:
            raise DomainError(f"noise_kind must be one of {NOISE_KINDS}, got {self.noise_kind!r}")
        if self.num_utterances < 1 or self.duration_s <= 0 or not self.snr_db:
            raise DomainError("recipe needs >= 1 utterance, positive duration, >= 1 SNR")


def _slow_envelope(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    rate = rng.uniform(1.0, 4.0)
    phase = rng.uniform(0, 2 * np.pi)
    return 0.55 + 0.45 * np.sin(2 * np.pi * rate * t + phase)


def _rms_normalize(x: np.ndarray, target: float = RMS_TARGET) -> np.ndarray:
    rms = np.sqrt(np.mean(x ** 2))
    if rms <= 0:
        raise DomainError("generated signal has zero energy")
    return x * (target / rms)


def harmonic_tones(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    f0 = rng.uniform(80.0, 300.0)
    out = np.zeros(n)
    for k in range(1, 7):
        if k * f0 >= sr / 2:
            break
        amp = 1.0 / k * rng.uniform(0.5, 1.0)
        out += amp * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    return _rms_normalize(out * _slow_envelope(n, sr, rng))


def chirp_mixture(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / sr
    out = np.zeros(n)
    for _ in range(int(rng.integers(2, 5))):
        f_start = rng.uniform(100.0, sr / 4)
        f_end = rng.uniform(100.0, sr / 4)
        sweep = f_start + (f_end - f_start) * t / t[-1]
        phase = 2 * np.pi * np.cumsum(sweep) / sr
        out += rng.uniform(0.4, 1.0) * np.sin(phase + rng.uniform(0, 2 * np.pi))
    return _rms_normalize(out * _slow_envelope(n, sr, rng))


def filtered_noise_bursts(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    # FFT bandpass of white noise, gated by smooth on/off bursts.
    white = rng.normal(0, 1, n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    lo = rng.uniform(200.0, sr / 8)
    hi = lo * rng.uniform(1.5, 3.0)
    band = (freqs >= lo) & (freqs <= min(hi, sr / 2))
    spectrum[~band] = 0.0
    shaped = np.fft.irfft(spectrum, n)
    gate = np.zeros(n)
    pos = 0
    while pos < n:
        burst = int(rng.uniform(0.05, 0.2) * sr)
        gap = int(rng.uniform(0.02, 0.1) * sr)
        gate[pos:pos + burst] = 1.0
        pos += burst + gap
    ramp = max(int(0.005 * sr), 1)
    kernel = np.ones(ramp) / ramp
    gate = np.convolve(gate, kernel, mode="same")
    out = shaped * (0.1 + 0.9 * gate)
    return _rms_normalize(out)


def white_noise(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    return _rms_normalize(rng.normal(0, 1, n))


def pink_noise(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.normal(0, 1, n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    shaping = np.ones_like(freqs)
    shaping[1:] = 1.0 / np.sqrt(freqs[1:])
    shaping[0] = 0.0
    return _rms_normalize(np.fft.irfft(spectrum * shaping, n))


def babble_surrogate(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(n)
    for _ in range(6):
        out += harmonic_tones(n, sr, rng)
    return _rms_normalize(out)


_CLEAN_GENERATORS = {
    "harmonic-tones": harmonic_tones,
    "chirp-mixture": chirp_mixture,
    "filtered-noise-bursts": filtered_noise_bursts,
}
_NOISE_GENERATORS = {
    "white": white_noise,
    "pink": pink_noise,
    "babble-surrogate": babble_surrogate,
}


def make_clean(kind: str, n: int, sr: int, rng: np.random.Generator) -> Waveform:
    return Waveform(_CLEAN_GENERATORS[kind](n, sr, rng), sr)


def make_noise(kind: str, n: int, sr: int, rng: np.random.Generator) -> Waveform:
    return Waveform(_NOISE_GENERATORS[kind](n, sr, rng), sr)


def synthesize_dataset(recipe: SynthRecipe, out_dir, seed: int) -> Path:
    """Write paired clean/noisy WAVs plus a manifest; returns the manifest path.

    Rows: num_utterances x len(snr_db).  Clean/noisy pairs are scaled
    jointly to avoid clipping, which preserves the mixture's SNR; the
    manifest records the requested SNR.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    rng = np.random.default_rng(seed)
    n = int(round(recipe.duration_s * recipe.sample_rate))
    rows = ["id\tclean\tnoisy\tsnr_db"]
    for u in range(recipe.num_utterances):
        clean = make_clean(recipe.clean_kind, n, recipe.sample_rate, rng)
        for snr in recipe.snr_db:
            noise = make_noise(recipe.noise_kind, n, recipe.sample_rate, rng)
            noisy = mix(clean, noise, snr)
            peak = max(np.max(np.abs(clean.samples)), np.max(np.abs(noisy.samples)))
            gain = PEAK_TARGET / peak if peak > PEAK_TARGET else 1.0
            uid = f"utt{u:04d}_snr{snr:+05.1f}"
            clean_name = f"{uid}_clean.wav"
            noisy_name = f"{uid}_noisy.wav"
            write_wav(out_dir / clean_name,
                      Waveform(clean.samples * gain, recipe.sample_rate))
            write_wav(out_dir / noisy_name,
                      Waveform(noisy.samples * gain, recipe.sample_rate))
            rows.append(f"{uid}\t{clean_name}\t{noisy_name}\t{snr}")
    manifest = out_dir / "manifest.tsv"
    manifest.write_text("\n".join(rows) + "\n")
    return manifest


def verify_manifest_snrs(manifest_path, tol_db: float = 0.01) -> list[tuple[str, float, float]]:
    """Re-measure each pair's SNR from disk; returns (id, requested, measured)."""
    from .wavio import read_wav

    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    results = []
    for line in manifest_path.read_text().splitlines()[1:]:
        uid, clean_rel, noisy_rel, snr = line.split("\t")
        clean = read_wav(base / clean_rel)
        noisy = read_wav(base / noisy_rel)
        measured = measured_snr_db(clean, noisy)
        results.append((uid, float(snr), measured))
    if any(abs(req - got) > tol_db for _, req, got in results):
        raise DomainError(f"manifest SNRs deviate more than {tol_db} dB: {results}")
    return results
