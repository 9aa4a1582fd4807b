"""STFT analysis/synthesis, SNR mixing, and noisy-phase reconstruction.

The transforms are built from taped primitives (gather, matmul with fixed
DFT bases, scatter-add), so whenever their inputs carry gradients the loss
can backpropagate through synthesis; framing and overlap-add are linear
maps with exact adjoints.  Inverse synthesis divides the overlap-added
signal by the squared-window envelope, which reconstructs the input
exactly wherever the envelope is positive; configurations whose envelope
vanishes inside the retained region are rejected.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as ops
from .errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor

DEFAULT_FFT_SIZE = 256
DEFAULT_HOP = 64

MAGNITUDE_FLOOR = 1e-12
SNR_CAP_DB = 100.0


@dataclass
class Waveform:
    """Mono float64 sample sequence; samples nominally in [-1, 1)."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise DomainError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    """One-sided complex STFT frames as separate real/imag planes [T, F]."""

    real: Tensor
    imag: Tensor
    fft_size: int
    hop: int
    window_kind: str
    orig_len: int

    def __post_init__(self):
        f = self.fft_size // 2 + 1
        if self.real.shape != self.imag.shape:
            raise ShapeError(f"real/imag shapes differ: {self.real.shape} vs {self.imag.shape}")
        if self.real.ndim != 2 or self.real.shape[1] != f:
            raise ShapeError(f"expected [T, {f}] planes for fft_size {self.fft_size}, "
                             f"got {self.real.shape}")

    @property
    def num_frames(self) -> int:
        return self.real.shape[0]

    @property
    def num_bins(self) -> int:
        return self.real.shape[1]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    m = np.arange(n, dtype=np.float64)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * m / n)


def frame_count(num_samples: int, hop: int) -> int:
    return -(-num_samples // hop)  # ceil division


@functools.lru_cache(maxsize=8)
def _dft_bases(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Forward/inverse real-DFT bases for frame transforms.

    forward:  X_k = sum_m x_m exp(-2*pi*i*k*m/n), one-sided k in [0, n/2]
    inverse:  x_m = (1/n) * (X_0 + 2*sum_mid(...) + X_{n/2}*(-1)^m)
    """
    m = np.arange(n, dtype=np.float64)[:, None]
    k = np.arange(n // 2 + 1, dtype=np.float64)[None, :]
    theta = 2.0 * np.pi * k * m / n
    fwd_cos = np.cos(theta)          # [n, F]
    fwd_msin = -np.sin(theta)        # [n, F]
    weights = np.full(n // 2 + 1, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    inv_cos = (weights[:, None] / n) * np.cos(theta.T)    # [F, n]
    inv_msin = -(weights[:, None] / n) * np.sin(theta.T)  # [F, n]
    return fwd_cos, fwd_msin, inv_cos, inv_msin


def _reflect_indices(start: int, stop: int, n: int) -> np.ndarray:
    """Map positions [start, stop) onto [0, n) by boundary reflection."""
    idx = np.arange(start, stop)
    if n == 1:
        return np.zeros(idx.shape, dtype=np.intp)
    period = 2 * n - 2
    folded = np.abs(idx) % period
    return np.where(folded >= n, period - folded, folded).astype(np.intp)


def _frame_indices(num_samples: int, fft_size: int, hop: int) -> np.ndarray:
    t = frame_count(num_samples, hop)
    starts = np.arange(t, dtype=np.intp)[:, None] * hop
    return starts + np.arange(fft_size, dtype=np.intp)[None, :]


def _validate_stft_config(fft_size: int, hop: int) -> None:
    if fft_size < 2 or fft_size & (fft_size - 1) != 0:
        raise ConfigError(f"fft_size must be a power of two >= 2, got {fft_size}")
    if not 0 < hop <= fft_size:
        raise ConfigError(f"hop must satisfy 0 < hop <= fft_size, got hop={hop}, "
                          f"fft_size={fft_size}")


def stft(x, fft_size: int = DEFAULT_FFT_SIZE, hop: int = DEFAULT_HOP) -> Spectrogram:
    """Hann-windowed one-sided STFT with half-window reflection padding.

    Accepts a Waveform, a 1-D array, or a 1-D tape tensor; the frame count
    is ceil(len(x) / hop).
    """
    _validate_stft_config(fft_size, hop)
    if isinstance(x, Waveform):
        x = x.samples
    x = ops.as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"stft expects a 1-D signal, got shape {x.shape}")
    n_samples = x.shape[0]
    if n_samples == 0:
        raise DomainError("stft: empty waveform")

    pad = fft_size // 2
    pad_map = _reflect_indices(-pad, n_samples + pad, n_samples)
    gather_idx = pad_map[_frame_indices(n_samples, fft_size, hop)]
    frames = ops.take(x, gather_idx)
    windowed = ops.mul(frames, Tensor(hann_window(fft_size)))
    fwd_cos, fwd_msin, _, _ = _dft_bases(fft_size)
    return Spectrogram(
        real=ops.matmul(windowed, Tensor(fwd_cos)),
        imag=ops.matmul(windowed, Tensor(fwd_msin)),
        fft_size=fft_size,
        hop=hop,
        window_kind="hann",
        orig_len=n_samples,
    )


def _ola_envelope(spec: Spectrogram) -> np.ndarray:
    window_sq = hann_window(spec.fft_size) ** 2
    padded_len = spec.orig_len + spec.fft_size
    idx = _frame_indices(spec.orig_len, spec.fft_size, spec.hop)
    envelope = np.zeros(padded_len)
    np.add.at(envelope, idx, np.broadcast_to(window_sq, idx.shape))
    return envelope


def istft(spec: Spectrogram) -> Tensor:
    """Windowed overlap-add inverse; returns a 1-D tensor of orig_len samples.

    Differentiable w.r.t. the spectrogram planes.  Raises ConfigError when
    the squared-window overlap-add envelope vanishes somewhere inside the
    retained region (non-invertible window/hop combination).
    """
    _validate_stft_config(spec.fft_size, spec.hop)
    if spec.window_kind != "hann":
        raise ConfigError(f"unsupported window kind {spec.window_kind!r}")
    expected_frames = frame_count(spec.orig_len, spec.hop)
    if spec.num_frames != expected_frames:
        raise ShapeError(f"spectrogram has {spec.num_frames} frames; orig_len "
                         f"{spec.orig_len} at hop {spec.hop} implies {expected_frames}")

    pad = spec.fft_size // 2
    envelope = _ola_envelope(spec)
    region = envelope[pad:pad + spec.orig_len]
    if np.min(region) < 1e-8:
        raise ConfigError(
            f"window/hop combination is not invertible: overlap-add envelope "
            f"reaches {np.min(region):.3e} (fft_size={spec.fft_size}, hop={spec.hop})")

    _, _, inv_cos, inv_msin = _dft_bases(spec.fft_size)
    frames_time = ops.add(ops.matmul(spec.real, Tensor(inv_cos)),
                          ops.matmul(spec.imag, Tensor(inv_msin)))
    synth = ops.mul(frames_time, Tensor(hann_window(spec.fft_size)))
    idx = _frame_indices(spec.orig_len, spec.fft_size, spec.hop)
    ola = ops.scatter_add(synth, idx, spec.orig_len + spec.fft_size)
    cropped = ops.take(ola, np.arange(pad, pad + spec.orig_len))
    return ops.div(cropped, Tensor(region))


def istft_waveform(spec: Spectrogram, sample_rate: int) -> Waveform:
    return Waveform(istft(spec).data.copy(), sample_rate)


def magnitude(spec: Spectrogram) -> Tensor:
    return ops.sqrt(ops.add(ops.square(spec.real), ops.square(spec.imag)))


def mix(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Add noise scaled so that 10*log10(E_clean / E_noise) equals snr_db.

    snr_db is capped to +/-100 dB; at the cap the output is effectively the
    clean signal (or the noise-dominated one).
    """
    if len(clean) != len(noise):
        raise ShapeError(f"mix: lengths differ, {len(clean)} vs {len(noise)}")
    if clean.sample_rate != noise.sample_rate:
        raise DomainError(f"mix: sample rates differ, {clean.sample_rate} vs "
                          f"{noise.sample_rate}")
    e_clean = float(np.sum(clean.samples ** 2))
    e_noise = float(np.sum(noise.samples ** 2))
    if e_clean <= 0.0:
        raise DomainError("mix: clean signal has zero energy")
    if e_noise <= 0.0:
        raise DomainError("mix: noise signal has zero energy")
    snr_db = float(np.clip(snr_db, -SNR_CAP_DB, SNR_CAP_DB))
    gain = math.sqrt(e_clean / (e_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + gain * noise.samples, clean.sample_rate)


def measured_snr_db(clean: Waveform, noisy: Waveform) -> float:
    """Energy-ratio SNR of an additive mixture (independent of mix())."""
    residual = noisy.samples - clean.samples
    e_res = float(np.sum(residual ** 2))
    e_clean = float(np.sum(clean.samples ** 2))
    if e_clean <= 0 or e_res <= 0:
        raise DomainError("measured_snr_db needs nonzero clean and residual energy")
    return 10.0 * math.log10(e_clean / e_res)


def recombine_with_noisy_phase(clean_mag: Tensor, noisy: Spectrogram) -> Spectrogram:
    """Attach the noisy phase to an estimated magnitude.

    out = clean_mag * (noisy_real, noisy_imag) / max(|noisy|, 1e-12).
    """
    clean_mag = ops.as_tensor(clean_mag)
    if clean_mag.shape != noisy.real.shape:
        raise ShapeError(f"recombine: magnitude shape {clean_mag.shape} does not match "
                         f"spectrogram {noisy.real.shape}")
    mag = ops.clamp_min(magnitude(noisy), MAGNITUDE_FLOOR)
    return Spectrogram(
        real=ops.mul(clean_mag, ops.div(noisy.real, mag)),
        imag=ops.mul(clean_mag, ops.div(noisy.imag, mag)),
        fft_size=noisy.fft_size,
        hop=noisy.hop,
        window_kind=noisy.window_kind,
        orig_len=noisy.orig_len,
    )
