"""Real masking encoder: a post-norm Transformer stack predicting a
magnitude mask from a noisy magnitude spectrogram.

INPUT [B, T, F] -> affine F->D -> L encoder layers -> affine D->F ->
sigmoid -> mask in (0, 1), applied multiplicatively to the noisy
magnitude.  The sigmoid keeps the estimate bounded by the input per
time-frequency bin (suppression-only); a linear mask head is available for
ablations.  No positional encoding is added by default: position enters
only through the distance-dependent attention schemes, leaving the vanilla
scheme deliberately position-blind (sinusoidal PE is a config flag).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as ops
from .attention import AttentionParams, AttentionScheme, gsa_attention, xavier_uniform
from .errors import DomainError, ShapeError
from .tensor import Tensor


class Topology(enum.Enum):
    REAL_ENCODER = "real"
    COMPLEX_DECODER = "complex"

    @classmethod
    def from_name(cls, name: str) -> "Topology":
        key = name.strip().lower()
        for member in cls:
            if key in (member.value, member.name.lower()):
                return member
        raise DomainError(f"unknown topology {name!r}; expected real|complex")


@dataclass
class ModelSpec:
    """Architecture description shared by both network topologies.

    Desk-scale defaults; the full-scale configuration this code is sized
    down from is 10 encoder layers (6 for the complex stack) at model
    width 1024 -- see REFERENCE_REAL / REFERENCE_COMPLEX.
    """

    num_layers: int = 2
    model_dim: int = 64
    heads: int = 4
    ff_dim: int = 128
    input_dim: int = 129
    scheme: AttentionScheme = AttentionScheme.GAUSSIAN_WEIGHTED
    topology: Topology = Topology.REAL_ENCODER
    sigma_init: float = 8.0
    sigma_per_head: bool = False
    # None -> per-scheme default (abs only for gaussian_weighted)
    abs_softmax: Optional[bool] = None
    mask_activation: str = "sigmoid"  # sigmoid | linear
    complex_mask_signed: bool = False
    positional_encoding: bool = False

    def __post_init__(self):
        if self.num_layers < 1:
            raise DomainError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.input_dim < 1:
            raise DomainError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.model_dim % self.heads != 0:
            raise ShapeError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.ff_dim < self.model_dim:
            raise DomainError(f"ff_dim {self.ff_dim} must be >= model_dim {self.model_dim}")
        if self.mask_activation not in ("sigmoid", "linear"):
            raise DomainError(f"mask_activation must be sigmoid|linear, got {self.mask_activation}")


REFERENCE_REAL = dict(num_layers=10, model_dim=1024)
REFERENCE_COMPLEX = dict(num_layers=6, model_dim=1024)


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    ff1_w: Tensor
    ff1_b: Tensor
    ff2_w: Tensor
    ff2_b: Tensor
    norm1_gain: Tensor
    norm1_bias: Tensor
    norm2_gain: Tensor
    norm2_bias: Tensor

    @classmethod
    def create(cls, spec: ModelSpec, rng: np.random.Generator) -> "EncoderLayerParams":
        d, dff = spec.model_dim, spec.ff_dim
        return cls(
            attn=AttentionParams.create(d, spec.heads, spec.scheme, rng,
                                        sigma_init=spec.sigma_init,
                                        sigma_per_head=spec.sigma_per_head),
            ff1_w=Tensor(xavier_uniform((d, dff), rng), requires_grad=True),
            ff1_b=Tensor(np.zeros(dff), requires_grad=True),
            ff2_w=Tensor(xavier_uniform((dff, d), rng), requires_grad=True),
            ff2_b=Tensor(np.zeros(d), requires_grad=True),
            norm1_gain=Tensor(np.ones(d), requires_grad=True),
            norm1_bias=Tensor(np.zeros(d), requires_grad=True),
            norm2_gain=Tensor(np.ones(d), requires_grad=True),
            norm2_bias=Tensor(np.zeros(d), requires_grad=True),
        )

    def named(self) -> dict[str, Tensor]:
        out = {f"attn.{k}": v for k, v in self.attn.named().items()}
        out.update({
            "ff1.w": self.ff1_w, "ff1.b": self.ff1_b,
            "ff2.w": self.ff2_w, "ff2.b": self.ff2_b,
            "norm1.gain": self.norm1_gain, "norm1.bias": self.norm1_bias,
            "norm2.gain": self.norm2_gain, "norm2.bias": self.norm2_bias,
        })
        return out


def encoder_layer(h: Tensor, p: EncoderLayerParams, spec: ModelSpec) -> Tensor:
    """Post-norm encoder layer: residual attention, residual feed-forward."""
    attn_out = gsa_attention(h, p.attn, spec.scheme, spec.abs_softmax)
    x1 = ops.layer_norm(ops.add(h, attn_out), p.norm1_gain, p.norm1_bias)
    hidden = ops.relu(ops.add(ops.matmul(x1, p.ff1_w), p.ff1_b))
    ff_out = ops.add(ops.matmul(hidden, p.ff2_w), p.ff2_b)
    return ops.layer_norm(ops.add(x1, ff_out), p.norm2_gain, p.norm2_bias)


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    position = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = position / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class RealMaskNet:
    """Magnitude-mask denoiser: F->D projection, encoder stack, mask head."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        if spec.topology is not Topology.REAL_ENCODER:
            raise DomainError(f"RealMaskNet needs a real topology spec, got {spec.topology}")
        self.spec = spec
        f, d = spec.input_dim, spec.model_dim
        self.in_w = Tensor(xavier_uniform((f, d), rng), requires_grad=True)
        self.in_b = Tensor(np.zeros(d), requires_grad=True)
        self.layers = [EncoderLayerParams.create(spec, rng) for _ in range(spec.num_layers)]
        self.out_w = Tensor(xavier_uniform((d, f), rng), requires_grad=True)
        self.out_b = Tensor(np.zeros(f), requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        params = {"in_proj.w": self.in_w, "in_proj.b": self.in_b}
        for i, layer in enumerate(self.layers):
            params.update({f"layers.{i}.{k}": v for k, v in layer.named().items()})
        params.update({"out_proj.w": self.out_w, "out_proj.b": self.out_b})
        return params

    def sigma_values(self) -> list[np.ndarray]:
        """Effective sigma per layer (empty for the vanilla scheme)."""
        out = []
        for layer in self.layers:
            eff = layer.attn.effective_sigma()
            if eff is not None:
                out.append(eff.data.copy())
        return out

    def predict_mask(self, noisy_mag) -> Tensor:
        noisy_mag = ops.as_tensor(noisy_mag)
        if noisy_mag.ndim != 3:
            raise ShapeError(f"predict_mask expects [B, T, F], got {noisy_mag.shape}")
        if noisy_mag.shape[-1] != self.spec.input_dim:
            raise ShapeError(f"input has {noisy_mag.shape[-1]} bins, model expects "
                             f"{self.spec.input_dim}")
        if np.any(noisy_mag.data < 0.0):
            raise DomainError("predict_mask: magnitudes must be nonnegative")
        h = ops.add(ops.matmul(noisy_mag, self.in_w), self.in_b)
        if self.spec.positional_encoding:
            h = ops.add(h, Tensor(sinusoidal_encoding(noisy_mag.shape[1], self.spec.model_dim)))
        for layer in self.layers:
            h = encoder_layer(h, layer, self.spec)
        logits = ops.add(ops.matmul(h, self.out_w), self.out_b)
        if self.spec.mask_activation == "sigmoid":
            return ops.sigmoid(logits)
        return logits


def apply_mask(noisy_mag: Tensor, mask: Tensor) -> Tensor:
    """Estimated clean magnitude: elementwise mask * noisy magnitude."""
    noisy_mag, mask = ops.as_tensor(noisy_mag), ops.as_tensor(mask)
    if noisy_mag.shape != mask.shape:
        raise ShapeError(f"apply_mask: shapes differ, {noisy_mag.shape} vs {mask.shape}")
    return ops.mul(mask, noisy_mag)
