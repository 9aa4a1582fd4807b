"""Dual-path complex denoiser.

Two coupled real-valued paths carry the real and imaginary planes of the
noisy spectrum.  Each layer runs per-path self-attention, then a pair of
cross-path attention blocks (the left block queries from the normalized
real path and reads keys/values from the normalized imaginary path; the
right block mirrors this), then a complex fully-connected map applied with
standard complex arithmetic on the (real, imag) pair.  No causal masking
or autoregression is involved; the stack is encoder-shaped.

The mask head is linear on both paths: the imaginary mask component must
be free to take either sign to rotate phase.  The mask application uses
the magnitudes of the input planes,

    X_r = |Y_r| * M_r - |Y_i| * M_i
    X_i = |Y_r| * M_i + |Y_i| * M_r

which discards the input component signs by construction; a signed
variant (Y_r, Y_i used directly) is available behind
``ModelSpec.complex_mask_signed`` for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as ops
from .attention import AttentionParams, multi_head_attention, xavier_uniform
from .encoder import ModelSpec, Topology
from .errors import DomainError, ShapeError
from .tensor import Tensor


@dataclass
class AttnSubBlock:
    """One attention block plus the layer norm that follows it."""

    attn: AttentionParams
    norm_gain: Tensor
    norm_bias: Tensor

    @classmethod
    def create(cls, spec: ModelSpec, rng: np.random.Generator) -> "AttnSubBlock":
        d = spec.model_dim
        return cls(
            attn=AttentionParams.create(d, spec.heads, spec.scheme, rng,
                                        sigma_init=spec.sigma_init,
                                        sigma_per_head=spec.sigma_per_head),
            norm_gain=Tensor(np.ones(d), requires_grad=True),
            norm_bias=Tensor(np.zeros(d), requires_grad=True),
        )

    def named(self) -> dict[str, Tensor]:
        out = {k: v for k, v in self.attn.named().items()}
        out["norm.gain"] = self.norm_gain
        out["norm.bias"] = self.norm_bias
        return out


@dataclass
class ComplexLayerParams:
    real: AttnSubBlock
    imag: AttnSubBlock
    cross_l: AttnSubBlock
    cross_r: AttnSubBlock
    cfc_w_r: Tensor
    cfc_w_i: Tensor
    cfc_b_r: Tensor
    cfc_b_i: Tensor

    @classmethod
    def create(cls, spec: ModelSpec, rng: np.random.Generator) -> "ComplexLayerParams":
        d = spec.model_dim
        return cls(
            real=AttnSubBlock.create(spec, rng),
            imag=AttnSubBlock.create(spec, rng),
            cross_l=AttnSubBlock.create(spec, rng),
            cross_r=AttnSubBlock.create(spec, rng),
            cfc_w_r=Tensor(xavier_uniform((d, d), rng), requires_grad=True),
            cfc_w_i=Tensor(xavier_uniform((d, d), rng), requires_grad=True),
            cfc_b_r=Tensor(np.zeros(d), requires_grad=True),
            cfc_b_i=Tensor(np.zeros(d), requires_grad=True),
        )

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for group, block in (("real", self.real), ("imag", self.imag),
                             ("cross_l", self.cross_l), ("cross_r", self.cross_r)):
            out.update({f"{group}.{k}": v for k, v in block.named().items()})
        out.update({"cfc.w_r": self.cfc_w_r, "cfc.w_i": self.cfc_w_i,
                    "cfc.b_r": self.cfc_b_r, "cfc.b_i": self.cfc_b_i})
        return out


def complex_fc(x_r: Tensor, x_i: Tensor, w_r: Tensor, w_i: Tensor,
               b_r: Tensor, b_i: Tensor) -> tuple[Tensor, Tensor]:
    """(x_r + i x_i) @ (w_r + i w_i) + (b_r + i b_i), on real pairs."""
    if x_r.shape != x_i.shape:
        raise ShapeError(f"complex_fc: path shapes differ, {x_r.shape} vs {x_i.shape}")
    y_r = ops.add(ops.sub(ops.matmul(x_r, w_r), ops.matmul(x_i, w_i)), b_r)
    y_i = ops.add(ops.add(ops.matmul(x_r, w_i), ops.matmul(x_i, w_r)), b_i)
    return y_r, y_i


def complex_layer(h_r: Tensor, h_i: Tensor, p: ComplexLayerParams,
                  spec: ModelSpec) -> tuple[Tensor, Tensor]:
    """One dual-path layer: per-path attention, cross mixing, complex FC."""
    if h_r.shape != h_i.shape:
        raise ShapeError(f"complex_layer: path shapes differ, {h_r.shape} vs {h_i.shape}")
    x1_r = ops.layer_norm(
        ops.add(h_r, multi_head_attention(h_r, h_r, p.real.attn, spec.scheme, spec.abs_softmax)),
        p.real.norm_gain, p.real.norm_bias)
    x1_i = ops.layer_norm(
        ops.add(h_i, multi_head_attention(h_i, h_i, p.imag.attn, spec.scheme, spec.abs_softmax)),
        p.imag.norm_gain, p.imag.norm_bias)

    cross_left = multi_head_attention(x1_r, x1_i, p.cross_l.attn, spec.scheme, spec.abs_softmax)
    cross_right = multi_head_attention(x1_i, x1_r, p.cross_r.attn, spec.scheme, spec.abs_softmax)
    x2_r = ops.layer_norm(ops.add(x1_r, cross_left), p.cross_l.norm_gain, p.cross_l.norm_bias)
    x2_i = ops.layer_norm(ops.add(x1_i, cross_right), p.cross_r.norm_gain, p.cross_r.norm_bias)

    return complex_fc(x2_r, x2_i, p.cfc_w_r, p.cfc_w_i, p.cfc_b_r, p.cfc_b_i)


@dataclass
class ComplexMask:
    m_r: Tensor
    m_i: Tensor


def apply_complex_mask(y_r, y_i, mask: ComplexMask, signed: bool = False) -> tuple[Tensor, Tensor]:
    """Complex masking on the (real, imag) planes of the noisy spectrum.

    Default uses |Y_r| and |Y_i|; `signed` switches to the raw planes,
    which is the ablation variant (a textbook complex product).
    """
    y_r, y_i = ops.as_tensor(y_r), ops.as_tensor(y_i)
    if y_r.shape != y_i.shape or y_r.shape != mask.m_r.shape or mask.m_r.shape != mask.m_i.shape:
        raise ShapeError(
            f"apply_complex_mask: shapes differ, Y {y_r.shape}/{y_i.shape}, "
            f"M {mask.m_r.shape}/{mask.m_i.shape}")
    a_r = y_r if signed else ops.abs_elem(y_r)
    a_i = y_i if signed else ops.abs_elem(y_i)
    x_r = ops.sub(ops.mul(a_r, mask.m_r), ops.mul(a_i, mask.m_i))
    x_i = ops.add(ops.mul(a_r, mask.m_i), ops.mul(a_i, mask.m_r))
    return x_r, x_i


class ComplexMaskNet:
    """Two-input two-output denoiser predicting an unbounded complex mask."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        if spec.topology is not Topology.COMPLEX_DECODER:
            raise DomainError(f"ComplexMaskNet needs a complex topology spec, got {spec.topology}")
        self.spec = spec
        f, d = spec.input_dim, spec.model_dim
        self.in_r_w = Tensor(xavier_uniform((f, d), rng), requires_grad=True)
        self.in_r_b = Tensor(np.zeros(d), requires_grad=True)
        self.in_i_w = Tensor(xavier_uniform((f, d), rng), requires_grad=True)
        self.in_i_b = Tensor(np.zeros(d), requires_grad=True)
        self.layers = [ComplexLayerParams.create(spec, rng) for _ in range(spec.num_layers)]
        self.out_r_w = Tensor(xavier_uniform((d, f), rng), requires_grad=True)
        self.out_r_b = Tensor(np.zeros(f), requires_grad=True)
        self.out_i_w = Tensor(xavier_uniform((d, f), rng), requires_grad=True)
        self.out_i_b = Tensor(np.zeros(f), requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        params = {
            "complex.in_r.w": self.in_r_w, "complex.in_r.b": self.in_r_b,
            "complex.in_i.w": self.in_i_w, "complex.in_i.b": self.in_i_b,
        }
        for i, layer in enumerate(self.layers):
            params.update({f"complex.layers.{i}.{k}": v for k, v in layer.named().items()})
        params.update({
            "complex.out_r.w": self.out_r_w, "complex.out_r.b": self.out_r_b,
            "complex.out_i.w": self.out_i_w, "complex.out_i.b": self.out_i_b,
        })
        return params

    def sigma_values(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            for block in (layer.real, layer.imag, layer.cross_l, layer.cross_r):
                eff = block.attn.effective_sigma()
                if eff is not None:
                    out.append(eff.data.copy())
        return out

    def predict_complex_mask(self, y_r, y_i) -> ComplexMask:
        y_r, y_i = ops.as_tensor(y_r), ops.as_tensor(y_i)
        if y_r.ndim != 3 or y_r.shape != y_i.shape:
            raise ShapeError(f"predict_complex_mask expects matching [B, T, F] inputs, "
                             f"got {y_r.shape} and {y_i.shape}")
        if y_r.shape[-1] != self.spec.input_dim:
            raise ShapeError(f"input has {y_r.shape[-1]} bins, model expects "
                             f"{self.spec.input_dim}")
        h_r = ops.add(ops.matmul(y_r, self.in_r_w), self.in_r_b)
        h_i = ops.add(ops.matmul(y_i, self.in_i_w), self.in_i_b)
        for layer in self.layers:
            h_r, h_i = complex_layer(h_r, h_i, layer, self.spec)
        m_r = ops.add(ops.matmul(h_r, self.out_r_w), self.out_r_b)
        m_i = ops.add(ops.matmul(h_i, self.out_i_w), self.out_i_b)
        return ComplexMask(m_r=m_r, m_i=m_i)
