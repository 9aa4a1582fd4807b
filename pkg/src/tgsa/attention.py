"""Multi-head self-attention with interchangeable score schemes.

Three schemes share one code path and differ only in how the scaled
query-key score matrix C = QK^T/sqrt(d) is turned into pre-softmax scores:

* vanilla            S = C
* additive_bias      S = C - (i-j)^2 / sigma^2      (can flip score signs)
* gaussian_weighted  S = G o C, G[i,j] = exp(-(i-j)^2 / sigma^2)

The Gaussian weighting rescales each score by a strictly positive factor,
so sign(S) == sign(C) entrywise, and the diagonal of G is exactly 1.  For
the gaussian_weighted scheme the softmax is applied to |S| so that strong
negative correlations attract as much attention as positive ones; the
other schemes feed signed scores to the softmax by default.  All defaults
are overridable for ablations.

sigma is one trainable scalar per attention block (optionally one per
head), kept positive through a softplus parameterization.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as ops
from .errors import DomainError, ShapeError
from .gradcheck import GradCheckReport, check_gradients
from .tensor import Tensor

SIGMA_MIN = 0.1


class AttentionScheme(enum.Enum):
    VANILLA = "vanilla"
    ADDITIVE_BIAS = "additive_bias"
    GAUSSIAN_WEIGHTED = "gaussian_weighted"

    @classmethod
    def from_name(cls, name: str) -> "AttentionScheme":
        key = name.strip().lower().replace("-", "_")
        aliases = {
            "vanilla": cls.VANILLA, "ot": cls.VANILLA, "o_t": cls.VANILLA,
            "additive_bias": cls.ADDITIVE_BIAS, "bias": cls.ADDITIVE_BIAS,
            "tab": cls.ADDITIVE_BIAS, "t_ab": cls.ADDITIVE_BIAS,
            "gaussian_weighted": cls.GAUSSIAN_WEIGHTED, "gaussian": cls.GAUSSIAN_WEIGHTED,
            "gsa": cls.GAUSSIAN_WEIGHTED, "t_gsa": cls.GAUSSIAN_WEIGHTED,
        }
        if key not in aliases:
            raise DomainError(f"unknown attention scheme {name!r}; "
                              f"expected one of vanilla|additive_bias|gaussian_weighted")
        return aliases[key]

    @property
    def uses_sigma(self) -> bool:
        return self is not AttentionScheme.VANILLA

    @property
    def abs_default(self) -> bool:
        # abs-before-softmax is part of the gaussian-weighted scheme; the
        # other two feed signed scores to the softmax unless overridden.
        return self is AttentionScheme.GAUSSIAN_WEIGHTED


def softplus_inverse(y: float) -> float:
    """x such that softplus(x) == y, for y > 0."""
    if y <= 0:
        raise DomainError(f"softplus_inverse needs a positive target, got {y}")
    if y > 30.0:
        return y
    return y + math.log(-math.expm1(-y))


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


@dataclass
class AttentionParams:
    """Projection weights plus the optional distance-scale parameter.

    sigma_raw is unconstrained; the effective scale is
    softplus(sigma_raw) + SIGMA_MIN, so it stays positive under any update.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    sigma_raw: Optional[Tensor]
    heads: int
    model_dim: int

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @classmethod
    def create(cls, model_dim: int, heads: int, scheme: AttentionScheme,
               rng: np.random.Generator, sigma_init: float = 8.0,
               sigma_per_head: bool = False) -> "AttentionParams":
        if model_dim % heads != 0:
            raise ShapeError(f"model_dim {model_dim} not divisible by heads {heads}")
        shape = (model_dim, model_dim)
        sigma_raw = None
        if scheme.uses_sigma:
            raw0 = softplus_inverse(max(sigma_init - SIGMA_MIN, 1e-6))
            n_sigma = heads if sigma_per_head else 1
            sigma_raw = Tensor(np.full(n_sigma, raw0), requires_grad=True)
        return cls(
            w_q=Tensor(xavier_uniform(shape, rng), requires_grad=True),
            w_k=Tensor(xavier_uniform(shape, rng), requires_grad=True),
            w_v=Tensor(xavier_uniform(shape, rng), requires_grad=True),
            w_o=Tensor(xavier_uniform(shape, rng), requires_grad=True),
            sigma_raw=sigma_raw,
            heads=heads,
            model_dim=model_dim,
        )

    def effective_sigma(self) -> Optional[Tensor]:
        if self.sigma_raw is None:
            return None
        return ops.add(ops.softplus(self.sigma_raw), SIGMA_MIN)

    def named(self) -> dict[str, Tensor]:
        out = {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o}
        if self.sigma_raw is not None:
            out["sigma_raw"] = self.sigma_raw
        return out


def squared_distance_matrix(length: int) -> np.ndarray:
    """(i - j)^2 over a length x length index grid."""
    idx = np.arange(length, dtype=np.float64)
    diff = idx[:, None] - idx[None, :]
    return diff * diff


def gaussian_weight_matrix(length: int, sigma) -> Tensor:
    """G[i, j] = exp(-(i - j)^2 / sigma^2); differentiable w.r.t. sigma.

    The diagonal is exactly 1.  A per-head sigma of shape (E,) yields a
    stacked (E, length, length) result.
    """
    if length < 1:
        raise DomainError(f"gaussian_weight_matrix: length must be >= 1, got {length}")
    sigma = ops.as_tensor(sigma)
    if np.any(sigma.data <= 0.0):
        raise DomainError(f"gaussian_weight_matrix: sigma must be positive, got {sigma.data}")
    d2 = Tensor(squared_distance_matrix(length))
    sig2 = ops.square(sigma)
    if sigma.data.size > 1:
        sig2 = ops.reshape(sig2, (sigma.data.size, 1, 1))
    return ops.exp(ops.neg(ops.div(d2, sig2)))


def _additive_bias_matrix(length: int, sigma) -> Tensor:
    """-(i - j)^2 / sigma^2: the log of the Gaussian weight, used additively."""
    sigma = ops.as_tensor(sigma)
    if np.any(sigma.data <= 0.0):
        raise DomainError(f"additive bias: sigma must be positive, got {sigma.data}")
    d2 = Tensor(squared_distance_matrix(length))
    sig2 = ops.square(sigma)
    if sigma.data.size > 1:
        sig2 = ops.reshape(sig2, (sigma.data.size, 1, 1))
    return ops.neg(ops.div(d2, sig2))


def attention_scores(q: Tensor, k: Tensor, scheme: AttentionScheme,
                     sigma=None) -> Tensor:
    """Pre-softmax scores [B, E, T, T] from per-head queries/keys [B, E, T, d]."""
    if q.shape != k.shape:
        raise ShapeError(f"attention_scores: query/key shapes differ, {q.shape} vs {k.shape}")
    d = q.shape[-1]
    c = ops.scale(ops.matmul(q, ops.transpose_last2(k)), 1.0 / math.sqrt(d))
    if scheme is AttentionScheme.VANILLA:
        return c
    if sigma is None:
        raise DomainError(f"{scheme.value} scores need a sigma parameter")
    t = q.shape[-2]
    if scheme is AttentionScheme.GAUSSIAN_WEIGHTED:
        return ops.mul(gaussian_weight_matrix(t, sigma), c)
    return ops.add(c, _additive_bias_matrix(t, sigma))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[B, T, D] -> [B, E, T, D/E]."""
    b, t, d = x.shape
    return ops.permute(ops.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[B, E, T, d] -> [B, T, E*d]."""
    b, e, t, d = x.shape
    return ops.reshape(ops.permute(x, (0, 2, 1, 3)), (b, t, e * d))


def multi_head_attention(query_src: Tensor, kv_src: Tensor, params: AttentionParams,
                         scheme: AttentionScheme,
                         abs_before_softmax: Optional[bool] = None) -> Tensor:
    """Full attention block: project, score per scheme, weight, recombine.

    `query_src` and `kv_src` are both [B, T, D]; they coincide for
    self-attention and differ for the cross-path blocks of the complex
    network.
    """
    if abs_before_softmax is None:
        abs_before_softmax = scheme.abs_default
    q = split_heads(ops.matmul(query_src, params.w_q), params.heads)
    k = split_heads(ops.matmul(kv_src, params.w_k), params.heads)
    v = split_heads(ops.matmul(kv_src, params.w_v), params.heads)
    sigma = params.effective_sigma() if scheme.uses_sigma else None
    scores = attention_scores(q, k, scheme, sigma)
    weights = ops.softmax_rows(ops.abs_elem(scores) if abs_before_softmax else scores)
    heads_out = ops.matmul(weights, v)
    return ops.matmul(merge_heads(heads_out), params.w_o)


def gsa_attention(h: Tensor, params: AttentionParams, scheme: AttentionScheme,
                  abs_before_softmax: Optional[bool] = None) -> Tensor:
    """Self-attention over [B, T, D] hidden states."""
    return multi_head_attention(h, h, params, scheme, abs_before_softmax)


def sigma_gradient_check(params: AttentionParams, batch: Tensor,
                         scheme: AttentionScheme = AttentionScheme.GAUSSIAN_WEIGHTED,
                         loss_fn=None, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Finite-difference check of d(loss)/d(sigma_raw) on one batch.

    The default loss is the sum of squared attention outputs.  The report
    lists analytic vs numeric values for any failing entry.
    """
    if not scheme.uses_sigma:
        raise DomainError(f"scheme {scheme.value} has no sigma parameter")
    if params.sigma_raw is None:
        raise DomainError("attention parameters carry no sigma_raw")
    if loss_fn is None:
        def loss_fn():
            return ops.sum(ops.square(gsa_attention(batch, params, scheme)))
    return check_gradients(loss_fn, {"sigma_raw": params.sigma_raw}, h=h, tol=tol,
                           max_entries_per_param=params.sigma_raw.size)
