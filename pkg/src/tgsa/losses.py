"""Time-domain training losses and evaluation metrics.

The training loss is negative SDR with epsilon regularization,

    loss = -10 * log10((||ref||^2 + eps) / (||ref - est||^2 + eps)),

optionally combined with a pluggable perceptual term:
combined = sdr + alpha * hook(est, ref).  No perceptual implementation
ships here; the hook defaults to absent and the combined loss then equals
the SDR term.  A scale-invariant SDR variant (projection of the estimate
onto the reference) is available behind a flag.

Evaluation metrics are plain numpy: SDR capped at +/-60 dB, and segmental
SNR averaged over fixed-length frames with per-frame clamping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as ops
from .errors import DomainError, ShapeError
from .tensor import Tensor

LOG10 = math.log(10.0)
SDR_EPS = 1e-8
SDR_CAP_DB = 60.0
SSNR_FRAME = 256
SSNR_CLAMP_DB = (-10.0, 35.0)
SSNR_SILENCE_FLOOR = 1e-10


@dataclass
class LossReport:
    """Per-batch loss summary; combined == sdr + alpha * (pesq or 0)."""

    sdr_loss: float
    pesq_hook_loss: Optional[float]
    combined: float
    alpha: float
    grad_norm: Optional[float] = None

    def as_kv(self) -> str:
        fields = [f"sdr_loss={self.sdr_loss:.6f}"]
        if self.pesq_hook_loss is not None:
            fields.append(f"pesq_hook_loss={self.pesq_hook_loss:.6f}")
        else:
            fields.append("pesq_hook=inactive")
        fields.append(f"combined={self.combined:.6f}")
        fields.append(f"alpha={self.alpha}")
        if self.grad_norm is not None:
            fields.append(f"grad_norm={self.grad_norm:.6f}")
        return " ".join(fields)


@dataclass
class EvalScores:
    sdr_db: float
    ssnr_db: float

    def as_kv(self) -> str:
        return f"sdr_db={self.sdr_db:.4f} ssnr_db={self.ssnr_db:.4f}"


def _check_pair(est: Tensor, ref: Tensor) -> tuple[Tensor, Tensor]:
    est, ref = ops.as_tensor(est), ops.as_tensor(ref)
    if est.shape != ref.shape:
        raise ShapeError(f"signal lengths differ: {est.shape} vs {ref.shape}")
    if float(np.sum(ref.data ** 2)) <= 0.0:
        raise DomainError("reference signal has zero energy")
    return est, ref


def sdr_loss(est, ref, eps: float = SDR_EPS, scale_invariant: bool = False) -> Tensor:
    """Negative SDR as a differentiable scalar; lower is better."""
    est, ref = _check_pair(est, ref)
    if scale_invariant:
        # Project est onto ref; compare the target component to the residual.
        dot = ops.sum(ops.mul(est, ref))
        ref_energy = ops.add(ops.sum(ops.square(ref)), eps)
        target = ops.mul(ops.div(dot, ref_energy), ref)
        num = ops.add(ops.sum(ops.square(target)), eps)
        den = ops.add(ops.sum(ops.square(ops.sub(est, target))), eps)
    else:
        num = ops.add(ops.sum(ops.square(ref)), eps)
        den = ops.add(ops.sum(ops.square(ops.sub(ref, est))), eps)
    return ops.scale(ops.sub(ops.log(den), ops.log(num)), 10.0 / LOG10)


def combined_loss(est, ref, alpha: float = 3.2,
                  pesq_hook: Optional[Callable[[Tensor, Tensor], Tensor]] = None,
                  scale_invariant: bool = False) -> tuple[Tensor, LossReport]:
    """SDR loss plus alpha times an optional perceptual hook term.

    Returns the scalar loss tensor (for backward) and a LossReport with the
    numbers; the hook term is simply absent when no hook is given.
    """
    if alpha < 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")
    sdr = sdr_loss(est, ref, scale_invariant=scale_invariant)
    if pesq_hook is None:
        report = LossReport(sdr.item(), None, sdr.item(), alpha)
        return sdr, report
    hook_term = ops.as_tensor(pesq_hook(est, ref))
    total = ops.add(sdr, ops.scale(hook_term, alpha))
    report = LossReport(sdr.item(), hook_term.item(), total.item(), alpha)
    return total, report


def eval_sdr(est: np.ndarray, ref: np.ndarray) -> float:
    """Evaluation SDR in dB, capped at +/-60."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ShapeError(f"signal lengths differ: {est.shape} vs {ref.shape}")
    e_ref = float(np.sum(ref ** 2))
    if e_ref <= 0.0:
        raise DomainError("reference signal has zero energy")
    e_err = float(np.sum((ref - est) ** 2))
    if e_err == 0.0:
        return SDR_CAP_DB
    return float(np.clip(10.0 * math.log10(e_ref / e_err), -SDR_CAP_DB, SDR_CAP_DB))


def eval_ssnr(est: np.ndarray, ref: np.ndarray, frame: int = SSNR_FRAME,
              clamp: tuple[float, float] = SSNR_CLAMP_DB) -> float:
    """Segmental SNR: mean over full frames of the clamped per-frame SDR.

    Frames whose reference energy falls below the silence floor are skipped;
    an all-silent reference is a domain error.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ShapeError(f"signal lengths differ: {est.shape} vs {ref.shape}")
    if frame < 1:
        raise DomainError(f"frame must be >= 1, got {frame}")
    lo, hi = clamp
    values = []
    for start in range(0, len(ref) - frame + 1, frame):
        r = ref[start:start + frame]
        e_ref = float(np.sum(r ** 2))
        if e_ref < SSNR_SILENCE_FLOOR:
            continue
        e_err = float(np.sum((r - est[start:start + frame]) ** 2))
        snr = hi if e_err == 0.0 else 10.0 * math.log10(e_ref / e_err)
        values.append(float(np.clip(snr, lo, hi)))
    if not values:
        raise DomainError("eval_ssnr: every frame is silent")
    return float(np.mean(values))
