"""Training loop: Adam with global-norm gradient clipping, per-step loss
logging, best-checkpoint selection by validation SDR.

All stochasticity (batch order) comes from one seeded generator, and the
forward/backward path is single-threaded, so a fixed config reproduces the
loss trajectory bitwise.  Batches are processed one utterance at a time
with the per-utterance losses averaged, which is equivalent to stacked
batching and tolerates mixed utterance lengths.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import tensor as ops
from .attention import AttentionScheme
from .checkpoint import load_checkpoint, save_checkpoint
from .complex_net import ComplexMask, ComplexMaskNet, apply_complex_mask
from .config import RunConfig
from .dsp import Spectrogram, istft, magnitude, stft
from .encoder import ModelSpec, RealMaskNet, Topology, apply_mask
from .errors import ConfigError
from .losses import LossReport, eval_sdr, eval_ssnr, sdr_loss
from .tensor import Tensor
from .wavio import read_wav


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, tensor_name: str):
        super().__init__(f"non-finite loss at step {step} "
                         f"(first offending tensor: {tensor_name})")
        self.step = step
        self.tensor_name = tensor_name


@dataclass
class Utterance:
    uid: str
    clean: np.ndarray
    noisy: np.ndarray
    snr_db: float
    sample_rate: int


def load_dataset(manifest_path) -> list[Utterance]:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    utterances = []
    for line in manifest_path.read_text().splitlines()[1:]:
        if not line.strip():
            continue
        uid, clean_rel, noisy_rel, snr = line.split("\t")
        clean = read_wav(base / clean_rel)
        noisy = read_wav(base / noisy_rel)
        if clean.sample_rate != noisy.sample_rate:
            raise ConfigError(f"{uid}: clean/noisy sample rates differ")
        utterances.append(Utterance(uid, clean.samples, noisy.samples, float(snr),
                                    clean.sample_rate))
    if not utterances:
        raise ConfigError(f"empty dataset: {manifest_path}")
    return utterances


class Adam:
    """Adaptive-moment gradient descent over named parameters."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            t.data -= self.lr * (self.m[name] / bias1) / (np.sqrt(self.v[name] / bias2) + self.eps)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad ** 2))
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= factor
    return norm


def parameter_census(model) -> dict[str, int]:
    return {name: t.data.size for name, t in model.named_parameters().items()}


# ---------------------------------------------------------------------------
# model construction and checkpoints
# ---------------------------------------------------------------------------


def build_model_spec(cfg: RunConfig, num_frames: int) -> ModelSpec:
    scheme = AttentionScheme.from_name(cfg.model.scheme)
    sigma_init = cfg.model.sigma_init
    if sigma_init <= 0:
        sigma_init = max(num_frames / 4.0, 1.0)
    abs_map = {"default": None, "on": True, "off": False}
    if cfg.model.abs_softmax not in abs_map:
        raise ConfigError(f"model.abs_softmax must be default|on|off, got "
                          f"{cfg.model.abs_softmax!r}")
    return ModelSpec(
        num_layers=cfg.model.layers,
        model_dim=cfg.model.dim,
        heads=cfg.model.heads,
        ff_dim=cfg.model.ff_dim,
        input_dim=cfg.data.fft_size // 2 + 1,
        scheme=scheme,
        topology=Topology.from_name(cfg.model.topology),
        sigma_init=sigma_init,
        sigma_per_head=cfg.model.sigma_per_head,
        abs_softmax=abs_map[cfg.model.abs_softmax],
        mask_activation=cfg.model.mask_activation,
        complex_mask_signed=cfg.model.complex_mask_signed,
        positional_encoding=cfg.model.positional_encoding,
    )


def build_model(spec: ModelSpec, rng: np.random.Generator):
    if spec.topology is Topology.REAL_ENCODER:
        return RealMaskNet(spec, rng)
    return ComplexMaskNet(spec, rng)


def spec_meta(spec: ModelSpec, cfg: RunConfig) -> dict[str, str]:
    return {
        "topology": spec.topology.value,
        "scheme": spec.scheme.value,
        "num_layers": str(spec.num_layers),
        "model_dim": str(spec.model_dim),
        "heads": str(spec.heads),
        "ff_dim": str(spec.ff_dim),
        "input_dim": str(spec.input_dim),
        "sigma_init": repr(spec.sigma_init),
        "sigma_per_head": str(spec.sigma_per_head).lower(),
        "abs_softmax": {None: "default", True: "on", False: "off"}[spec.abs_softmax],
        "mask_activation": spec.mask_activation,
        "complex_mask_signed": str(spec.complex_mask_signed).lower(),
        "positional_encoding": str(spec.positional_encoding).lower(),
        "fft_size": str(cfg.data.fft_size),
        "hop": str(cfg.data.hop),
        "sample_rate": str(cfg.data.sample_rate),
    }


def spec_from_meta(meta: dict[str, str]) -> tuple[ModelSpec, dict[str, int]]:
    abs_map = {"default": None, "on": True, "off": False}
    spec = ModelSpec(
        num_layers=int(meta["num_layers"]),
        model_dim=int(meta["model_dim"]),
        heads=int(meta["heads"]),
        ff_dim=int(meta["ff_dim"]),
        input_dim=int(meta["input_dim"]),
        scheme=AttentionScheme.from_name(meta["scheme"]),
        topology=Topology.from_name(meta["topology"]),
        sigma_init=float(meta["sigma_init"]),
        sigma_per_head=meta["sigma_per_head"] == "true",
        abs_softmax=abs_map[meta["abs_softmax"]],
        mask_activation=meta["mask_activation"],
        complex_mask_signed=meta["complex_mask_signed"] == "true",
        positional_encoding=meta["positional_encoding"] == "true",
    )
    dsp_cfg = {"fft_size": int(meta["fft_size"]), "hop": int(meta["hop"]),
               "sample_rate": int(meta["sample_rate"])}
    return spec, dsp_cfg


def load_model(checkpoint_path):
    tensors, meta = load_checkpoint(checkpoint_path)
    spec, dsp_cfg = spec_from_meta(meta)
    model = build_model(spec, np.random.default_rng(0))
    params = model.named_parameters()
    missing = set(params) - set(tensors)
    extra = set(tensors) - set(params)
    if missing or extra:
        raise ConfigError(f"checkpoint does not match model: missing={sorted(missing)[:3]} "
                          f"extra={sorted(extra)[:3]}")
    for name, t in params.items():
        if t.data.shape != tensors[name].data.shape:
            raise ConfigError(f"checkpoint tensor {name}: shape "
                              f"{tensors[name].data.shape} vs model {t.data.shape}")
        t.data[...] = tensors[name].data
    return model, spec, dsp_cfg


# ---------------------------------------------------------------------------
# forward paths
# ---------------------------------------------------------------------------


def _estimate_spectrogram(model, noisy_spec: Spectrogram) -> Spectrogram:
    """Denoised spectrum for one utterance, differentiable through the mask."""
    t, f = noisy_spec.real.shape
    if isinstance(model, RealMaskNet):
        from .dsp import recombine_with_noisy_phase

        noisy_mag = magnitude(noisy_spec)
        mask = model.predict_mask(ops.reshape(noisy_mag, (1, t, f)))
        est_mag = apply_mask(noisy_mag, ops.reshape(mask, (t, f)))
        return recombine_with_noisy_phase(est_mag, noisy_spec)
    mask = model.predict_complex_mask(ops.reshape(noisy_spec.real, (1, t, f)),
                                      ops.reshape(noisy_spec.imag, (1, t, f)))
    x_r, x_i = apply_complex_mask(
        noisy_spec.real, noisy_spec.imag,
        ComplexMask(ops.reshape(mask.m_r, (t, f)), ops.reshape(mask.m_i, (t, f))),
        signed=model.spec.complex_mask_signed)
    return Spectrogram(x_r, x_i, noisy_spec.fft_size, noisy_spec.hop,
                       noisy_spec.window_kind, noisy_spec.orig_len)


def utterance_loss(model, utt: Utterance, cfg: RunConfig,
                   pesq_hook: Optional[Callable] = None) -> tuple[Tensor, float, Optional[float]]:
    """End-to-end loss for one utterance: mask -> resynthesis -> SDR."""
    noisy_spec = stft(utt.noisy, cfg.data.fft_size, cfg.data.hop)
    est = istft(_estimate_spectrogram(model, noisy_spec))
    ref = Tensor(utt.clean)
    sdr = sdr_loss(est, ref, scale_invariant=cfg.loss.si_sdr)
    if pesq_hook is None:
        return sdr, sdr.item(), None
    hook_term = ops.as_tensor(pesq_hook(est, ref))
    total = ops.add(sdr, ops.scale(hook_term, cfg.loss.alpha))
    return total, sdr.item(), hook_term.item()


def batch_loss(model, batch: list[Utterance], cfg: RunConfig,
               pesq_hook: Optional[Callable] = None) -> tuple[Tensor, LossReport]:
    totals, sdrs, hooks = [], [], []
    for utt in batch:
        total, sdr_value, hook_value = utterance_loss(model, utt, cfg, pesq_hook)
        totals.append(total)
        sdrs.append(sdr_value)
        if hook_value is not None:
            hooks.append(hook_value)
    loss = ops.scale(totals[0], 1.0 / len(totals))
    for t in totals[1:]:
        loss = ops.add(loss, ops.scale(t, 1.0 / len(totals)))
    sdr_mean = float(np.mean(sdrs))
    hook_mean = float(np.mean(hooks)) if hooks else None
    combined = sdr_mean + cfg.loss.alpha * hook_mean if hook_mean is not None else sdr_mean
    return loss, LossReport(sdr_mean, hook_mean, combined, cfg.loss.alpha)


def denoise_samples(model, noisy: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Inference path: returns the denoised time-domain samples."""
    with ops.no_grad():
        noisy_spec = stft(np.asarray(noisy, dtype=np.float64), fft_size, hop)
        return istft(_estimate_spectrogram(model, noisy_spec)).data.copy()


def evaluate_model(model, utterances: list[Utterance], fft_size: int, hop: int):
    """Mean SDR/SSNR of denoised outputs against the clean references."""
    sdrs, ssnrs = [], []
    for utt in utterances:
        est = denoise_samples(model, utt.noisy, fft_size, hop)
        sdrs.append(eval_sdr(est, utt.clean))
        ssnrs.append(eval_ssnr(est, utt.clean))
    return float(np.mean(sdrs)), float(np.mean(ssnrs))


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    steps: int
    history: list[LossReport]
    val_history: list[tuple[int, float]]
    sigma_history: list[tuple[int, np.ndarray]]
    batch_order_hash: str
    best_val_sdr: float
    best_checkpoint: Path
    last_checkpoint: Path
    loss_curve_path: Path
    batch_order: list[str] = field(default_factory=list)


def _first_nonfinite_name(model) -> str:
    for name, t in model.named_parameters().items():
        if not np.all(np.isfinite(t.data)):
            return name
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            return f"{name}.grad"
    return "loss"


def _current_sigmas(model) -> np.ndarray:
    values = model.sigma_values()
    return np.concatenate([v.ravel() for v in values]) if values else np.zeros(0)


def train(cfg: RunConfig, dataset: Optional[list[Utterance]] = None,
          out_dir=None, step_callback: Optional[Callable] = None,
          pesq_hook: Optional[Callable] = None) -> TrainResult:
    """Run cfg.train.steps of Adam on the configured dataset.

    Saves the best checkpoint by validation SDR plus the final one, writes
    a per-step loss curve (TSV) and key=value log, and aborts with
    TrainingDiverged on a non-finite loss.  `step_callback(step, model,
    batch, report)` fires after each optimizer step.
    """
    if dataset is None:
        dataset = load_dataset(Path(cfg.data.dir) / "manifest.tsv")
    out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if len(dataset) >= 2:
        n_val = max(1, int(round(cfg.train.val_fraction * len(dataset))))
        n_val = min(n_val, len(dataset) - 1)
        train_set, val_set = dataset[:-n_val], dataset[-n_val:]
    else:
        train_set = val_set = dataset

    frames = stft(train_set[0].noisy, cfg.data.fft_size, cfg.data.hop).num_frames
    spec = build_model_spec(cfg, frames)
    rng = np.random.default_rng(cfg.train.seed)
    model = build_model(spec, rng)
    params = model.named_parameters()
    optimizer = Adam(params, lr=cfg.train.lr, beta1=cfg.train.beta1, beta2=cfg.train.beta2)
    meta = spec_meta(spec, cfg)

    history: list[LossReport] = []
    val_history: list[tuple[int, float]] = []
    sigma_history: list[tuple[int, np.ndarray]] = []
    batch_order: list[str] = []
    best_val = -math.inf
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    curve_path = out_dir / "loss_curve.tsv"
    log_path = out_dir / "train.log"

    curve_lines = ["step\tsdr_loss\tpesq_hook_loss\tcombined\tgrad_norm"]
    log_lines = []
    sigma_history.append((-1, _current_sigmas(model)))

    for step in range(cfg.train.steps):
        picks = rng.integers(0, len(train_set), size=cfg.train.batch)
        batch = [train_set[int(i)] for i in picks]
        batch_order.extend(u.uid for u in batch)

        optimizer.zero_grad()
        loss, report = batch_loss(model, batch, cfg, pesq_hook)
        if not math.isfinite(report.combined):
            raise TrainingDiverged(step, _first_nonfinite_name(model))
        ops.backward(loss)
        report.grad_norm = clip_global_norm(params, cfg.train.clip_norm)
        if not math.isfinite(report.grad_norm):
            raise TrainingDiverged(step, _first_nonfinite_name(model))
        optimizer.step()

        history.append(report)
        sigma_history.append((step, _current_sigmas(model)))
        curve_lines.append(
            f"{step}\t{report.sdr_loss!r}\t"
            f"{'' if report.pesq_hook_loss is None else repr(report.pesq_hook_loss)}\t"
            f"{report.combined!r}\t{report.grad_norm!r}")
        log_lines.append(f"step={step} {report.as_kv()}")
        if cfg.train.log_every > 0 and step % cfg.train.log_every == 0:
            print(f"step={step} {report.as_kv()}")

        is_last = step == cfg.train.steps - 1
        if is_last or (cfg.train.val_every > 0 and (step + 1) % cfg.train.val_every == 0):
            val_sdr, _ = evaluate_model(model, val_set, cfg.data.fft_size, cfg.data.hop)
            val_history.append((step, val_sdr))
            log_lines.append(f"step={step} val_sdr_db={val_sdr:.4f}")
            if val_sdr > best_val:
                best_val = val_sdr
                save_checkpoint(best_path, params, meta)

        if step_callback is not None:
            step_callback(step, model, batch, report)

    save_checkpoint(last_path, params, meta)
    if not best_path.exists():  # zero validation points can only mean steps == 0
        save_checkpoint(best_path, params, meta)
    curve_path.write_text("\n".join(curve_lines) + "\n")
    log_path.write_text("\n".join(log_lines) + "\n")
    order_hash = hashlib.sha256("|".join(batch_order).encode()).hexdigest()
    (out_dir / "batch_order.txt").write_text(order_hash + "\n")

    return TrainResult(
        steps=cfg.train.steps,
        history=history,
        val_history=val_history,
        sigma_history=sigma_history,
        batch_order_hash=order_hash,
        best_val_sdr=best_val,
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        loss_curve_path=curve_path,
        batch_order=batch_order,
    )
