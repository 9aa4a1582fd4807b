"""Named invariant checks behind the `verify` CLI command.

Each check is independent, seeded, and returns a CheckResult; the command
prints one line per check and exits nonzero on any failure.  These cover
gradient integrity of every operator family, the Gaussian-weight
properties, sign preservation vs. the additive-bias scheme, the signal
pipeline, complex-mask arithmetic, and checkpoint round-trips.
"""

from __future__ import annotations

import io
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as ops
from .attention import (
    AttentionParams,
    AttentionScheme,
    attention_scores,
    gaussian_weight_matrix,
    gsa_attention,
    sigma_gradient_check,
    squared_distance_matrix,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .complex_net import ComplexMask, apply_complex_mask, complex_fc
from .dsp import Spectrogram, Waveform, istft, magnitude, measured_snr_db, mix, \
    recombine_with_noisy_phase, stft
from .encoder import apply_mask
from .gradcheck import check_gradients
from .losses import eval_sdr, eval_ssnr, sdr_loss
from .tensor import Tensor


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _grad_check(name: str, loss_fn: Callable, params: dict, tol: float = 1e-5,
                seed: int = 0) -> CheckResult:
    report = check_gradients(loss_fn, params, tol=tol, rng=np.random.default_rng(seed))
    detail = f"max rel error {report.max_rel_error:.2e}"
    if not report.passed:
        detail = str(report)
    return CheckResult(name, report.passed, detail)


def check_matmul_gradient() -> CheckResult:
    rng = np.random.default_rng(10)
    a = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(-2, 2, (4, 2)), requires_grad=True)
    return _grad_check("matmul_gradient",
                       lambda: ops.sum(ops.square(ops.matmul(a, b))), {"a": a, "b": b},
                       tol=1e-6)


def check_softmax_gradient_and_rows() -> CheckResult:
    rng = np.random.default_rng(11)
    x = Tensor(rng.uniform(-2, 2, (4, 6)), requires_grad=True)
    result = _grad_check("softmax_rows", lambda: ops.sum(ops.square(ops.softmax_rows(x))),
                         {"x": x}, tol=1e-6)
    y = ops.softmax_rows(x).data
    rows_ok = bool(np.all(np.abs(y.sum(axis=-1) - 1.0) < 1e-12) and np.all(y >= 0))
    passed = result.passed and rows_ok
    return CheckResult("softmax_rows", passed,
                       result.detail + ("" if rows_ok else "; row sums violated"))


def check_abs_gradient() -> CheckResult:
    rng = np.random.default_rng(12)
    data = rng.uniform(0.2, 2.0, 24) * np.where(rng.random(24) < 0.5, -1, 1)
    x = Tensor(data, requires_grad=True)
    result = _grad_check("abs_backward_sign",
                         lambda: ops.sum(ops.square(ops.abs_elem(x))), {"x": x}, tol=1e-6)
    ops.zero_grads([x])
    ops.backward(ops.sum(ops.abs_elem(x)))
    sign_ok = bool(np.array_equal(x.grad, np.sign(x.data)))
    return CheckResult("abs_backward_sign", result.passed and sign_ok,
                       result.detail + ("" if sign_ok else "; grad != sign(x)"))


def check_layer_norm_gradient() -> CheckResult:
    rng = np.random.default_rng(13)
    x = Tensor(rng.uniform(-2, 2, (3, 5)), requires_grad=True)
    g = Tensor(rng.uniform(0.5, 1.5, 5), requires_grad=True)
    b = Tensor(rng.uniform(-0.5, 0.5, 5), requires_grad=True)
    return _grad_check("layer_norm_gradient",
                       lambda: ops.sum(ops.square(ops.layer_norm(x, g, b))),
                       {"x": x, "gain": g, "bias": b}, tol=1e-5)


def check_elementwise_gradients() -> CheckResult:
    rng = np.random.default_rng(14)
    x = Tensor(rng.uniform(0.3, 2.0, (3, 4)), requires_grad=True)
    cases = {
        "exp": lambda: ops.sum(ops.square(ops.exp(x))),
        "log": lambda: ops.sum(ops.square(ops.log(x))),
        "sqrt": lambda: ops.sum(ops.square(ops.sqrt(x))),
        "sigmoid": lambda: ops.sum(ops.square(ops.sigmoid(x))),
        "softplus": lambda: ops.sum(ops.square(ops.softplus(x))),
        "relu": lambda: ops.sum(ops.square(ops.relu(x))),
    }
    worst = 0.0
    for name, fn in cases.items():
        report = check_gradients(fn, {"x": x}, tol=1e-6, rng=np.random.default_rng(3))
        worst = max(worst, report.max_rel_error)
        if not report.passed:
            return CheckResult("elementwise_gradients", False, f"{name}: {report}")
    return CheckResult("elementwise_gradients", True, f"max rel error {worst:.2e}")


def check_backward_accumulation() -> CheckResult:
    x = Tensor([3.0, -1.0], requires_grad=True)
    ops.backward(ops.add(ops.sum(x), ops.sum(x)))
    ok = bool(np.array_equal(x.grad, [2.0, 2.0]))
    return CheckResult("backward_accumulation", ok, f"grad={x.grad}")


def check_gaussian_matrix_properties() -> CheckResult:
    rng = np.random.default_rng(15)
    for _ in range(25):
        t = int(rng.integers(2, 20))
        sigma = float(rng.uniform(0.5, 9.0))
        g = gaussian_weight_matrix(t, sigma).data
        if not np.array_equal(np.diag(g), np.ones(t)):
            return CheckResult("gaussian_matrix", False, "diagonal != 1")
        if not np.array_equal(g, g.T):
            return CheckResult("gaussian_matrix", False, "not symmetric")
        if not (np.all(g > 0) and np.all(g <= 1)):
            return CheckResult("gaussian_matrix", False, "entries outside (0, 1]")
        if not np.all(np.diff(g[0]) < 0):
            return CheckResult("gaussian_matrix", False, "decay not monotone")
    big = gaussian_weight_matrix(4, 1e6).data
    if np.max(np.abs(big - 1.0)) >= 1e-9:
        return CheckResult("gaussian_matrix", False, "sigma=1e6 limit not all-ones")
    return CheckResult("gaussian_matrix", True, "diagonal/symmetry/decay/limit hold")


def check_gaussian_dsigma() -> CheckResult:
    t, s = 5, 1.7
    d2 = squared_distance_matrix(t)
    expected = np.exp(-d2 / s**2) * 2.0 * d2 / s**3
    worst = 0.0
    for i in range(t):
        for j in range(t):
            sigma = Tensor([s], requires_grad=True)
            pick = np.zeros((t, t))
            pick[i, j] = 1.0
            ops.backward(ops.sum(ops.mul(gaussian_weight_matrix(t, sigma), Tensor(pick))))
            if expected[i, j] == 0.0:
                err = abs(float(sigma.grad[0]))
            else:
                err = abs(float(sigma.grad[0]) - expected[i, j]) / abs(expected[i, j])
            worst = max(worst, err)
    return CheckResult("gaussian_dsigma", worst < 1e-6, f"max rel error {worst:.2e}")


def check_sign_preservation() -> CheckResult:
    rng = np.random.default_rng(16)
    for _ in range(1000):
        t = int(rng.integers(2, 12))
        c = rng.uniform(-5, 5, (t, t))
        sigma = float(rng.uniform(1.0, 8.0))
        s = gaussian_weight_matrix(t, sigma).data * c
        if not np.array_equal(np.sign(s), np.sign(c)):
            return CheckResult("sign_preservation", False, "gaussian weighting flipped a sign")
    # Constructed additive-bias counterexample: a positive score goes negative.
    q = Tensor(np.array([0.5, 0.5]).reshape(1, 1, 2, 1))
    k = Tensor(np.ones((1, 1, 2, 1)))
    biased = attention_scores(q, k, AttentionScheme.ADDITIVE_BIAS, 1.0)
    flipped = biased.data[0, 0, 0, 1] < 0
    return CheckResult("sign_preservation", bool(flipped),
                       "1000 gaussian cases sign-safe; additive bias flips as expected"
                       if flipped else "additive bias failed to flip a sign")


def check_abs_softmax_negation_invariance() -> CheckResult:
    rng = np.random.default_rng(17)
    for _ in range(200):
        t = int(rng.integers(2, 9))
        c = rng.uniform(-4, 4, (t, t))
        g = gaussian_weight_matrix(t, float(rng.uniform(0.5, 6.0))).data
        w_pos = ops.softmax_rows(ops.abs_elem(Tensor(g * c))).data
        w_neg = ops.softmax_rows(ops.abs_elem(Tensor(g * (-c)))).data
        if not np.array_equal(w_pos, w_neg):
            return CheckResult("abs_softmax_negation", False, "weights changed under -C")
    return CheckResult("abs_softmax_negation", True, "bitwise invariant on 200 cases")


def check_attention_oracle() -> CheckResult:
    # Scalar-by-scalar recomputation of a 2-frame single-head block.
    wq = np.array([[0.3, -0.5], [0.8, 0.1]])
    wk = np.array([[-0.2, 0.4], [0.6, 0.9]])
    wv = np.array([[1.0, 0.2], [-0.3, 0.5]])
    wo = np.array([[0.7, -0.1], [0.4, 1.1]])
    h = np.array([[0.5, -1.0], [1.5, 0.25]])
    sigma_eff = 2.0
    q, k, v = h @ wq, h @ wk, h @ wv
    c = q @ k.T / math.sqrt(2.0)
    gw = math.exp(-1.0 / sigma_eff**2)
    s = np.array([[1.0, gw], [gw, 1.0]]) * c
    a = np.abs(s)
    e = np.exp(a - a.max(axis=1, keepdims=True))
    w = e / e.sum(axis=1, keepdims=True)
    expected = (w @ v) @ wo

    from .attention import SIGMA_MIN, softplus_inverse
    params = AttentionParams(
        w_q=Tensor(wq), w_k=Tensor(wk), w_v=Tensor(wv), w_o=Tensor(wo),
        sigma_raw=Tensor([softplus_inverse(sigma_eff - SIGMA_MIN)], requires_grad=True),
        heads=1, model_dim=2)
    out = gsa_attention(Tensor(h[None]), params, AttentionScheme.GAUSSIAN_WEIGHTED)
    err = np.max(np.abs(out.data[0] - expected))
    return CheckResult("attention_hand_oracle", err < 1e-12, f"max abs error {err:.2e}")


def check_sigma_gradient() -> CheckResult:
    rng = np.random.default_rng(18)
    params = AttentionParams.create(8, 2, AttentionScheme.GAUSSIAN_WEIGHTED, rng,
                                    sigma_init=3.0)
    batch = Tensor(rng.uniform(-1, 1, (2, 6, 8)))
    report = sigma_gradient_check(params, batch)
    return CheckResult("sigma_gradient", report.passed,
                       f"max rel error {report.max_rel_error:.2e}" if report.passed
                       else str(report))


def check_stft_roundtrip() -> CheckResult:
    rng = np.random.default_rng(19)
    worst = 0.0
    for length in (1000, 4096):
        for hop in (64, 128):
            x = rng.uniform(-1, 1, length)
            rec = istft(stft(x, 256, hop)).data
            worst = max(worst, float(np.max(np.abs(rec - x))))
    return CheckResult("stft_roundtrip", worst < 1e-8, f"max abs error {worst:.2e}")


def check_stft_linearity() -> CheckResult:
    rng = np.random.default_rng(20)
    x, y = rng.uniform(-1, 1, 500), rng.uniform(-1, 1, 500)
    a, b = 1.3, -0.7
    s_mix = stft(a * x + b * y, 128, 32)
    s_x, s_y = stft(x, 128, 32), stft(y, 128, 32)
    err = max(np.max(np.abs(s_mix.real.data - a * s_x.real.data - b * s_y.real.data)),
              np.max(np.abs(s_mix.imag.data - a * s_x.imag.data - b * s_y.imag.data)))
    return CheckResult("stft_linearity", err < 1e-9, f"max abs error {err:.2e}")


def check_mix_snr() -> CheckResult:
    rng = np.random.default_rng(21)
    sr = 16000
    clean = Waveform(np.sin(2 * np.pi * 220 * np.arange(sr) / sr), sr)
    noise = Waveform(rng.normal(0, 1, sr), sr)
    worst = 0.0
    for snr in (-10.0, -5.0, 0.0, 5.0, 15.0):
        got = measured_snr_db(clean, mix(clean, noise, snr))
        worst = max(worst, abs(got - snr))
    return CheckResult("mix_snr", worst < 0.01, f"max deviation {worst:.4f} dB")


def check_recombine_identity() -> CheckResult:
    rng = np.random.default_rng(22)
    noisy = stft(rng.uniform(-1, 1, 600), 128, 32)
    out = recombine_with_noisy_phase(magnitude(noisy), noisy)
    err = max(np.max(np.abs(out.real.data - noisy.real.data)),
              np.max(np.abs(out.imag.data - noisy.imag.data)))
    return CheckResult("recombine_identity", err < 1e-9, f"max abs error {err:.2e}")


def check_mask_identities() -> CheckResult:
    rng = np.random.default_rng(23)
    x = Tensor(rng.uniform(0, 2, (2, 3, 4)))
    ones = apply_mask(x, Tensor(np.ones((2, 3, 4))))
    zeros = apply_mask(x, Tensor(np.zeros((2, 3, 4))))
    ok = np.array_equal(ones.data, x.data) and np.array_equal(zeros.data, 0.0 * x.data)
    return CheckResult("mask_identities", bool(ok), "ones/zeros masks behave")


def check_complex_fc_oracle() -> CheckResult:
    rng = np.random.default_rng(24)
    worst = 0.0
    for _ in range(200):
        a, b, c, d = rng.uniform(-3, 3, 4)
        mk = lambda v: Tensor(np.full((1, 1), v))
        y_r, y_i = complex_fc(mk(a), mk(b), mk(c), mk(d), mk(0.0), mk(0.0))
        expected = complex(a, b) * complex(c, d)
        worst = max(worst, abs(y_r.data[0, 0] - expected.real),
                    abs(y_i.data[0, 0] - expected.imag))
    return CheckResult("complex_fc_oracle", worst < 1e-12, f"max abs error {worst:.2e}")


def check_complex_mask_formulas() -> CheckResult:
    rng = np.random.default_rng(25)
    for _ in range(1000):
        shape = (1, int(rng.integers(1, 4)), int(rng.integers(1, 5)))
        yr, yi = rng.uniform(-3, 3, shape), rng.uniform(-3, 3, shape)
        mr, mi = rng.uniform(-2, 2, shape), rng.uniform(-2, 2, shape)
        x_r, x_i = apply_complex_mask(Tensor(yr), Tensor(yi),
                                      ComplexMask(Tensor(mr), Tensor(mi)))
        if not (np.array_equal(x_r.data, np.abs(yr) * mr - np.abs(yi) * mi)
                and np.array_equal(x_i.data, np.abs(yr) * mi + np.abs(yi) * mr)):
            return CheckResult("complex_mask_formulas", False, "mismatch vs scripted formulas")
    return CheckResult("complex_mask_formulas", True, "exact on 1000 random inputs")


def check_loss_through_istft_gradient() -> CheckResult:
    rng = np.random.default_rng(26)
    clean = rng.uniform(-1, 1, 200)
    noisy_spec = stft(rng.uniform(-1, 1, 200), 64, 16)
    t, f = noisy_spec.real.shape
    mask = Tensor(rng.uniform(0.2, 0.8, (t, f)), requires_grad=True)

    def loss_fn():
        est_mag = apply_mask(magnitude(noisy_spec), mask)
        est = istft(recombine_with_noisy_phase(est_mag, noisy_spec))
        return sdr_loss(est, Tensor(clean))

    return _grad_check("loss_through_istft", loss_fn, {"mask": mask}, tol=1e-5)


def check_sdr_loss_values() -> CheckResult:
    rng = np.random.default_rng(27)
    ref = rng.uniform(-1, 1, 400)
    zero = sdr_loss(Tensor(np.zeros(400)), Tensor(ref)).item()
    perfect = sdr_loss(Tensor(ref.copy()), Tensor(ref)).item()
    ok = abs(zero) < 1e-9 and perfect < -60.0
    return CheckResult("sdr_loss_values", ok, f"zero-est {zero:.2e} dB, perfect {perfect:.1f} dB")


def check_eval_metric_caps() -> CheckResult:
    rng = np.random.default_rng(28)
    ref = rng.uniform(-1, 1, 1024)
    ok = (eval_sdr(ref.copy(), ref) == 60.0
          and eval_ssnr(ref.copy(), ref) == 35.0
          and eval_ssnr(ref + 100 * rng.normal(0, 1, 1024), ref) == -10.0)
    return CheckResult("eval_metric_caps", bool(ok), "SDR/SSNR caps and clamps hold")


def check_checkpoint_roundtrip() -> CheckResult:
    rng = np.random.default_rng(29)
    tensors = {"layers.0.attn.sigma_raw": Tensor(rng.normal(size=1)),
               "w": Tensor(rng.normal(size=(3, 4)))}
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "v.ckpt"
        save_checkpoint(path, tensors, meta={"k": "v"})
        loaded, meta = load_checkpoint(path)
    ok = (meta == {"k": "v"}
          and all(np.array_equal(loaded[k].data, t.data) for k, t in tensors.items()))
    return CheckResult("checkpoint_roundtrip", bool(ok), "bitwise round-trip")


ALL_CHECKS: list[Callable[[], CheckResult]] = [
    check_matmul_gradient,
    check_softmax_gradient_and_rows,
    check_abs_gradient,
    check_layer_norm_gradient,
    check_elementwise_gradients,
    check_backward_accumulation,
    check_gaussian_matrix_properties,
    check_gaussian_dsigma,
    check_sign_preservation,
    check_abs_softmax_negation_invariance,
    check_attention_oracle,
    check_sigma_gradient,
    check_stft_roundtrip,
    check_stft_linearity,
    check_mix_snr,
    check_recombine_identity,
    check_mask_identities,
    check_complex_fc_oracle,
    check_complex_mask_formulas,
    check_loss_through_istft_gradient,
    check_sdr_loss_values,
    check_eval_metric_caps,
    check_checkpoint_roundtrip,
]


def run_all_checks() -> list[CheckResult]:
    results = []
    for check in ALL_CHECKS:
        try:
            results.append(check())
        except Exception as exc:  # a crashed check is a failed check
            results.append(CheckResult(check.__name__.removeprefix("check_"), False,
                                       f"raised {type(exc).__name__}: {exc}"))
    return results
