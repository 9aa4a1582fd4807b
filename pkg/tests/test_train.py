"""Training loop: optimizer math, clipping, determinism, divergence guard."""

import numpy as np
import numpy.testing as npt
import pytest

from tgsa import tensor as ops
from tgsa.attention import AttentionScheme
from tgsa.config import RunConfig
from tgsa.encoder import RealMaskNet
from tgsa.errors import ConfigError
from tgsa.synth import SynthRecipe, synthesize_dataset
from tgsa.tensor import Tensor
from tgsa.train import (
    Adam,
    TrainingDiverged,
    batch_loss,
    build_model_spec,
    clip_global_norm,
    denoise_samples,
    load_dataset,
    load_model,
    parameter_census,
    train,
)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    base = tmp_path_factory.mktemp("ds")
    recipe = SynthRecipe(num_utterances=3, duration_s=0.2, snr_db=(-5.0,))
    manifest = synthesize_dataset(recipe, base, seed=2)
    return load_dataset(manifest)


def small_cfg(tmp_path, **train_kw):
    cfg = RunConfig()
    cfg.data.dir = str(tmp_path / "unused")
    cfg.train.steps = 6
    cfg.train.batch = 1
    cfg.train.val_every = 3
    cfg.train.log_every = 0
    cfg.model.layers = 1
    cfg.model.dim = 16
    cfg.model.heads = 2
    cfg.model.ff_dim = 16
    cfg.out_dir = str(tmp_path / "run")
    for key, value in train_kw.items():
        setattr(cfg.train, key, value)
    return cfg


class TestAdam:
    def test_single_step_matches_hand_formula(self):
        t = Tensor([1.0, 2.0], requires_grad=True)
        t.grad = np.array([0.5, -1.0])
        opt = Adam({"t": t}, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        opt.step()
        # After one step m_hat = g, v_hat = g^2: update = lr * g / (|g| + eps).
        expected = np.array([1.0, 2.0]) - 0.1 * np.array([0.5, -1.0]) / (
            np.abs([0.5, -1.0]) + 1e-8)
        npt.assert_allclose(t.data, expected, rtol=1e-12)

    def test_skips_params_without_grad(self):
        t = Tensor([1.0], requires_grad=True)
        t.grad = None
        opt = Adam({"t": t})
        opt.step()
        npt.assert_array_equal(t.data, [1.0])


class TestClipping:
    def test_norm_reduced_to_cap(self):
        a = Tensor(np.zeros(3), requires_grad=True)
        a.grad = np.array([3.0, 4.0, 0.0])
        norm = clip_global_norm({"a": a}, 1.0)
        npt.assert_allclose(norm, 5.0)
        npt.assert_allclose(np.linalg.norm(a.grad), 1.0, rtol=1e-12)

    def test_below_cap_untouched(self):
        a = Tensor(np.zeros(2), requires_grad=True)
        a.grad = np.array([0.3, 0.4])
        norm = clip_global_norm({"a": a}, 5.0)
        npt.assert_allclose(norm, 0.5)
        npt.assert_array_equal(a.grad, [0.3, 0.4])


class TestTrainLoop:
    def test_loss_curve_and_checkpoints_written(self, tmp_path, small_dataset):
        cfg = small_cfg(tmp_path)
        result = train(cfg, dataset=small_dataset)
        assert result.best_checkpoint.exists()
        assert result.last_checkpoint.exists()
        lines = result.loss_curve_path.read_text().splitlines()
        assert len(lines) == cfg.train.steps + 1  # header + one per step
        assert (tmp_path / "run" / "train.log").exists()

    def test_seed_determinism_to_1e12(self, tmp_path, small_dataset):
        cfg1 = small_cfg(tmp_path / "a", steps=10)
        cfg2 = small_cfg(tmp_path / "b", steps=10)
        r1 = train(cfg1, dataset=small_dataset)
        r2 = train(cfg2, dataset=small_dataset)
        assert abs(r1.history[9].sdr_loss - r2.history[9].sdr_loss) < 1e-12
        assert r1.batch_order_hash == r2.batch_order_hash

    def test_different_seeds_differ(self, tmp_path, small_dataset):
        r1 = train(small_cfg(tmp_path / "a", seed=0), dataset=small_dataset)
        r2 = train(small_cfg(tmp_path / "b", seed=1), dataset=small_dataset)
        assert r1.batch_order_hash != r2.batch_order_hash

    def test_checkpoint_roundtrip_restores_model(self, tmp_path, small_dataset):
        cfg = small_cfg(tmp_path)
        result = train(cfg, dataset=small_dataset)
        model, spec, dsp_cfg = load_model(result.last_checkpoint)
        assert isinstance(model, RealMaskNet)
        assert spec.scheme is AttentionScheme.GAUSSIAN_WEIGHTED
        assert dsp_cfg == {"fft_size": 256, "hop": 64, "sample_rate": 16000}
        est = denoise_samples(model, small_dataset[0].noisy, 256, 64)
        assert est.shape == small_dataset[0].noisy.shape

    def test_divergence_abort_names_step(self, tmp_path, small_dataset):
        cfg = small_cfg(tmp_path, lr=1.0)

        def poison(step, model, batch, report):
            for t in model.named_parameters().values():
                t.data[...] = np.nan
                break

        with pytest.raises(TrainingDiverged) as excinfo:
            train(cfg, dataset=small_dataset, step_callback=poison)
        assert excinfo.value.step >= 1
        assert "sigma_raw" in str(excinfo.value) or "w" in str(excinfo.value)

    def test_callback_sees_every_step(self, tmp_path, small_dataset):
        seen = []
        cfg = small_cfg(tmp_path)
        train(cfg, dataset=small_dataset,
              step_callback=lambda step, model, batch, report: seen.append(step))
        assert seen == list(range(cfg.train.steps))

    def test_pesq_hook_feeds_combined(self, tmp_path, small_dataset):
        cfg = small_cfg(tmp_path, steps=2)
        result = train(cfg, dataset=small_dataset,
                       pesq_hook=lambda est, ref: Tensor(0.5))
        report = result.history[0]
        assert report.pesq_hook_loss == 0.5
        npt.assert_allclose(report.combined, report.sdr_loss + cfg.loss.alpha * 0.5,
                            rtol=1e-12)

    def test_missing_manifest_is_config_error(self, tmp_path):
        cfg = small_cfg(tmp_path)
        with pytest.raises(ConfigError):
            train(cfg)


class TestBatchLoss:
    def test_mean_over_batch(self, tmp_path, small_dataset):
        cfg = small_cfg(tmp_path)
        frames = 50
        spec = build_model_spec(cfg, frames)
        model = RealMaskNet(spec, np.random.default_rng(0))
        loss1, rep1 = batch_loss(model, [small_dataset[0]], cfg)
        loss2, rep2 = batch_loss(model, [small_dataset[1]], cfg)
        loss_both, rep_both = batch_loss(model, [small_dataset[0], small_dataset[1]], cfg)
        npt.assert_allclose(loss_both.item(), (loss1.item() + loss2.item()) / 2, rtol=1e-12)
        npt.assert_allclose(rep_both.sdr_loss, (rep1.sdr_loss + rep2.sdr_loss) / 2,
                            rtol=1e-12)


class TestCensus:
    def test_sigma_is_only_difference(self, tmp_path, small_dataset):
        cfg = small_cfg(tmp_path)
        spec_v = build_model_spec(cfg, 50)
        cfg.model.scheme = "vanilla"
        spec_g = build_model_spec(cfg, 50)
        spec_g, spec_v = spec_v, spec_g  # spec_g: gsa, spec_v: vanilla
        gsa = RealMaskNet(spec_g, np.random.default_rng(0))
        vanilla = RealMaskNet(spec_v, np.random.default_rng(0))
        census_g = parameter_census(gsa)
        census_v = parameter_census(vanilla)
        sigma_sizes = sum(v for k, v in census_g.items() if k.endswith("sigma_raw"))
        assert sigma_sizes == spec_g.num_layers
        assert sum(census_g.values()) - sum(census_v.values()) == sigma_sizes
        assert set(k for k in census_g if not k.endswith("sigma_raw")) == set(census_v)
