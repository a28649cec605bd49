"""Full-model shape algebra, determinism, and FLOP accounting."""
import numpy as np
import pytest

from mambauie import ops
from mambauie.network import (MambaUIE, ModelConfig, _conv_macs, count_flops)
from mambauie.tensor import Tensor


class TestModelConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(base_channels=2)
        with pytest.raises(ValueError):
            ModelConfig(patch_size=3)
        with pytest.raises(ValueError):
            ModelConfig(stages=3)
        with pytest.raises(ValueError):
            ModelConfig(skip_mode="concat")
        with pytest.raises(ValueError):
            ModelConfig(base_channels=6, patch_size=2)  # 6 % 4 != 0

    def test_stage_channels_double(self):
        cfg = ModelConfig(base_channels=16, patch_size=1)
        assert [cfg.stage_channels(s) for s in range(4)] == [16, 32, 64, 128]
        assert cfg.multiple == 8


class TestPatchEmbed:
    def test_p1_shape(self):
        model = MambaUIE(ModelConfig(base_channels=16, patch_size=1), seed=0)
        out = model.patch_embed(Tensor(np.zeros((1, 3, 64, 64), np.float32)))
        assert out.shape == (1, 16, 64, 64)

    def test_p2_shape(self):
        model = MambaUIE(ModelConfig(base_channels=16, patch_size=2), seed=0)
        out = model.patch_embed(Tensor(np.zeros((1, 3, 64, 64), np.float32)))
        assert out.shape == (1, 16, 32, 32)

    def test_embed_into_zero_head_gives_bias(self):
        rng = np.random.default_rng(0)
        model = MambaUIE(ModelConfig(base_channels=16, patch_size=1), seed=0)
        f = model.patch_embed(
            Tensor(rng.random((1, 3, 16, 16)).astype(np.float32)))
        head_w = Tensor(np.zeros((3, 16, 1, 1), np.float32))
        head_b = Tensor(np.array([0.1, 0.2, 0.3], np.float32))
        out = ops.conv2d(f, head_w, head_b)
        for c, b in enumerate([0.1, 0.2, 0.3]):
            np.testing.assert_allclose(out.data[:, c], b, rtol=1e-6)


class TestResampling:
    def test_down_up_shapes(self):
        model = MambaUIE(ModelConfig(base_channels=16, patch_size=1), seed=0)
        x = Tensor(np.random.default_rng(0).random((1, 16, 32, 32))
                   .astype(np.float32))
        down = model.downsample(x, model.weights.downs[0])
        assert down.shape == (1, 32, 16, 16)
        up = model.upsample(down, model.weights.ups[2])
        assert up.shape == (1, 16, 32, 32)

    def test_shape_round_trip_sweep(self):
        model = MambaUIE(ModelConfig(base_channels=16, patch_size=1), seed=0)
        for h, w in [(8, 8), (16, 24), (32, 8)]:
            x = Tensor(np.zeros((1, 16, h, w), np.float32))
            down = model.downsample(x, model.weights.downs[0])
            assert down.shape == (1, 32, h // 2, w // 2)
            up = model.upsample(down, model.weights.ups[2])
            assert up.shape == x.shape


class TestForward:
    def test_latent_shape_matches_claim(self):
        for c, p in [(16, 1), (8, 2), (4, 2)]:
            model = MambaUIE(ModelConfig(base_channels=c, patch_size=p), seed=0)
            m = 8 * p  # smallest valid square input
            img = Tensor(np.random.default_rng(0)
                         .random((1, 3, m, m)).astype(np.float32))
            out, latent = model.forward_with_latent(img)
            assert latent.shape == (1, 8 * c, m // (8 * p), m // (8 * p))
            assert out.shape == (1, 3, m, m)

    def test_zero_head_is_global_residual_identity(self):
        model = MambaUIE(ModelConfig(), seed=0)
        model.weights.head.weight.data[...] = 0.0
        model.weights.head.bias.data[...] = 0.0
        img = Tensor(np.random.default_rng(1)
                     .random((1, 3, 16, 16)).astype(np.float32))
        out = model.forward(img)
        np.testing.assert_array_equal(out.data, img.data)

    def test_rejects_bad_inputs(self):
        model = MambaUIE(ModelConfig(), seed=0)
        with pytest.raises(ops.ShapeError):
            model.forward(Tensor(np.zeros((1, 4, 16, 16), np.float32)))
        with pytest.raises(ops.ShapeError, match="16"):
            model.forward(Tensor(np.zeros((1, 3, 20, 20), np.float32)))

    def test_forward_bitwise_reproducible(self):
        img = np.random.default_rng(2).random((1, 3, 16, 16)).astype(np.float32)
        outs = []
        for _ in range(2):
            model = MambaUIE(ModelConfig(), seed=5)
            outs.append(model.forward(Tensor(img)).data)
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_predict_worker_invariance(self):
        model = MambaUIE(ModelConfig(), seed=3)
        imgs = np.random.default_rng(4).random((4, 3, 24, 40)).astype(np.float32)
        seq = model.predict(imgs, workers=1)
        par = model.predict(imgs, workers=4)
        np.testing.assert_array_equal(seq, par)
        assert seq.shape == imgs.shape
        assert seq.min() >= 0.0 and seq.max() <= 1.0

    def test_predict_pads_odd_extents(self):
        model = MambaUIE(ModelConfig(), seed=0)
        img = np.random.default_rng(5).random((3, 70, 70)).astype(np.float32)
        out = model.predict(img)
        assert out.shape == (3, 70, 70)


class TestWeightStore:
    def test_names_unique_and_ordered(self):
        model = MambaUIE(ModelConfig(), seed=0)
        params = model.parameters()
        names = list(params)
        assert len(names) == len(set(names))
        assert names == list(MambaUIE(ModelConfig(), seed=1).parameters())
        assert any(n.startswith("enc.0.") for n in names)
        assert "head.weight" in names

    def test_load_state_round_trip(self):
        model = MambaUIE(ModelConfig(), seed=0)
        other = MambaUIE(ModelConfig(), seed=9)
        other.load_state({n: t.data for n, t in model.parameters().items()})
        for n, t in model.parameters().items():
            np.testing.assert_array_equal(other.parameters()[n].data, t.data)

    def test_load_state_reports_mismatches(self):
        model = MambaUIE(ModelConfig(), seed=0)
        arrays = {n: t.data for n, t in model.parameters().items()}
        dropped = next(iter(arrays))
        bad = dict(arrays)
        del bad[dropped]
        bad["bogus"] = np.zeros(1)
        with pytest.raises(ValueError, match="bogus"):
            model.load_state(bad)
        bad = dict(arrays)
        bad[dropped] = np.zeros((1, 2, 3))
        with pytest.raises(ValueError, match="shape"):
            model.load_state(bad)


class TestFlops:
    def test_depthwise_formula(self):
        assert _conv_macs(16, 16, 3, 64, 64, groups=16) == 9 * 16 * 64 * 64

    def test_parts_sum_to_total(self):
        report = count_flops(ModelConfig(), (3, 128, 128))
        assert sum(report.parts.values()) == report.total_macs
        assert report.total_gflops == 2.0 * report.total_macs / 1e9

    def test_linear_in_width(self):
        a = count_flops(ModelConfig(), (3, 128, 128)).total_macs
        b = count_flops(ModelConfig(), (3, 128, 256)).total_macs
        assert 1.99 <= b / a <= 2.01

    def test_pure_function_of_config_and_shape(self):
        r1 = count_flops(ModelConfig(), (3, 64, 64))
        r2 = count_flops(ModelConfig(), (1, 3, 64, 64))
        assert r1.parts == r2.parts

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            count_flops(ModelConfig(), (4, 64, 64))
