import numpy as np
import pytest

from swintextunet.autodiff import Tensor, backward, no_grad, tsum, mul
from swintextunet.config import ModelConfig
from swintextunet.decoder import ConvFuse, PatchExpand, SegmentationHead
from swintextunet.encoder import map_to_tokens, tokens_to_map
from swintextunet.errors import ConfigError, ShapeError
from swintextunet.gradcheck import gradcheck
from swintextunet.losses import hybrid_loss
from swintextunet.config import LossConfig
from swintextunet.model import SwinTextUNet
from swintextunet.text import StubTextProvider, embedding_batch
from swintextunet.verify import MICRO_CONFIG, TOY64_CONFIG, micro_model_gradcheck

F64 = np.float64


class TestPatchExpand:
    def test_paper_chain_first_step(self):
        pe = PatchExpand(768, np.random.default_rng(0), np.float32)
        z = Tensor(np.random.default_rng(1).standard_normal((1, 49, 768)).astype(np.float32))
        with no_grad():
            assert pe(z, 7).shape == (1, 196, 384)

    def test_toy_shape(self):
        pe = PatchExpand(128, np.random.default_rng(0), F64)
        z = Tensor(np.random.default_rng(1).standard_normal((1, 4, 128)), dtype=F64)
        with no_grad():
            assert pe(z, 2).shape == (1, 16, 64)

    def test_odd_channels_rejected(self):
        with pytest.raises(ConfigError):
            PatchExpand(7, np.random.default_rng(0), F64)

    def test_gradcheck(self):
        rng = np.random.default_rng(2)
        pe = PatchExpand(8, rng, F64)
        z = Tensor(rng.standard_normal((1, 4, 8)), requires_grad=True, dtype=F64)
        w = Tensor(rng.standard_normal((1, 16, 4)), dtype=F64)
        err = gradcheck(lambda: tsum(mul(pe(z, 2), w)), [z, pe.expand.w], h=1e-5, tol=1e-4)
        assert err <= 1e-4

    def test_block_layout_is_pixel_shuffle(self):
        # token (i,j)'s expanded vector fills the 2x2 block at (2i..2i+1, 2j..2j+1)
        rng = np.random.default_rng(3)
        pe = PatchExpand(4, rng, F64)
        z_np = rng.standard_normal((1, 4, 4))
        with no_grad():
            out = pe(Tensor(z_np, dtype=F64), 2).data
        expanded = z_np @ pe.expand.w.data  # (1, 4, 8)
        grid = out.reshape(1, 4, 4, 2)
        for i in range(2):
            for j in range(2):
                token = expanded[0, i * 2 + j].reshape(2, 2, 2)
                got = grid[0, 2 * i:2 * i + 2, 2 * j:2 * j + 2, :]
                assert np.array_equal(got, token)


class TestConvFuse:
    def test_shape_law(self):
        cf = ConvFuse(8, np.random.default_rng(0), F64)
        s = Tensor(np.random.default_rng(1).standard_normal((2, 8, 4, 4)), dtype=F64)
        u = Tensor(np.random.default_rng(2).standard_normal((2, 8, 4, 4)), dtype=F64)
        with no_grad():
            assert cf(s, u).shape == (2, 8, 4, 4)

    def test_spatial_mismatch_rejected(self):
        cf = ConvFuse(4, np.random.default_rng(0), F64)
        s = Tensor(np.zeros((1, 4, 4, 4)), dtype=F64)
        u = Tensor(np.zeros((1, 4, 8, 8)), dtype=F64)
        with pytest.raises(ShapeError):
            cf(s, u)

    def test_gradcheck(self):
        rng = np.random.default_rng(4)
        cf = ConvFuse(4, rng, F64)
        s = Tensor(rng.standard_normal((1, 4, 3, 3)), requires_grad=True, dtype=F64)
        u = Tensor(rng.standard_normal((1, 4, 3, 3)), requires_grad=True, dtype=F64)
        w = Tensor(rng.standard_normal((1, 4, 3, 3)), dtype=F64)
        wrt = [s, u] + [p for _, p in cf.named_parameters()]
        err = gradcheck(lambda: tsum(mul(cf(s, u), w)), wrt, h=1e-4, tol=1e-4,
                        max_elements=6, rng=rng)
        assert err <= 1e-4


class TestBottleneck:
    def _model(self, **overrides):
        cfg = ModelConfig(**{**MICRO_CONFIG.__dict__, **overrides})
        return SwinTextUNet(cfg, dtype=F64, seed=0)

    def test_bypass_gives_twice_tokens(self):
        model = self._model(use_convfuse=False, use_text=False)
        x = Tensor(np.random.default_rng(0).random((1, 3, 16, 16)), dtype=F64)
        with no_grad():
            tokens = model.encoder(x)
            z4 = tokens[-1]
            s4 = tokens_to_map(z4, model.cfg.stages[-1].grid)
            doubled = z4.data + map_to_tokens(s4).data
        assert np.array_equal(doubled, 2.0 * z4.data)

    def test_shape_preserved_through_bottleneck(self):
        model = self._model()
        grid = model.cfg.stages[-1].grid
        ch = model.cfg.stages[-1].channels
        z = Tensor(np.random.default_rng(1).standard_normal((1, grid * grid, ch)), dtype=F64)
        with no_grad():
            zmap = tokens_to_map(z, grid)
            fused = map_to_tokens(model.bottleneck(zmap, zmap))
        assert fused.shape == z.shape


class TestSegmentationHead:
    def test_zero_weights_give_half(self):
        head = SegmentationHead(8, np.random.default_rng(0), F64)
        head.conv.w.data[...] = 0.0
        head.conv.b.data[...] = 0.0
        y0 = Tensor(np.random.default_rng(1).standard_normal((2, 8, 8, 8)), dtype=F64)
        with no_grad():
            logits, prob = head(y0)
        assert np.all(prob.data == 0.5)
        assert logits.shape == (2, 1, 16, 16)

    def test_upsamples_by_two(self):
        head = SegmentationHead(4, np.random.default_rng(0), np.float32)
        y0 = Tensor(np.random.default_rng(1).standard_normal((1, 4, 32, 32)).astype(np.float32))
        with no_grad():
            _, prob = head(y0)
        assert prob.shape == (1, 1, 64, 64)
        assert prob.data.min() > 0.0 and prob.data.max() < 1.0


class TestModelForward:
    def test_default_224_output_shape_and_chain(self):
        model = SwinTextUNet(ModelConfig(), dtype=np.float32, seed=0)
        x = Tensor(np.random.default_rng(0).random((1, 3, 224, 224)).astype(np.float32))
        text = embedding_batch(StubTextProvider(512), ["bilateral pulmonary infection"],
                               np.float32)
        with no_grad():
            _, prob = model(x, text, record_trace=True)
        assert prob.shape == (1, 1, 224, 224)
        trace = model.last_trace
        assert trace["stage_tokens"] == [(56 ** 2, 96), (28 ** 2, 192), (14 ** 2, 384), (7 ** 2, 768)]
        assert trace["decoder_grids"] == [7, 14, 28, 56, 112]
        assert trace["decoder_channels"] == [384, 192, 96, 48]

    def test_toy_output_shape(self):
        model = SwinTextUNet(TOY64_CONFIG, dtype=np.float32, seed=1)
        x = Tensor(np.random.default_rng(0).random((2, 3, 64, 64)).astype(np.float32))
        text = embedding_batch(StubTextProvider(32), ["upper left lung"] * 2, np.float32)
        with no_grad():
            _, prob = model(x, text, record_trace=True)
        assert prob.shape == (2, 1, 64, 64)
        assert (prob.data > 0).all() and (prob.data < 1).all()
        assert model.last_trace["decoder_grids"] == [2, 4, 8, 16, 32]

    def test_three_and_five_stage_variants(self):
        cfg3 = ModelConfig(image_size=32, patch_size=4, window=4, base_channels=8,
                           depths=(2, 2, 2), heads=(2, 4, 8), text_dim=16)
        m3 = SwinTextUNet(cfg3, dtype=np.float32, seed=0)
        x = Tensor(np.random.default_rng(0).random((1, 3, 32, 32)).astype(np.float32))
        t = embedding_batch(StubTextProvider(16), ["upper left lung"], np.float32)
        with no_grad():
            _, prob = m3(x, t, record_trace=True)
        assert prob.shape == (1, 1, 32, 32)
        assert m3.last_trace["decoder_grids"] == [2, 4, 8, 16]

        cfg5 = ModelConfig(image_size=64, patch_size=2, window=4, base_channels=8,
                           depths=(2, 2, 2, 2, 2), heads=(2, 4, 8, 8, 8), text_dim=16)
        m5 = SwinTextUNet(cfg5, dtype=np.float32, seed=0)
        x = Tensor(np.random.default_rng(1).random((1, 3, 64, 64)).astype(np.float32))
        with no_grad():
            _, prob = m5(x, t, record_trace=True)
        assert prob.shape == (1, 1, 64, 64)
        assert m5.last_trace["decoder_grids"] == [2, 4, 8, 16, 32]

    def test_wrong_input_size_rejected(self):
        model = SwinTextUNet(MICRO_CONFIG, dtype=F64, seed=0)
        with pytest.raises(ShapeError):
            model(Tensor(np.zeros((1, 3, 32, 32)), dtype=F64), None)

    def test_micro_model_gradcheck_subset(self):
        err = micro_model_gradcheck(seed=0, elements_per_tensor=3)
        assert err <= 1e-4


class TestDecoderStructure:
    def test_four_stage_fusion_counts(self):
        model = SwinTextUNet(ModelConfig(), dtype=np.float32, seed=0)
        # three skip-fused levels (S_3, S_2, S_1) plus the bottleneck fusion,
        # and exactly one trailing expand with no skip for patch size 4
        assert len(model.fuses) == 3
        assert len(model.expands) == 3
        assert len(model.final_expands) == 1
        assert model.bottleneck is not None

    def test_five_stage_has_no_trailing_expand(self):
        cfg = ModelConfig(image_size=64, patch_size=2, window=4, base_channels=8,
                          depths=(2, 2, 2, 2, 2), heads=(2, 4, 8, 8, 8), text_dim=16)
        model = SwinTextUNet(cfg, dtype=np.float32, seed=0)
        assert len(model.fuses) == 4
        assert len(model.final_expands) == 0


class TestAblationGradients:
    def test_bypassed_convfuse_receives_no_gradient(self):
        cfg = ModelConfig(**{**MICRO_CONFIG.__dict__, "use_convfuse": False})
        model = SwinTextUNet(cfg, dtype=F64, seed=0)
        x = Tensor(np.random.default_rng(0).random((1, 3, 16, 16)), dtype=F64)
        y = Tensor((np.random.default_rng(1).random((1, 1, 16, 16)) > 0.5).astype(F64))
        text = embedding_batch(StubTextProvider(cfg.text_dim), ["upper left lung"], F64)
        model.zero_grad()
        _, prob = model(x, text)
        backward(hybrid_loss(prob, y, LossConfig()))
        fuse_params = list(model.bottleneck.named_parameters())
        for fuse in model.fuses:
            fuse_params += list(fuse.named_parameters())
        assert fuse_params
        assert all(p.grad is None for _, p in fuse_params)
        assert any(p.grad is not None for _, p in model.encoder.named_parameters())

    def test_decoder_guidance_flag_builds_and_runs(self):
        cfg = ModelConfig(**{**MICRO_CONFIG.__dict__, "use_decoder_guidance": True})
        model = SwinTextUNet(cfg, dtype=F64, seed=0)
        assert len(model.dec_guidance) == len(model.fuses)
        x = Tensor(np.random.default_rng(0).random((1, 3, 16, 16)), dtype=F64)
        text = embedding_batch(StubTextProvider(cfg.text_dim), ["upper left lung"], F64)
        with no_grad():
            _, prob = model(x, text)
        assert prob.shape == (1, 1, 16, 16)
