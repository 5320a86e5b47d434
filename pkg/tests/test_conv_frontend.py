"""Conv U-Net front-end: shapes, residual identities, parameter tallies, gradients."""

import numpy as np
import pytest

from lvnet.config import ConvUNetConfig
from lvnet.conv_frontend import ConvBlock, ConvUNet, Downsample, MSFFBlock, Upsample
from lvnet.errors import ConfigError
from lvnet.numerics import ParameterStore, Tensor, grad_check, ops, profiling

from conftest import jitter_biases


def f32(rng, *shape):
    return Tensor(rng.standard_normal(shape).astype(np.float32))


def probe(out):
    return ops.sum(out * Tensor(np.random.default_rng(list(out.shape)).standard_normal(out.shape)))


def zero_all_but(store, keep=()):
    for name, p in store.items():
        if not any(k in name for k in keep):
            p.data[...] = 0


class TestBlocks:
    def test_msff_shape(self, rng):
        block = MSFFBlock(ParameterStore(), "m", 6, 6, rng)
        assert block(f32(rng, 1, 6, 32, 32)).shape == (1, 6, 32, 32)

    def test_msff_zero_weights_is_residual(self, rng):
        store = ParameterStore()
        block = MSFFBlock(store, "m", 6, 6, rng)
        zero_all_but(store)
        x = f32(rng, 1, 6, 8, 8)
        np.testing.assert_array_equal(block(x).data, np.maximum(x.data, 0))

    def test_msff_parameter_tally(self, rng):
        store = ParameterStore()
        MSFFBlock(store, "m", 6, 6, rng)
        expected = (9 + 25 + 49) * 36 + 3 * 6 + 9 * 18 * 6 + 6
        assert sum(p.size for _, p in store.items()) == expected

    def test_conv_block_zero_weights_and_shape(self, rng):
        store = ParameterStore()
        block = ConvBlock(store, "c", 4, 4, rng)
        x = f32(rng, 2, 4, 8, 8)
        assert block(x).shape == x.shape
        zero_all_but(store)
        np.testing.assert_array_equal(block(x).data, np.maximum(x.data, 0))

    def test_conv_block_gradient(self, rng):
        store = ParameterStore()
        block = ConvBlock(store, "c", 4, 4, rng)
        store.cast(np.float64)
        x = Tensor(rng.standard_normal((1, 4, 8, 8)))
        params = [store[n] for n in store.names()]
        assert grad_check(lambda x, *ps: probe(block(x)), [x, *params]) < 1e-4

    def test_downsample_upsample_shapes(self, rng):
        store = ParameterStore()
        down = Downsample(store, "d", 6, 12, rng)
        up = Upsample(store, "u", 12, 6, rng)
        x = f32(rng, 1, 6, 32, 32)
        y = down(x)
        assert y.shape == (1, 12, 16, 16)
        assert up(y).shape == x.shape
        with pytest.raises(ConfigError):
            down(f32(rng, 1, 6, 7, 8))

    def test_downsample_macs_match_analytic(self, rng):
        from lvnet.complexity import downsample_macs
        down = Downsample(ParameterStore(), "d", 6, 12, rng)
        with profiling.count_macs() as counter:
            down(f32(rng, 1, 6, 32, 32))
        assert sum(counter.values()) == downsample_macs(16 * 16, 6, 12)

    def test_upsample_gradient(self, rng):
        store = ParameterStore()
        up = Upsample(store, "u", 4, 2, rng)
        store.cast(np.float64)
        x = Tensor(rng.standard_normal((1, 4, 4, 4)))
        assert grad_check(lambda x, w, b: probe(up(x)), [x, store["u.conv.weight"], store["u.conv.bias"]]) < 1e-4


class TestConvUNet:
    def test_encode_decode_shapes(self, rng):
        net = ConvUNet(ParameterStore(), ConvUNetConfig(), rng)
        emb, skips = net.encode(f32(rng, 8, 1, 64, 64))
        assert emb.shape == (8, 24, 16, 16)
        assert skips.full.shape == (8, 6, 64, 64) and skips.half.shape == (8, 12, 32, 32)
        assert net.decode(f32(rng, 8, 24, 16, 16), skips).shape == (8, 6, 64, 64)

    def test_disabled_uses_patch_projection(self, rng):
        store = ParameterStore()
        net = ConvUNet(store, ConvUNetConfig(enabled=False), rng)
        emb, skips = net.encode(f32(rng, 2, 1, 16, 16))
        assert emb.shape == (2, 24, 4, 4) and skips is None
        assert net.decode(emb, None).shape == (2, 6, 16, 16)
        assert store.names() == ["conv.patch_embed.bias", "conv.patch_embed.weight",
                                 "conv.patch_unembed.bias", "conv.patch_unembed.weight"]

    def test_res_block_mode(self, rng):
        store = ParameterStore()
        ConvUNet(store, ConvUNetConfig(msff_mode="res_block"), rng)
        assert not any("branch" in n for n in store.names())
        assert "conv.enc1.conv.weight" in store

    def test_rejects_sizes_not_divisible_by_four(self, rng):
        net = ConvUNet(ParameterStore(), ConvUNetConfig(), rng)
        with pytest.raises(ConfigError):
            net.encode(f32(rng, 1, 1, 18, 16))

    def test_zero_transformer_output_keeps_skip_path(self, rng):
        net = ConvUNet(ParameterStore(), ConvUNetConfig(), rng)
        _, skips = net.encode(Tensor(rng.random((1, 1, 16, 16)).astype(np.float32)))
        out = net.decode(Tensor(np.zeros((1, 24, 4, 4), np.float32)), skips).data
        assert np.isfinite(out).all() and np.abs(out).max() > 0

    def test_frame_permutation_equivariance(self, rng):
        net = ConvUNet(ParameterStore(), ConvUNetConfig(), rng)
        x = rng.random((4, 1, 16, 16)).astype(np.float32)
        perm = np.array([2, 0, 3, 1])
        emb, skips = net.encode(Tensor(x))
        emb_p, skips_p = net.encode(Tensor(x[perm]))
        np.testing.assert_array_equal(emb_p.data, emb.data[perm])
        np.testing.assert_array_equal(net.decode(emb_p, skips_p).data, net.decode(emb, skips).data[perm])

    def test_end_to_end_gradient(self, rng):
        store = ParameterStore()
        net = ConvUNet(store, ConvUNetConfig(base_channels=2, embed_dim=4), rng)
        store.cast(np.float64)
        jitter_biases(store)
        x = Tensor(rng.random((1, 1, 16, 16)))

        def f(x, *params):
            emb, skips = net.encode(x)
            return probe(net.decode(emb, skips))

        params = [store[n] for n in ("conv.enc1.branch5.weight", "conv.down2.conv.weight", "conv.fuse1.bias")]
        assert grad_check(f, [x, *params], max_elements=12) < 1e-3
