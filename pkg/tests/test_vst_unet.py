"""Video-swin blocks: window geometry, a dense masked-attention oracle, stage shapes."""

import math

import numpy as np
import pytest

from lvnet.config import VSTConfig
from lvnet.errors import ConfigError
from lvnet.numerics import ParameterStore, Tensor
from lvnet.vst_unet import (
    UPSAMPLER_TYPES,
    Conv2dDecoderBlock,
    Conv3dDecoderBlock,
    PatchExpand,
    PatchMerging,
    VSTBlock,
    VSTDecoder,
    VSTEncoder,
    attention_mask,
    effective_window,
    padded_grid,
)


GELU = np.vectorize(lambda u: 0.5 * u * (1 + math.erf(u / math.sqrt(2))))


def oracle_window(grid, window, shifted):
    win, shift = [], []
    for g, w in zip(grid, window):
        win.append(min(g, w))
        shift.append(w // 2 if (shifted and g > w) else 0)
    return win, shift


def dense_block_oracle(block: VSTBlock, x: np.ndarray, window) -> np.ndarray:
    """Block output by brute force over all token pairs of the unshifted grid.

    With cyclic shift s and window w along an axis, the shifted partition in
    original coordinates groups index c as (c + w - s) // w. Two tokens interact
    iff they share a group on every axis; bias uses their coordinate difference.
    """
    n, t, h, w, d = x.shape
    win, shift = oracle_window((t, h, w), window, block.shifted)
    attn = block.attn
    heads, hd = attn.heads, attn.head_dim

    def ln(a, norm):
        mu = a.mean(-1, keepdims=True)
        var = ((a - mu) ** 2).mean(-1, keepdims=True)
        return (a - mu) / np.sqrt(var + norm.eps) * norm.gamma.data + norm.beta.data

    coords = np.array([(ti, yi, xi) for ti in range(t) for yi in range(h) for xi in range(w)])
    groups = np.stack([(coords[:, a] + win[a] - shift[a]) // win[a] for a in range(3)], axis=1)
    same = (groups[:, None, :] == groups[None, :, :]).all(-1)
    rel = coords[:, None, :] - coords[None, :, :]
    tables = [tb.data for tb in attn.rel_bias.tables]
    out = np.empty_like(x)
    for b in range(n):
        tokens = x[b].reshape(-1, d)
        qkv = ln(tokens, block.norm1) @ attn.qkv.weight.data + attn.qkv.bias.data
        q, k, v = qkv[:, :d], qkv[:, d:2 * d], qkv[:, 2 * d:]
        heads_out = []
        for hh in range(heads):
            sl = slice(hh * hd, (hh + 1) * hd)
            logits = (q[:, sl] * attn.scale) @ k[:, sl].T
            bias = np.zeros_like(logits)
            for a in range(3):
                idx = np.where(same, rel[..., a] + window[a] - 1, 0)
                bias += tables[a][idx, hh]
            logits = np.where(same, logits + bias, -np.inf)
            logits -= logits.max(axis=1, keepdims=True)
            e = np.exp(logits)
            heads_out.append((e / e.sum(axis=1, keepdims=True)) @ v[:, sl])
        y = np.concatenate(heads_out, axis=1) @ attn.proj.weight.data + attn.proj.bias.data
        z = tokens + y
        hidden = ln(z, block.norm2) @ block.fc1.weight.data + block.fc1.bias.data
        z = z + GELU(hidden) @ block.fc2.weight.data + block.fc2.bias.data
        out[b] = z.reshape(t, h, w, d)
    return out


def randomized_block(dim, heads, window, shifted, seed):
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    cfg = VSTConfig(embed_dim=dim, window=window)
    block = VSTBlock(store, "blk", dim, heads, cfg, rng, shifted=shifted)
    store.cast(np.float64)
    for name, param in store.items():
        # non-trivial norms and relative-position tables so every term is exercised
        param.data = param.data + 0.3 * rng.standard_normal(param.shape)
    return block


class TestWindowGeometry:
    def test_effective_window_clamps_and_disables_shift(self):
        assert effective_window((2, 14, 14), (2, 7, 7), True) == ((2, 7, 7), (0, 3, 3))
        assert effective_window((2, 7, 7), (2, 7, 7), True) == ((2, 7, 7), (0, 0, 0))
        assert effective_window((8, 4, 4), (2, 7, 7), True) == ((2, 4, 4), (1, 0, 0))
        assert effective_window((8, 16, 16), (8, 7, 7), False) == ((8, 7, 7), (0, 0, 0))

    def test_padded_grid(self):
        assert padded_grid((2, 10, 9), (2, 7, 7)) == (2, 14, 14)
        assert padded_grid((2, 14, 14), (2, 7, 7)) == (2, 14, 14)

    def test_mask_absent_when_not_needed(self):
        assert attention_mask((2, 14, 14), (2, 14, 14), (2, 7, 7), (0, 0, 0)) is None

    def test_mask_properties(self):
        m = attention_mask((2, 14, 14), (2, 14, 14), (2, 7, 7), (0, 3, 3))
        assert m.shape == (4, 98, 98)
        np.testing.assert_array_equal(m, np.transpose(m, (0, 2, 1)))
        assert (np.diagonal(m, axis1=1, axis2=2) == 0).all()
        # the top-left window never wraps, so it is fully visible
        assert (m[0] == 0).all()
        assert (m[3] < 0).any()


class TestShiftedWindowOracle:
    @pytest.mark.parametrize("grid,shifted", [
        ((2, 14, 14), True),
        ((2, 14, 14), False),
        ((2, 10, 9), True),
        ((2, 10, 9), False),
        ((1, 9, 16), True),
        ((2, 7, 7), True),
    ])
    def test_block_matches_dense_attention(self, grid, shifted):
        window = (2, 7, 7)
        block = randomized_block(8, 2, window, shifted, seed=sum(grid))
        x = np.random.default_rng(5).standard_normal((1, *grid, 8))
        got = block(Tensor(x)).data
        np.testing.assert_allclose(got, dense_block_oracle(block, x, window), atol=1e-5, rtol=0)

    def test_temporal_shift(self):
        window = (2, 7, 7)
        block = randomized_block(6, 3, window, True, seed=3)
        x = np.random.default_rng(6).standard_normal((2, 4, 7, 8, 6))
        np.testing.assert_allclose(block(Tensor(x)).data, dense_block_oracle(block, x, window), atol=1e-5)


class TestStages:
    def test_patch_merging(self, rng):
        store = ParameterStore()
        merge = PatchMerging(store, "m", 4, rng)
        y = merge(Tensor(rng.standard_normal((1, 2, 6, 8, 4)).astype(np.float32)))
        assert y.shape == (1, 2, 3, 4, 8)
        assert store["m.reduction.weight"].shape == (16, 8)
        with pytest.raises(ConfigError):
            merge(Tensor(np.zeros((1, 2, 5, 8, 4), np.float32)))

    @pytest.mark.parametrize("kind", sorted(UPSAMPLER_TYPES))
    def test_upsamplers_shape(self, rng, kind):
        up = UPSAMPLER_TYPES[kind](ParameterStore(), "u", 8, rng)
        y = up(Tensor(rng.standard_normal((1, 2, 3, 4, 8)).astype(np.float32)))
        assert y.shape == (1, 2, 6, 8, 4)

    def test_bilinear_upsampler_preserves_constants(self, rng):
        store = ParameterStore()
        up = UPSAMPLER_TYPES["bilinear"](store, "u", 4, rng)
        x = np.ones((1, 1, 3, 3, 4), np.float32) * np.arange(4, dtype=np.float32)
        y = up(Tensor(x)).data
        np.testing.assert_allclose(y, np.broadcast_to(np.arange(4.0) @ store["u.proj.weight"].data, y.shape),
                                   rtol=1e-5)

    def test_patch_expand_is_normalized(self, rng):
        y = PatchExpand(ParameterStore(), "e", 8, rng)(Tensor(rng.standard_normal((1, 1, 2, 2, 8)).astype(np.float32)))
        np.testing.assert_allclose(y.data.mean(-1), 0.0, atol=1e-5)

    @pytest.mark.parametrize("block_type", [Conv2dDecoderBlock, Conv3dDecoderBlock])
    def test_conv_decoder_blocks_shape(self, rng, block_type):
        block = block_type(ParameterStore(), "b", 4, rng)
        x = Tensor(rng.standard_normal((1, 3, 4, 5, 4)).astype(np.float32))
        assert block(x).shape == x.shape

    def test_conv3d_block_mixes_time_conv2d_does_not(self, rng):
        x = np.zeros((1, 3, 4, 4, 4), np.float32)
        x2 = x.copy()
        x2[0, 0] = rng.standard_normal((4, 4, 4))  # perturb frame 0 only
        for block_type, mixes in ((Conv2dDecoderBlock, False), (Conv3dDecoderBlock, True)):
            block = block_type(ParameterStore(), "b", 4, np.random.default_rng(0))
            diff = np.abs(block(Tensor(x2)).data - block(Tensor(x)).data)[0, 1].max()
            assert (diff > 0) == mixes

    def test_encoder_decoder_shapes(self, rng):
        cfg = VSTConfig()
        store = ParameterStore()
        enc, dec = VSTEncoder(store, cfg, rng), VSTDecoder(store, cfg, rng)
        x = Tensor(rng.standard_normal((1, 2, 16, 16, 24)).astype(np.float32))
        bottleneck, skips = enc(x)
        assert bottleneck.shape == (1, 2, 2, 2, 192)
        assert [s.shape for s in skips] == [(1, 2, 16, 16, 24), (1, 2, 8, 8, 48), (1, 2, 4, 4, 96)]
        assert dec(bottleneck, skips).shape == x.shape

    def test_parameter_names(self, rng):
        store = ParameterStore()
        VSTEncoder(store, VSTConfig(), rng)
        assert "vst.encoder.stage0.block1.attn.rel_pos.t" in store
        assert "vst.encoder.merge2.reduction.weight" in store
        assert not any(n.startswith("vst.encoder.merge3") for n in store.names())
