import numpy as np
import pytest

from ugcanet.autodiff import Tensor, ops
from ugcanet.gradcheck import check_fn
from ugcanet.encoder import (
    PRESETS,
    Block,
    ConfigError,
    EfficientSelfAttention,
    EncoderConfig,
    MixFFN,
    MiTEncoder,
    check_pyramid,
    to_grid,
    to_tokens,
)


def softmax(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def dense_attention(att, x):
    """Plain multi-head attention straight from the weights, float64."""
    w = lambda lin: (lin.weight.data.astype(np.float64), lin.bias.data.astype(np.float64))  # noqa: E731
    n, length, c = x.shape
    hd = c // att.heads

    def proj(lin):
        wt, b = w(lin)
        return (x @ wt.T + b).reshape(n, length, att.heads, hd).transpose(0, 2, 1, 3)

    q, k, v = proj(att.q), proj(att.k), proj(att.v)
    a = softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(hd))
    out = (a @ v).transpose(0, 2, 1, 3).reshape(n, length, c)
    wt, b = w(att.proj)
    return out @ wt.T + b


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_sr1_attention_equals_dense_reference(rng, heads):
    att = EfficientSelfAttention(16, heads, 1).initialize(3)
    x = rng.standard_normal((2, 12, 16)).astype(np.float32)
    got = att(Tensor(x), 3, 4).data
    assert np.abs(got - dense_attention(att, x.astype(np.float64))).max() <= 1e-5


def test_reduced_attention_key_count(rng):
    att = EfficientSelfAttention(16, 2, 2).initialize(0)
    x = Tensor(rng.standard_normal((1, 64, 16)))
    a, v = att.attention_weights(x, 8, 8)
    assert a.shape == (1, 2, 64, 16)
    np.testing.assert_allclose(a.data.sum(-1), 1.0, rtol=1e-5)
    with pytest.raises(ConfigError):
        att.attention_weights(Tensor(rng.standard_normal((1, 63, 16))), 7, 9)


def test_token_grid_roundtrip(rng):
    x = Tensor(rng.standard_normal((2, 5, 3, 4)))
    t = to_tokens(x)
    assert t.shape == (2, 12, 5)
    np.testing.assert_array_equal(to_grid(t, 3, 4).data, x.data)
    # token order is row-major over (h, w)
    np.testing.assert_array_equal(t.data[0, 5], x.data[0, :, 1, 1])


@pytest.mark.parametrize("size", [32, 64, 96])
def test_pyramid_strides(size):
    enc = MiTEncoder(PRESETS["tiny"]).initialize(0)
    pyr = enc(Tensor(np.zeros((1, 3, size, size))))
    for i, f in enumerate(pyr):
        assert f.shape == (1, PRESETS["tiny"].channels[i], size // 2 ** (i + 2), size // 2 ** (i + 2))
    check_pyramid(pyr, size, size, PRESETS["tiny"].channels)


def test_non_overlapping_patches_keep_grid():
    enc = MiTEncoder(PRESETS["tiny"], overlap=False).initialize(0)
    pyr = enc(Tensor(np.zeros((1, 3, 64, 64))))
    assert [f.shape[-1] for f in pyr] == [16, 8, 4, 2]


def test_input_validation():
    cfg = PRESETS["tiny"]
    with pytest.raises(ConfigError):
        cfg.validate_input(48, 64)
    with pytest.raises(ConfigError):
        # 32x32 input: stage-1 grid 8 is fine, but a ratio of 16 is not
        EncoderConfig(sr_ratios=(16, 2, 2, 1)).validate_input(32, 32)
    with pytest.raises(ConfigError):
        MiTEncoder(cfg)(Tensor(np.zeros((1, 1, 32, 32))))


def test_config_invariants():
    with pytest.raises(ConfigError):
        EncoderConfig(channels=(16, 16, 32, 64))
    with pytest.raises(ConfigError):
        EncoderConfig(heads=(3, 1, 2, 4))
    with pytest.raises(ConfigError):
        EncoderConfig(depths=(1, 1, 1))


def test_large_preset_structure():
    cfg = PRESETS["b3-shape"]
    assert cfg.channels == (64, 128, 320, 512)
    assert cfg.depths == (3, 4, 18, 3)
    assert cfg.sr_ratios == (8, 4, 2, 1)
    cfg.validate_input(384, 384)
    cfg.validate_input(480, 480)


def test_encoder_deterministic_init():
    a = MiTEncoder(PRESETS["tiny"]).initialize(9)
    b = MiTEncoder(PRESETS["tiny"]).initialize(9)
    for (n1, p1), (n2, p2) in zip(a.named_parameters(), b.named_parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)


def test_attention_backward_reaches_all_weights(rng):
    att = EfficientSelfAttention(8, 2, 2).initialize(0)
    x = Tensor(rng.standard_normal((1, 16, 8)), requires_grad=True)
    ops.sum(att(x, 4, 4)).backward()
    for name, p in att.named_parameters():
        assert p.grad is not None, name


def test_sr1_attention_is_permutation_equivariant(rng):
    att = EfficientSelfAttention(8, 2, 1).initialize(5)
    x = rng.standard_normal((1, 12, 8))
    perm = rng.permutation(12)
    a = att(Tensor(x), 3, 4).data[:, perm]
    b = att(Tensor(x[:, perm]), 3, 4).data
    assert np.abs(a - b).max() <= 1e-5


def test_mix_ffn_translation_covariance(rng):
    ffn = MixFFN(4, 8).initialize(2)
    grid = np.zeros((1, 4, 12, 12))
    grid[0, :, 3:6, 3:6] = rng.standard_normal((4, 3, 3))
    shifted = np.roll(grid, (2, 2), axis=(2, 3))
    out = to_grid(ffn(to_tokens(Tensor(grid)), 12, 12), 12, 12).data
    out_s = to_grid(ffn(to_tokens(Tensor(shifted)), 12, 12), 12, 12).data
    # interior rows/cols away from the zero padding
    assert np.abs(out_s[..., 4:10, 4:10] - out[..., 2:8, 2:8]).max() <= 1e-5
    with pytest.raises(ConfigError):
        ffn(to_tokens(Tensor(grid)), 11, 12)


def test_block_with_zero_ffn_keeps_residual(rng):
    blk = Block(8, 2, 1, 4).initialize(0)
    for lin in (blk.ffn.fc1, blk.ffn.fc2):
        lin.weight.data[...] = 0
        lin.bias.data[...] = 0
    x = Tensor(rng.standard_normal((1, 16, 8)))
    after_attn = ops.add(x, blk.attn(blk.norm1(x), 4, 4)).data
    np.testing.assert_allclose(blk(x, 4, 4).data, after_attn, atol=1e-6)


def test_mix_ffn_gradcheck():
    ffn = MixFFN(2, 4).initialize(1)
    for _, p in ffn.named_parameters():
        p.data = p.data.astype(np.float64)
    x = np.random.default_rng(0).standard_normal((1, 8, 2))
    res = check_fn("mix_ffn", lambda t: ffn(t, 2, 4), [x], seed=0, coords=16, rel_tol=1e-2)
    assert res.passed, res.line()
