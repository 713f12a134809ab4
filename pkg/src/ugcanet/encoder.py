"""Hierarchical Mix-Transformer encoder producing a four-level feature pyramid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

from .autodiff import ops
from .autodiff.nn import Module, ModuleList, Parameter
from .autodiff.tensor import Tensor


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    channels: tuple = (16, 32, 64, 128)
    depths: tuple = (1, 1, 1, 1)
    heads: tuple = (1, 1, 2, 4)
    sr_ratios: tuple = (4, 2, 2, 1)
    patch_sizes: tuple = (7, 3, 3, 3)
    strides: tuple = (4, 2, 2, 2)
    mlp_ratio: int = 4
    in_channels: int = 3

    def __post_init__(self):
        c = self.channels
        if any(len(t) != 4 for t in (c, self.depths, self.heads, self.sr_ratios, self.patch_sizes, self.strides)):
            raise ConfigError("encoder config needs four entries per stage")
        if any(a >= b for a, b in zip(c, c[1:])):
            raise ConfigError(f"stage widths must increase, got {c}")
        for ci, h in zip(c, self.heads):
            if ci % h:
                raise ConfigError(f"width {ci} not divisible by {h} heads")

    def total_stride(self, stage: int) -> int:
        return math.prod(self.strides[: stage + 1])

    def grid(self, height: int, width: int, stage: int) -> tuple:
        s = self.total_stride(stage)
        return height // s, width // s

    def validate_input(self, height: int, width: int) -> None:
        """Raise ConfigError when an input size breaks the resolution law."""
        total = self.total_stride(3)
        if height % total or width % total:
            raise ConfigError(f"input {height}x{width} must be divisible by {total}")
        for i, r in enumerate(self.sr_ratios):
            gh, gw = self.grid(height, width, i)
            if gh % r or gw % r:
                raise ConfigError(f"sr_ratio {r} does not divide stage-{i + 1} grid {gh}x{gw}")


PRESETS = {
    "tiny": EncoderConfig(),
    "b2-shape": EncoderConfig(
        channels=(64, 128, 320, 512), depths=(3, 4, 6, 3), heads=(1, 2, 5, 8), sr_ratios=(8, 4, 2, 1)
    ),
    "b3-shape": EncoderConfig(
        channels=(64, 128, 320, 512), depths=(3, 4, 18, 3), heads=(1, 2, 5, 8), sr_ratios=(8, 4, 2, 1)
    ),
}


class FeaturePyramid(NamedTuple):
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor


def check_pyramid(pyr: Sequence[Tensor], height: int, width: int, channels: Sequence[int]) -> None:
    """Assert F_i is [N, C_i, H / 2^(i+1), W / 2^(i+1)]."""
    for i, (f, c) in enumerate(zip(pyr, channels), start=1):
        want = (c, height >> (i + 1), width >> (i + 1))
        if tuple(f.shape[1:]) != want:
            raise ConfigError(f"F{i} has shape {f.shape[1:]}, expected {want}")


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.weight = Parameter((dim,), init="ones")
        self.bias = Parameter((dim,), init="zeros")
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.weight, self.bias, self.eps)


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, bias: bool = True):
        super().__init__()
        self.weight = Parameter((fan_out, fan_in), fan_in=fan_in)
        if bias:
            self.bias = Parameter((fan_out,), init="zeros")
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, groups=1, bias=True):
        super().__init__()
        self.weight = Parameter((cout, cin // groups, kernel, kernel), fan_in=cin // groups * kernel * kernel)
        if bias:
            self.bias = Parameter((cout,), init="zeros")
        else:
            self.bias = None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


def to_tokens(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, H*W, C]."""
    n, c, h, w = x.shape
    return ops.transpose(ops.reshape(x, (n, c, h * w)), (0, 2, 1))


def to_grid(t: Tensor, h: int, w: int) -> Tensor:
    """[N, H*W, C] -> [N, C, H, W]."""
    n, length, c = t.shape
    if length != h * w:
        raise ConfigError(f"{length} tokens cannot form a {h}x{w} grid")
    return ops.reshape(ops.transpose(t, (0, 2, 1)), (n, c, h, w))


class OverlapPatchEmbed(Module):
    """Strided conv with kernel > stride, then LayerNorm over channels."""

    def __init__(self, cin: int, cout: int, patch: int, stride: int):
        super().__init__()
        # kernel == stride means plain non-overlapping patches, no padding
        pad = patch // 2 if patch > stride else 0
        self.proj = Conv2d(cin, cout, patch, stride=stride, padding=pad)
        self.norm = LayerNorm(cout)

    def forward(self, x: Tensor):
        y = self.proj(x)
        _, _, h, w = y.shape
        return self.norm(to_tokens(y)), h, w


class EfficientSelfAttention(Module):
    """Multi-head attention with keys/values from a grid reduced by ``sr_ratio``."""

    def __init__(self, dim: int, heads: int, sr_ratio: int):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.sr_ratio = dim, heads, sr_ratio
        self.scale = (dim // heads) ** -0.5
        self.q = Linear(dim, dim)
        self.k = Linear(dim, dim)
        self.v = Linear(dim, dim)
        self.proj = Linear(dim, dim)
        if sr_ratio > 1:
            self.sr = Conv2d(dim, dim, sr_ratio, stride=sr_ratio)
            self.sr_norm = LayerNorm(dim)

    def _split(self, t: Tensor) -> Tensor:
        n, length, _ = t.shape
        return ops.transpose(ops.reshape(t, (n, length, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def attention_weights(self, x: Tensor, h: int, w: int):
        n, length, c = x.shape
        if self.sr_ratio > 1:
            if h % self.sr_ratio or w % self.sr_ratio:
                raise ConfigError(f"sr_ratio {self.sr_ratio} does not divide grid {h}x{w}")
            kv_in = self.sr_norm(to_tokens(self.sr(to_grid(x, h, w))))
        else:
            kv_in = x
        q = self._split(self.q(x))
        k = self._split(self.k(kv_in))
        v = self._split(self.v(kv_in))
        scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), self.scale)
        return ops.softmax(scores), v

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        n, length, c = x.shape
        attn, v = self.attention_weights(x, h, w)
        out = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (n, length, c))
        return self.proj(out)


class MixFFN(Module):
    """FC -> 3x3 depthwise conv -> GELU -> FC."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = Linear(dim, hidden)
        self.dwconv = Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = Linear(hidden, dim)

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        if x.shape[1] != h * w:
            raise ConfigError(f"{x.shape[1]} tokens do not match grid {h}x{w}")
        y = self.fc1(x)
        y = to_tokens(self.dwconv(to_grid(y, h, w)))
        return self.fc2(ops.gelu(y))


class Block(Module):
    """Pre-norm residual attention + Mix-FFN."""

    def __init__(self, dim: int, heads: int, sr_ratio: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = EfficientSelfAttention(dim, heads, sr_ratio)
        self.norm2 = LayerNorm(dim)
        self.ffn = MixFFN(dim, dim * mlp_ratio)

    def forward(self, x: Tensor, h: int, w: int) -> Tensor:
        x = ops.add(x, self.attn(self.norm1(x), h, w))
        return ops.add(x, self.ffn(self.norm2(x), h, w))


class Stage(Module):
    def __init__(self, cin: int, cfg: EncoderConfig, i: int, overlap: bool = True):
        super().__init__()
        dim = cfg.channels[i]
        patch = cfg.patch_sizes[i] if overlap else cfg.strides[i]
        self.embed = OverlapPatchEmbed(cin, dim, patch, cfg.strides[i])
        self.blocks = ModuleList(Block(dim, cfg.heads[i], cfg.sr_ratios[i], cfg.mlp_ratio) for _ in range(cfg.depths[i]))
        self.norm = LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        t, h, w = self.embed(x)
        for blk in self.blocks:
            t = blk(t, h, w)
        return to_grid(self.norm(t), h, w)


class MiTEncoder(Module):
    """Four stages; stage ``i`` emits F_i at 1 / 2^(i+1) resolution.

    ``overlap=False`` uses kernel == stride patching (plain ViT-style patches).
    """

    def __init__(self, cfg: EncoderConfig = PRESETS["tiny"], img_size: Optional[tuple] = None, overlap: bool = True):
        super().__init__()
        self.cfg = cfg
        if img_size is not None:
            cfg.validate_input(*img_size)
        cin = cfg.in_channels
        self.stages = ModuleList()
        for i in range(4):
            self.stages.append(Stage(cin, cfg, i, overlap))
            cin = cfg.channels[i]

    def forward(self, x: Tensor) -> FeaturePyramid:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ConfigError(f"expected [N, {self.cfg.in_channels}, H, W] input, got {x.shape}")
        self.cfg.validate_input(x.shape[2], x.shape[3])
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return FeaturePyramid(*feats)
