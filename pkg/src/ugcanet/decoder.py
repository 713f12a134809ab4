"""Feature-aligned pyramid decoder: selection (FSM) and alignment (FAM) modules."""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import ops
from .autodiff.nn import Module, ModuleList
from .autodiff.tensor import Tensor
from .encoder import ConfigError, Conv2d, FeaturePyramid, Linear


@dataclass(frozen=True)
class DecoderConfig:
    width: int = 32
    offset_kernel: int = 3
    deform_kernel: int = 3
    head_upsample: int = 4

    def __post_init__(self):
        if self.width <= 0:
            raise ConfigError(f"decoder width must be positive, got {self.width}")


class FSM(Module):
    """Channel reweighting with an input shortcut, then 1x1 projection to D channels."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.fc = Linear(cin, cin)
        self.proj = Conv2d(cin, cout, 1)

    def forward(self, x: Tensor) -> Tensor:
        n, c, _, _ = x.shape
        u = ops.sigmoid(self.fc(ops.global_avg_pool(x)))
        scaled = ops.mul(x, ops.expand(ops.reshape(u, (n, c, 1, 1)), x.shape))
        return self.proj(ops.add(scaled, x))


class FAM(Module):
    """Align an upsampled coarse map to a fine map with a deformable conv, then add."""

    def __init__(self, width: int, offset_kernel: int = 3, deform_kernel: int = 3):
        super().__init__()
        k = deform_kernel
        self.k = k
        self.offset = Conv2d(2 * width, 2 * k * k, offset_kernel, padding=offset_kernel // 2)
        self.offset.weight.init = "zeros"
        self.dcn = Conv2d(width, width, k, padding=k // 2)

    def offsets(self, coarse_up: Tensor, fine: Tensor) -> Tensor:
        return self.offset(ops.concat([fine, coarse_up], axis=1))

    def forward(self, coarse_up: Tensor, fine: Tensor) -> Tensor:
        if coarse_up.shape != fine.shape:
            raise ConfigError(f"FAM inputs differ: coarse {coarse_up.shape} vs fine {fine.shape}")
        off = self.offsets(coarse_up, fine)
        aligned = ops.deform_conv2d(
            coarse_up, self.dcn.weight, off, self.dcn.bias, stride=1, padding=self.k // 2
        )
        return ops.add(aligned, fine)


class FaPNDecoder(Module):
    """Top-down fusion F4 -> F1, then a 1x1 logit head upsampled to input size."""

    def __init__(self, channels, cfg: DecoderConfig = DecoderConfig()):
        super().__init__()
        self.cfg = cfg
        d = cfg.width
        self.fsm = ModuleList(FSM(c, d) for c in channels)
        self.fam = ModuleList(FAM(d, cfg.offset_kernel, cfg.deform_kernel) for _ in channels[:-1])
        self.head = Conv2d(d, 1, 1)

    def fuse(self, pyr: FeaturePyramid) -> Tensor:
        running = self.fsm[3](pyr[3])
        for i in (2, 1, 0):
            fine = self.fsm[i](pyr[i])
            coarse = ops.bilinear_upsample(running, 2)
            running = self.fam[i](coarse, fine)
        return running

    def forward(self, pyr: FeaturePyramid) -> Tensor:
        return ops.bilinear_upsample(self.head(self.fuse(pyr)), self.cfg.head_upsample)
