"""Global context unit: grouped compact generalized non-local block + squeeze-excitation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .autodiff import ops
from .autodiff.nn import Module, ModuleList, Parameter
from .autodiff.tensor import Tensor
from .encoder import ConfigError, Conv2d, FeaturePyramid, Linear


@dataclass(frozen=True)
class CgnlConfig:
    groups: int = 4
    order: int = 1

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError(f"CGNL kernel order must be >= 1, got {self.order}")
        if self.groups < 1:
            raise ConfigError(f"CGNL groups must be >= 1, got {self.groups}")


@dataclass(frozen=True)
class SeConfig:
    reduction: int = 4


def compact_bilinear(theta: Tensor, phi: Tensor, g: Tensor, order: int = 1) -> Tensor:
    """Per-row ``sum_p theta^p * <phi^p, g> / (p! * M)`` for [N, G, M] operands.

    Associating ``phi^T g`` first keeps the cost linear in ``M`` instead of
    materializing the M x M affinity ``theta phi^T``.
    """
    m = theta.shape[-1]
    out = None
    tp, pp = theta, phi
    for p in range(1, order + 1):
        if p > 1:
            tp = ops.mul(tp, theta)
            pp = ops.mul(pp, phi)
        att = ops.sum(ops.mul(pp, g), axis=-1, keepdims=True)  # [N, G, 1]
        term = ops.scale(ops.mul(tp, ops.expand(att, tp.shape)), 1.0 / (math.factorial(p) * m))
        out = term if out is None else ops.add(out, term)
    return out


class CGNL(Module):
    """Grouped compact generalized non-local block with a residual connection.

    theta/phi/g are 1x1 convs; each channel group is flattened over
    (channels, H, W) and mixed by :func:`compact_bilinear`. A grouped 1x1 conv
    and a per-channel learnable scale map the result back before the residual.
    """

    def __init__(self, channels: int, cfg: CgnlConfig = CgnlConfig()):
        super().__init__()
        if channels % cfg.groups:
            raise ConfigError(f"CGNL groups {cfg.groups} must divide channels {channels}")
        self.cfg = cfg
        self.channels = channels
        self.theta = Conv2d(channels, channels, 1, bias=False)
        self.phi = Conv2d(channels, channels, 1, bias=False)
        self.g = Conv2d(channels, channels, 1, bias=False)
        self.z = Conv2d(channels, channels, 1, groups=cfg.groups, bias=False)
        self.gamma = Parameter((channels,), init="ones")

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        grp = self.cfg.groups
        shape = (n, grp, (c // grp) * h * w)
        t = ops.reshape(self.theta(x), shape)
        p = ops.reshape(self.phi(x), shape)
        g = ops.reshape(self.g(x), shape)
        y = ops.reshape(compact_bilinear(t, p, g, self.cfg.order), (n, c, h, w))
        y = self.z(y)
        gamma = ops.expand(ops.reshape(self.gamma, (1, c, 1, 1)), y.shape)
        return ops.add(x, ops.mul(y, gamma))


class SqueezeExcitation(Module):
    """Channel gates sigmoid(FC2(relu(FC1(avgpool(x))))) applied to x."""

    def __init__(self, channels: int, cfg: SeConfig = SeConfig()):
        super().__init__()
        if channels % cfg.reduction:
            raise ConfigError(f"SE reduction {cfg.reduction} must divide channels {channels}")
        hidden = channels // cfg.reduction
        self.fc1 = Linear(channels, hidden)
        self.fc2 = Linear(hidden, channels)

    def gates(self, x: Tensor) -> Tensor:
        s = ops.global_avg_pool(x)
        return ops.sigmoid(self.fc2(ops.relu(self.fc1(s))))

    def forward(self, x: Tensor) -> Tensor:
        n, c, _, _ = x.shape
        u = ops.expand(ops.reshape(self.gates(x), (n, c, 1, 1)), x.shape)
        return ops.mul(x, u)


class ContextLevel(Module):
    def __init__(self, channels: int, use_cgnl: bool, use_se: bool, cgnl_cfg: CgnlConfig, se_cfg: SeConfig):
        super().__init__()
        self.cgnl: Optional[CGNL] = CGNL(channels, cgnl_cfg) if use_cgnl else None
        self.se: Optional[SqueezeExcitation] = SqueezeExcitation(channels, se_cfg) if use_se else None

    def forward(self, x: Tensor) -> Tensor:
        if self.cgnl is not None:
            x = self.cgnl(x)
        if self.se is not None:
            x = self.se(x)
        return x


class GlobalContextUnit(Module):
    """F1 passes through; F2..F4 each get their own CGNL then SE."""

    def __init__(
        self,
        channels,
        use_cgnl: bool = True,
        use_se: bool = True,
        cgnl_cfg: CgnlConfig = CgnlConfig(),
        se_cfg: SeConfig = SeConfig(),
    ):
        super().__init__()
        self.levels = ModuleList(ContextLevel(c, use_cgnl, use_se, cgnl_cfg, se_cfg) for c in channels[1:])

    def forward(self, pyr: FeaturePyramid) -> FeaturePyramid:
        rest = [lvl(f) for lvl, f in zip(self.levels, pyr[1:])]
        return FeaturePyramid(pyr[0], *rest)
