"""UGCANet assembly: encoder -> global context unit -> (FaPN decoder, classification branch)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .autodiff.nn import Module
from .autodiff.tensor import Tensor
from .context import CgnlConfig, GlobalContextUnit, SeConfig
from .decoder import DecoderConfig, FaPNDecoder
from .encoder import PRESETS, EncoderConfig, FeaturePyramid, MiTEncoder
from .heads import ClassificationBranch, TaskOutputs


@dataclass(frozen=True)
class ModelConfig:
    preset: str = "tiny"
    use_cgnl: bool = True
    use_se: bool = True
    cgnl: CgnlConfig = field(default_factory=CgnlConfig)
    se: SeConfig = field(default_factory=SeConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    @property
    def encoder(self) -> EncoderConfig:
        if self.preset not in PRESETS:
            raise KeyError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        return PRESETS[self.preset]


def variant_name(use_cgnl: bool, use_se: bool) -> str:
    """Ablation row label."""
    mid = "-".join(x for x, on in (("CGNL", use_cgnl), ("SE", use_se)) if on)
    if use_cgnl and use_se:
        return "UGCANet"
    return f"MiT-{mid}-FaPN" if mid else "MiT-FaPN"


class UGCANet(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: Optional[int] = 0, img_size: Optional[tuple] = None):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        self.encoder = MiTEncoder(enc, img_size=img_size)
        self.context = GlobalContextUnit(enc.channels, cfg.use_cgnl, cfg.use_se, cfg.cgnl, cfg.se)
        self.decoder = FaPNDecoder(enc.channels, cfg.decoder)
        self.classifier = ClassificationBranch(enc.channels[3])
        if seed is not None:
            self.initialize(seed)

    def features(self, x: Tensor) -> FeaturePyramid:
        return self.context(self.encoder(x))

    def forward(self, x: Tensor) -> TaskOutputs:
        pyr = self.features(x)
        seg = self.decoder(pyr)
        pos, le, hp = self.classifier(pyr)
        return TaskOutputs(seg, pos, le, hp)
