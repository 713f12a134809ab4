from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from ..heads import TASKS, BatchLabels

LIGHTING_MODES = ("WLI", "FICE", "BLI", "LCI")


class DataError(ValueError):
    pass


class TaskIndicator(NamedTuple):
    pos: int = 0
    le: int = 0
    hp: int = 0
    seg: int = 0


@dataclass
class LabelRecord:
    pos: Optional[int] = None
    le: Optional[int] = None
    hp: Optional[int] = None


@dataclass
class SampleRecord:
    """One image with whatever targets it carries; ``mu`` flags which are present."""

    image: np.ndarray  # [3, H, W] float32 in [0, 1]
    mask: Optional[np.ndarray] = None  # [1, H, W] binary float32
    labels: LabelRecord = field(default_factory=LabelRecord)
    mu: TaskIndicator = TaskIndicator()
    meta: dict = field(default_factory=dict)

    def validate(self) -> "SampleRecord":
        mu = self.mu
        present = (self.labels.pos is not None, self.labels.le is not None, self.labels.hp is not None, self.mask is not None)
        for task, flag, has in zip(TASKS, mu, present):
            if flag not in (0, 1):
                raise DataError(f"mu_{task} must be 0 or 1, got {flag}")
            if bool(flag) != has:
                raise DataError(f"mu_{task}={flag} but label {'present' if has else 'absent'}")
        if self.labels.pos is not None and not 0 <= self.labels.pos <= 9:
            raise DataError(f"pos label {self.labels.pos} outside 0..9")
        if self.labels.le is not None and not 0 <= self.labels.le <= 5:
            raise DataError(f"lesion label {self.labels.le} outside 0..5")
        if self.labels.hp is not None and self.labels.hp not in (0, 1):
            raise DataError(f"hp label {self.labels.hp} outside 0..1")
        img = self.image
        if img.ndim != 3 or img.shape[0] != 3:
            raise DataError(f"image must be [3, H, W], got {img.shape}")
        if img.min() < 0 or img.max() > 1:
            raise DataError("image values must lie in [0, 1]")
        if self.mask is not None:
            if self.mask.shape != (1,) + img.shape[1:]:
                raise DataError(f"mask {self.mask.shape} does not match image {img.shape}")
            if not np.all((self.mask == 0) | (self.mask == 1)):
                raise DataError("mask must be binary")
        return self


def collate(samples) -> tuple:
    """Stack samples into (images [N,3,H,W] float32, BatchLabels)."""
    images = np.stack([s.image for s in samples]).astype(np.float32)
    n, _, h, w = images.shape
    masks = np.zeros((n, 1, h, w), dtype=np.float32)
    for i, s in enumerate(samples):
        if s.mask is not None:
            masks[i] = s.mask

    def lab(attr):
        return np.array([-1 if getattr(s.labels, attr) is None else getattr(s.labels, attr) for s in samples])

    mu = np.array([tuple(s.mu) for s in samples], dtype=np.float64)
    return images, BatchLabels(mu=mu, pos=lab("pos"), le=lab("le"), hp=lab("hp"), masks=masks)
