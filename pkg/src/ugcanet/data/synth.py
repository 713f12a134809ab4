"""Deterministic desk-scale stand-in dataset.

Images are textured backgrounds with one or two bright elliptical "lesions".

* anatomical site (10 classes): background palette and stripe pattern
* lesion type (6 classes): blob count (1, 2) x shape (round, wide, tall),
  also reflected in which channels the blob tint lifts
* HP status: dense dark speckle on the background vs none
* segmentation: union of the blob masks

``task_mix`` chooses which targets each sample exposes.
"""

from __future__ import annotations

import math

import numpy as np

from .records import LIGHTING_MODES, LabelRecord, SampleRecord, TaskIndicator

# background colours per site class; all darker than any blob in every channel
PALETTE = np.array(
    [
        [0.55, 0.30, 0.30],
        [0.45, 0.35, 0.25],
        [0.35, 0.25, 0.40],
        [0.30, 0.40, 0.35],
        [0.60, 0.45, 0.40],
        [0.25, 0.30, 0.45],
        [0.50, 0.25, 0.45],
        [0.40, 0.45, 0.50],
        [0.20, 0.35, 0.25],
        [0.55, 0.50, 0.30],
    ]
) * 0.8
# blobs are brighter than any background in every channel (the segmentation cue);
# each lesion class lifts a different subset of channels on top (the class cue)
BLOB_BASE = 0.62
BLOB_TINT = 0.38 * np.array(
    [
        [1, 0, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 1, 0],
        [1, 0, 1],
        [0, 1, 1],
    ]
)
BLOB_RGB = BLOB_BASE + BLOB_TINT
TASK_MIXES = ("seg", "all", "cls", "merged")
FG_RANGE = (0.02, 0.4)


def _background(rng, cls: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = math.pi * (cls % 5) / 5
    freq = 3 + 3 * (cls // 5)
    phase = rng.uniform(0, 2 * math.pi)
    wave = np.sin(2 * math.pi * freq * (xx * math.cos(angle) + yy * math.sin(angle)) + phase)
    img = PALETTE[cls][:, None, None] * (1.0 + 0.15 * wave[None])
    img = img + rng.normal(0, 0.02, size=img.shape)
    return img


def _ellipse(size, cy, cx, ry, rx) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _blobs(rng, size: int, count: int, shape: int):
    """Non-overlapping ellipses covering a random fraction of the image."""
    for _ in range(200):
        frac = rng.uniform(0.08, 0.3)
        area = frac * size * size / count
        r = math.sqrt(area / math.pi)
        ry, rx = [(r, r), (r / 1.5, r * 1.5), (r * 1.5, r / 1.5)][shape]
        mask = np.zeros((size, size), dtype=bool)
        ok = True
        for _ in range(count):
            cy = rng.uniform(ry + 1, size - ry - 1)
            cx = rng.uniform(rx + 1, size - rx - 1)
            e = _ellipse(size, cy, cx, ry, rx)
            grown = _ellipse(size, cy, cx, ry + 2, rx + 2)
            if (grown & mask).any():
                ok = False
                break
            mask |= e
        if ok and FG_RANGE[0] <= mask.mean() <= FG_RANGE[1]:
            return mask
    raise RuntimeError("could not place blobs")  # pragma: no cover


def _mu(task_mix: str, i: int) -> TaskIndicator:
    if task_mix == "seg":
        return TaskIndicator(0, 0, 0, 1)
    if task_mix == "all":
        return TaskIndicator(1, 1, 1, 1)
    if task_mix == "cls":
        return TaskIndicator(1, 1, 1, 0)
    if task_mix == "merged":
        # site-only, lesion (class + mask), HP-only, mirroring a merged multi-source set
        return [TaskIndicator(1, 0, 0, 0), TaskIndicator(0, 1, 0, 1), TaskIndicator(0, 0, 1, 0)][i % 3]
    raise ValueError(f"unknown task_mix {task_mix!r}; choose from {TASK_MIXES}")


def synth_sample(seed: int, i: int, size: int = 64, task_mix: str = "seg", source: str = "synth") -> SampleRecord:
    rng = np.random.default_rng([int(seed), int(i)])
    site = int(rng.integers(10))
    lesion = int(rng.integers(6))
    hp = int(rng.integers(2))
    count, shape = divmod(lesion, 3)
    img = _background(rng, site, size)
    mask = _blobs(rng, size, count + 1, shape)

    density = 0.2 if hp else 0.0
    speck = (rng.uniform(size=(size, size)) < density) & ~mask
    img = np.where(speck[None], img * 0.35, img)
    blob = BLOB_RGB[lesion][:, None, None] + rng.normal(0, 0.02, size=img.shape)
    img = np.where(mask[None], blob, img)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)

    mu = _mu(task_mix, i)
    labels = LabelRecord(
        pos=site if mu.pos else None,
        le=lesion if mu.le else None,
        hp=hp if mu.hp else None,
    )
    lighting = LIGHTING_MODES[i % 4]
    meta = {"source": source, "index": i, "lighting": lighting, "site": site, "lesion": lesion, "hp": hp}
    return SampleRecord(
        image=img,
        mask=mask[None].astype(np.float32) if mu.seg else None,
        labels=labels,
        mu=mu,
        meta=meta,
    ).validate()


def synth_dataset(n: int, size: int = 64, task_mix: str = "seg", seed: int = 0, source: str = "synth") -> list:
    if size % 32:
        raise ValueError(f"size {size} must be divisible by 32")
    if task_mix not in TASK_MIXES:
        raise ValueError(f"unknown task_mix {task_mix!r}; choose from {TASK_MIXES}")
    return [synth_sample(seed, i, size, task_mix, source) for i in range(n)]
