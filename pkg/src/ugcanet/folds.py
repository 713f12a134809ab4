"""Stratified k-fold planning."""

from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .data.records import SampleRecord, TaskIndicator


@dataclass
class FoldPlan:
    k: int
    assignment: list  # fold index per sample
    strata: dict  # stratum key -> sample indices
    mu: list  # TaskIndicator per sample
    warnings: list = field(default_factory=list)

    def folds(self) -> list:
        out = [[] for _ in range(self.k)]
        for i, f in enumerate(self.assignment):
            out[f].append(i)
        return out

    def split(self, fold: int) -> tuple:
        """(train indices, test indices) with ``fold`` held out."""
        train = [i for i, f in enumerate(self.assignment) if f != fold]
        test = [i for i, f in enumerate(self.assignment) if f == fold]
        return train, test


def _meta(sample) -> dict:
    return sample.meta if isinstance(sample, SampleRecord) else sample


def _mu(sample) -> TaskIndicator:
    if isinstance(sample, SampleRecord):
        return sample.mu
    if "mu" in sample:
        return TaskIndicator(*sample["mu"])
    return TaskIndicator(*(int(sample.get(t) is not None) for t in ("pos", "le", "hp", "mask")))


def stratified_kfold(
    samples: Sequence,
    k: int = 5,
    keys: Union[Sequence[str], Callable] = ("stratum",),
    seed: int = 0,
) -> FoldPlan:
    """Shuffle each stratum, then deal it round-robin over folds.

    The dealing position carries over between strata, so both the per-stratum
    and the overall fold sizes differ by at most one. ``keys`` is either a
    list of metadata fields or a callable returning a hashable stratum key.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    key_fn = keys if callable(keys) else (lambda s: tuple(_meta(s)[name] for name in keys))

    strata: dict = {}
    for i, s in enumerate(samples):
        strata.setdefault(key_fn(s), []).append(i)

    assignment = [0] * len(samples)
    notes = []
    cursor = 0
    for key in sorted(strata, key=repr):
        idx = np.array(strata[key])
        rng = np.random.default_rng([int(seed), zlib.crc32(repr(key).encode())])
        idx = idx[rng.permutation(len(idx))]
        if len(idx) < k:
            msg = f"stratum {key!r} has {len(idx)} samples < k={k}; some folds get none"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
        for j, sample_idx in enumerate(idx):
            assignment[int(sample_idx)] = (cursor + j) % k
        cursor = (cursor + len(idx)) % k

    return FoldPlan(k, assignment, strata, [_mu(s) for s in samples], notes)
