"""Stratified fold assignment and the two training batch generators.

The default generator shuffles the training set each epoch and slices it
into consecutive batches. The rebalanced generator fills every batch slot by
first drawing a class uniformly and then a sample uniformly (with
replacement) within that class, so each batch holds roughly the same number
of samples per class regardless of corpus prevalence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass
class FoldAssignment:
    num_folds: int
    fold_of: dict = field(default_factory=dict)  # sample_id -> fold index

    def ids_in_fold(self, fold: int):
        return [sid for sid, f in self.fold_of.items() if f == fold]


@dataclass
class BatchSpec:
    indices: np.ndarray  # positions into the training set
    mode: str  # "default" | "rebalance"


def stratified_folds(samples, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Deal each class round-robin into k folds after a seeded shuffle.

    Per-class fold counts differ by at most 1, and the rotation of the
    starting fold across classes keeps overall fold sizes within 1 as well.
    """
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    by_class = {}
    for pos, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(s.sequence.sample_id)
    smallest = min(len(ids) for ids in by_class.values())
    if k > smallest:
        log.warning("fold count %d exceeds smallest class size %d; some folds will lack that class", k, smallest)
    rng = np.random.default_rng(seed)
    assignment = FoldAssignment(num_folds=k)
    offset = 0
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        perm = rng.permutation(len(ids))
        for i, j in enumerate(perm):
            assignment.fold_of[ids[j]] = (offset + i) % k
        offset = (offset + len(ids) % k) % k
    return assignment


def split_by_fold(samples, assignment: FoldAssignment, held_out: int):
    """(train, valid) lists for one fold of a cross-validation round."""
    train, valid = [], []
    for s in samples:
        fold = assignment.fold_of[s.sequence.sample_id]
        (valid if fold == held_out else train).append(s)
    return train, valid


def stratified_subsample(samples, fraction: float, seed: int = 0):
    """Seeded per-class subsample keeping at least one sample per class.

    Per-class sizes land within one sample of fraction * class size, so the
    class ratios of the full corpus are preserved.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    by_class = {}
    for pos, s in enumerate(samples):
        by_class.setdefault(s.label, []).append(pos)
    rng = np.random.default_rng(seed)
    keep = []
    for label in sorted(by_class):
        positions = by_class[label]
        take = max(1, round(fraction * len(positions)))
        chosen = rng.permutation(len(positions))[:take]
        keep.extend(positions[i] for i in chosen)
    keep.sort()
    return [samples[i] for i in keep]


class DefaultBatcher:
    """Uniform shuffling batcher; every epoch emits one exact permutation."""

    mode = "default"

    def __init__(self, num_samples: int, batch_size: int = 64, seed: int = 0):
        if num_samples < 1:
            raise ValueError("training set must be non-empty")
        self.num_samples = num_samples
        self.batch_size = batch_size
        self.seed = seed

    def batches_per_epoch(self) -> int:
        return -(-self.num_samples // self.batch_size)

    def epoch(self, epoch_index: int):
        rng = np.random.default_rng([self.seed, 0, epoch_index])
        perm = rng.permutation(self.num_samples)
        for start in range(0, self.num_samples, self.batch_size):
            yield BatchSpec(perm[start : start + self.batch_size], self.mode)


class RebalancedBatcher:
    """Class-rebalancing batcher: per-slot uniform class draw, then a uniform
    with-replacement draw inside the class.

    mode="quota" instead gives each class floor(batch/classes) fixed slots
    and assigns the remainder randomly (non-default alternative).
    An epoch is defined as ceil(train_size / batch_size) batches so both
    batchers take comparable step counts per epoch.
    """

    mode = "rebalance"

    def __init__(self, labels, batch_size: int = 64, seed: int = 0, num_classes: int = 9, scheme: str = "uniform"):
        labels = np.asarray(labels)
        if scheme not in ("uniform", "quota"):
            raise ValueError(f"scheme must be 'uniform' or 'quota', got {scheme!r}")
        self.positions_by_class = []
        for c in range(num_classes):
            positions = np.flatnonzero(labels == c)
            if positions.size == 0:
                raise ConfigError(f"cannot rebalance: class {c} absent from the training split")
            self.positions_by_class.append(positions)
        self.num_classes = num_classes
        self.num_samples = labels.size
        self.batch_size = batch_size
        self.seed = seed
        self.scheme = scheme

    def batches_per_epoch(self) -> int:
        return -(-self.num_samples // self.batch_size)

    def epoch(self, epoch_index: int):
        rng = np.random.default_rng([self.seed, 1, epoch_index])
        for _ in range(self.batches_per_epoch()):
            if self.scheme == "uniform":
                classes = rng.integers(0, self.num_classes, size=self.batch_size)
            else:
                base = np.repeat(np.arange(self.num_classes), self.batch_size // self.num_classes)
                extra = rng.choice(self.num_classes, size=self.batch_size - base.size, replace=False)
                classes = np.concatenate([base, extra])
                rng.shuffle(classes)
            indices = np.empty(self.batch_size, dtype=np.int64)
            for c in range(self.num_classes):
                slots = np.flatnonzero(classes == c)
                if slots.size:
                    pool = self.positions_by_class[c]
                    indices[slots] = pool[rng.integers(0, pool.size, size=slots.size)]
            yield BatchSpec(indices, self.mode)


def make_batcher(labels, sampler_mode: str, batch_size: int = 64, seed: int = 0, num_classes: int = 9):
    if sampler_mode == "default":
        return DefaultBatcher(len(labels), batch_size, seed)
    if sampler_mode == "rebalance":
        return RebalancedBatcher(labels, batch_size, seed, num_classes)
    raise ConfigError(f"unknown sampler_mode {sampler_mode!r}; use 'default' or 'rebalance'")
