"""Stratified data splitting: k-fold assignment and a holdout split.

Each class's members are shuffled and dealt into folds in contiguous
chunks; the per-class remainders rotate through the folds with a global
cursor so overall fold sizes also stay within one sample of each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SplitError(Exception):
    pass


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: np.ndarray  # per-sample fold index in [0, k)
    seed: int

    def fold_indices(self, fold: int) -> np.ndarray:
        """Sample ids assigned to one fold, ascending."""
        return np.nonzero(self.fold_of == fold)[0]

    def fold_sizes(self) -> list[int]:
        return [int(np.sum(self.fold_of == f)) for f in range(self.k)]


def _class_groups(labels: np.ndarray) -> list[tuple[object, np.ndarray]]:
    classes = sorted(set(labels.tolist()), key=repr)
    return [(cls, np.nonzero(labels == cls)[0]) for cls in classes]


def stratified_kfold(labels, k: int, seed: int = 0) -> FoldAssignment:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise SplitError("labels must be a non-empty vector")
    if k < 2:
        raise SplitError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.size, dtype=np.int64)
    cursor = 0
    for cls, ids in _class_groups(labels):
        if ids.size < k:
            raise SplitError(f"class {cls!r} has {ids.size} members, fewer than k={k}")
        shuffled = ids.copy()
        rng.shuffle(shuffled)
        base, rem = divmod(ids.size, k)
        start = 0
        for fold in range(k):
            size = base + (1 if (fold - cursor) % k < rem else 0)
            fold_of[shuffled[start:start + size]] = fold
            start += size
        cursor = (cursor + rem) % k
    return FoldAssignment(k=k, fold_of=fold_of, seed=seed)


def holdout_split(labels, fraction: float, seed: int = 0):
    """Per-class split into (train_ids, validation_ids); the validation
    share of each class is round(fraction * class size)."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise SplitError("labels must be a non-empty vector")
    if not 0.0 < fraction < 1.0:
        raise SplitError(f"fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train: list[np.ndarray] = []
    val: list[np.ndarray] = []
    for _, ids in _class_groups(labels):
        shuffled = ids.copy()
        rng.shuffle(shuffled)
        n_val = int(np.floor(fraction * ids.size + 0.5))
        val.append(shuffled[:n_val])
        train.append(shuffled[n_val:])
    return (np.sort(np.concatenate(train)), np.sort(np.concatenate(val)))
