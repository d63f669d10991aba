"""Mini-batch samplers and in-batch pair enumeration.

Two sampling regimes:

* image-wise: every training record serves as a triplet anchor exactly once
  per epoch (seeded shuffled order); each anchor gets one uniform positive
  from its class and one uniform negative from the union of other classes, so
  a batch of n anchors occupies 3n record slots and yields n positive plus n
  negative pairs.
* batch-wise: draw n_classes distinct classes, then up to m_per_class records
  from each, and enumerate every in-batch pair on the embeddings.

Reproducibility contract: all randomness flows through a numpy Generator
backed by the PCG64 bit generator, seeded from a config integer. The
algorithm identity (PCG64) is part of the contract; see the README.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


@dataclass
class DatasetIndex:
    """Class label -> record positions lookup for a training split."""

    class_to_records: dict[int, np.ndarray]
    n_records: int

    def __post_init__(self):
        seen: set[int] = set()
        total = 0
        for cls, recs in self.class_to_records.items():
            recs = np.asarray(recs, dtype=np.int64)
            if recs.size == 0:
                raise ValueError(f"class {cls} has no records")
            self.class_to_records[cls] = recs
            total += recs.size
            dup = seen.intersection(recs.tolist())
            if dup:
                raise ValueError(f"record {dup.pop()} listed under more than one class")
            seen.update(recs.tolist())
        if total != self.n_records or seen != set(range(self.n_records)):
            raise ValueError("class lists must partition range(n_records)")

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "DatasetIndex":
        labels = np.asarray(labels, dtype=np.int64)
        mapping = {
            int(c): np.flatnonzero(labels == c).astype(np.int64)
            for c in np.unique(labels)
        }
        return cls(mapping, int(labels.size))

    @property
    def n_classes(self) -> int:
        return len(self.class_to_records)


@dataclass
class TripletBatch:
    """(anchor, positive, negative) record-index rows, shape (T, 3)."""

    triplets: np.ndarray

    def __len__(self) -> int:
        return self.triplets.shape[0]


@dataclass
class PairList:
    """Unordered index pairs, positives and negatives, each shape (n, 2)."""

    positives: np.ndarray
    negatives: np.ndarray

    @property
    def n_pos(self) -> int:
        return self.positives.shape[0]

    @property
    def n_neg(self) -> int:
        return self.negatives.shape[0]


def _empty_pairs() -> np.ndarray:
    return np.empty((0, 2), dtype=np.int64)


class ImageWiseSampler:
    """Epoch-cycling triplet sampler: each record anchors once per epoch.

    Anchors whose class has a single record cannot form a positive pair and
    are skipped (counted in skipped_anchors). The same record may serve as
    negative for several anchors within one batch.
    """

    def __init__(self, index: DatasetIndex, n_anchors: int, rng: np.random.Generator):
        if n_anchors < 1:
            raise ValueError("n_anchors must be >= 1")
        if index.n_classes < 2:
            raise ValueError("image-wise sampling needs at least 2 classes")
        if max(r.size for r in index.class_to_records.values()) < 2:
            raise ValueError("image-wise sampling needs a class with >= 2 records")
        self.index = index
        self.n_anchors = n_anchors
        self.rng = rng
        self.skipped_anchors = 0
        self._class_of = np.empty(index.n_records, dtype=np.int64)
        for cls, recs in index.class_to_records.items():
            self._class_of[recs] = cls
        # Complement lists (records outside each class) for uniform negatives.
        self._others = {
            cls: np.setdiff1d(np.arange(index.n_records, dtype=np.int64), recs)
            for cls, recs in index.class_to_records.items()
        }
        self._order = np.empty(0, dtype=np.int64)
        self._cursor = 0

    def _refill(self) -> None:
        self._order = self.rng.permutation(self.index.n_records)
        self._cursor = 0

    def _next_anchor(self) -> int:
        anchor = int(self._order[self._cursor])
        self._cursor += 1
        return anchor

    def _exhausted(self) -> bool:
        return self._cursor >= self._order.size

    def _triplet_for(self, anchor: int) -> tuple[int, int, int] | None:
        cls = int(self._class_of[anchor])
        mates = self.index.class_to_records[cls]
        if mates.size < 2:
            self.skipped_anchors += 1
            return None
        while True:
            pos = int(mates[self.rng.integers(mates.size)])
            if pos != anchor:
                break
        others = self._others[cls]
        neg = int(others[self.rng.integers(others.size)])
        return anchor, pos, neg

    def sample(self) -> TripletBatch:
        """Next batch of up to n_anchors triplets, refilling across epochs."""
        rows: list[tuple[int, int, int]] = []
        while len(rows) < self.n_anchors:
            if self._exhausted():
                self._refill()
            trip = self._triplet_for(self._next_anchor())
            if trip is not None:
                rows.append(trip)
        return TripletBatch(np.asarray(rows, dtype=np.int64))

    def epoch(self) -> Iterator[TripletBatch]:
        """One full pass: every record anchors exactly once, in shuffled order."""
        self._refill()
        rows: list[tuple[int, int, int]] = []
        while not self._exhausted():
            trip = self._triplet_for(self._next_anchor())
            if trip is not None:
                rows.append(trip)
            if len(rows) == self.n_anchors:
                yield TripletBatch(np.asarray(rows, dtype=np.int64))
                rows = []
        if rows:
            yield TripletBatch(np.asarray(rows, dtype=np.int64))


def sample_image_wise(index: DatasetIndex, n_anchors: int, rng: np.random.Generator) -> TripletBatch:
    """One image-wise batch: n_anchors triplets over a fresh shuffled epoch."""
    return ImageWiseSampler(index, n_anchors, rng).sample()


def sample_batch_wise(index: DatasetIndex, n_classes: int, m_per_class: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Batch-wise record selection: n_classes distinct classes, up to
    m_per_class records from each (classes smaller than m contribute all of
    their records). Returns at most n_classes * m_per_class distinct indices.
    """
    if n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    if m_per_class < 1:
        raise ValueError("m_per_class must be >= 1")
    if index.n_classes < n_classes:
        raise ValueError(
            f"dataset has {index.n_classes} classes, need {n_classes}")
    class_ids = np.array(sorted(index.class_to_records), dtype=np.int64)
    chosen = rng.choice(class_ids, size=n_classes, replace=False)
    out: list[np.ndarray] = []
    for cls in chosen:
        recs = index.class_to_records[int(cls)]
        take = min(m_per_class, recs.size)
        out.append(rng.choice(recs, size=take, replace=False))
    return np.concatenate(out)


def enumerate_pairs(records: Sequence[tuple[int, int]]) -> PairList:
    """All unordered pairs of (record index, class id) entries.

    Same-class pairs land in positives, cross-class pairs in negatives; each
    unordered pair appears once, stored as (i, j) with i < j. Counts satisfy
    |positives| + |negatives| = C(n, 2).
    """
    if len(records) < 2:
        raise ValueError("need at least 2 records to enumerate pairs")
    idx = np.asarray([r[0] for r in records], dtype=np.int64)
    cls = np.asarray([r[1] for r in records], dtype=np.int64)
    a, b = np.triu_indices(len(records), k=1)
    lo = np.minimum(idx[a], idx[b])
    hi = np.maximum(idx[a], idx[b])
    same = cls[a] == cls[b]
    positives = np.stack([lo[same], hi[same]], axis=1)
    negatives = np.stack([lo[~same], hi[~same]], axis=1)
    return PairList(positives, negatives)


def triplets_to_pairs(batch: TripletBatch) -> PairList:
    """One positive (a,p) and one negative (a,n) pair per triplet.

    Pairs are normalized to (min, max); exact duplicates arising from
    distinct triplets are retained, since each triplet is an independent loss
    term.
    """
    t = batch.triplets
    if t.size == 0:
        return PairList(_empty_pairs(), _empty_pairs())
    pos = np.stack([np.minimum(t[:, 0], t[:, 1]), np.maximum(t[:, 0], t[:, 1])], axis=1)
    neg = np.stack([np.minimum(t[:, 0], t[:, 2]), np.maximum(t[:, 0], t[:, 2])], axis=1)
    return PairList(pos, neg)
