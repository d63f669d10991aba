"""Synthetic attributed datasets and the SGMLDATA v1 text format.

The generator builds a category -> class -> image hierarchy so attribute
overlap induces feature-space granularity: every category owns a disjoint
block of always-on attributes, every class adds its own random "style"
attributes, and image features are a fixed random linear map of the class
attribute prototype plus a class offset and Gaussian noise. Two classes in
the same category therefore share their category block (semantically close),
while classes in different categories share style bits only by chance.

File format (stable public contract):

    SGMLDATA v1 K=<k> D=<d>
    <id>\\t<class_id>\\t<K chars of 0/1>\\t<D comma-separated reals>

Reals are written with 17 significant digits so round trips are bit-exact.
Split membership lives in a sidecar JSON ``<path>.splits.json`` mapping split
name -> list of record ids.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np

HEADER_RE = re.compile(r"^SGMLDATA v1 K=(\d+) D=(\d+)$")

# Internal generator constants (not part of DatasetSpec).
STYLE_DENSITY = 0.35        # probability a style attribute is on for a class
CLASS_OFFSET_SIGMA = 0.5    # per-class feature-space offset scale
MAX_STYLE_ATTEMPTS = 1000


class DataFormatError(ValueError):
    """Malformed dataset file; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True, eq=False)
class ImageRecord:
    id: str
    class_id: int
    attributes: np.ndarray  # uint8, shape (K,)
    features: np.ndarray    # float64, shape (D,)


@dataclass(frozen=True)
class DatasetSpec:
    n_categories: int = 8
    classes_per_category: int = 25
    images_per_class: int = 5
    n_attributes: int = 64   # K
    n_features: int = 32     # D
    attribute_flip_noise: float = 0.05
    feature_noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_categories, self.classes_per_category,
                  self.images_per_class, self.n_attributes, self.n_features)
        if any(c < 1 for c in counts):
            raise ValueError(f"all spec counts must be >= 1, got {counts}")
        if self.n_attributes < self.n_categories:
            raise ValueError(
                f"K={self.n_attributes} leaves no room for "
                f"{self.n_categories} category attribute blocks")
        if not 0.0 <= self.attribute_flip_noise < 1.0:
            raise ValueError("attribute_flip_noise must be in [0, 1)")
        if self.feature_noise_sigma < 0.0:
            raise ValueError("feature_noise_sigma must be >= 0")


@dataclass
class Dataset:
    records: list[ImageRecord]
    n_attributes: int
    n_features: int
    splits: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self._by_id = {r.id: r for r in self.records}
        if len(self._by_id) != len(self.records):
            raise ValueError("duplicate record ids in dataset")
        seen: set[str] = set()
        for name, ids in self.splits.items():
            for rid in ids:
                if rid not in self._by_id:
                    raise ValueError(f"split {name!r} references unknown id {rid!r}")
                if rid in seen:
                    raise ValueError(f"id {rid!r} appears in more than one split")
                seen.add(rid)

    def subset(self, name: str) -> list[ImageRecord]:
        if name not in self.splits:
            raise KeyError(f"no split named {name!r}; have {sorted(self.splits)}")
        return [self._by_id[rid] for rid in self.splits[name]]

    @property
    def n_classes(self) -> int:
        return len({r.class_id for r in self.records})


def feature_matrix(records) -> np.ndarray:
    return np.stack([r.features for r in records]) if records else np.empty((0, 0))

def attribute_matrix(records) -> np.ndarray:
    return np.stack([r.attributes for r in records]).astype(np.float64)

def labels(records) -> np.ndarray:
    return np.asarray([r.class_id for r in records], dtype=np.int64)


def generate(spec: DatasetSpec) -> Dataset:
    """Generate a hierarchically structured attributed dataset.

    Deterministic under spec.seed. Per-image attribute labels are the class
    prototype with independent flip noise; features depend on the prototype
    only (not on the flipped labels).
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    k, d = spec.n_attributes, spec.n_features
    cat_block = max(1, k // (2 * spec.n_categories))
    if cat_block * spec.n_categories > k:
        cat_block = 1  # K >= n_categories guarantees this fits
    style_start = cat_block * spec.n_categories
    n_style = k - style_start
    if n_style == 0 and spec.classes_per_category > 1:
        raise ValueError(
            "no style attributes left to distinguish classes within a "
            f"category (K={k}, {spec.n_categories} categories)")

    mix = rng.normal(0.0, 1.0, size=(d, k)) / math.sqrt(k)

    records: list[ImageRecord] = []
    prototypes: set[bytes] = set()
    n_classes = spec.n_categories * spec.classes_per_category
    for class_id in range(n_classes):
        category = class_id // spec.classes_per_category
        proto = np.zeros(k, dtype=np.uint8)
        proto[category * cat_block:(category + 1) * cat_block] = 1
        for attempt in range(MAX_STYLE_ATTEMPTS):
            if n_style:
                proto[style_start:] = rng.random(n_style) < STYLE_DENSITY
            if proto.tobytes() not in prototypes:
                break
        else:
            raise ValueError(
                f"could not draw a distinct attribute prototype for class "
                f"{class_id}; increase K or reduce classes_per_category")
        prototypes.add(proto.tobytes())
        offset = rng.normal(0.0, CLASS_OFFSET_SIGMA, size=d)
        base = mix @ proto.astype(np.float64) + offset
        for img in range(spec.images_per_class):
            attrs = proto.copy()
            if spec.attribute_flip_noise > 0.0:
                flips = rng.random(k) < spec.attribute_flip_noise
                attrs = np.where(flips, 1 - attrs, attrs).astype(np.uint8)
            noise = rng.normal(0.0, spec.feature_noise_sigma, size=d) \
                if spec.feature_noise_sigma > 0.0 else np.zeros(d)
            records.append(ImageRecord(
                id=f"c{class_id:04d}_i{img:03d}",
                class_id=class_id,
                attributes=attrs,
                features=base + noise,
            ))
    return Dataset(records, k, d)


def save(dataset: Dataset, path) -> None:
    """Write the SGMLDATA v1 file (and the splits sidecar when splits exist)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"SGMLDATA v1 K={dataset.n_attributes} D={dataset.n_features}\n")
        for r in dataset.records:
            attrs = "".join("1" if a else "0" for a in r.attributes)
            feats = ",".join(f"{x:.17g}" for x in r.features)
            fh.write(f"{r.id}\t{r.class_id}\t{attrs}\t{feats}\n")
    if dataset.splits:
        with open(_splits_path(path), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(dataset.splits, fh, indent=0)
            fh.write("\n")


def _splits_path(path) -> str:
    return str(path) + ".splits.json"


def load(path) -> Dataset:
    """Parse an SGMLDATA v1 file; raises DataFormatError with a line number."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        m = HEADER_RE.match(header)
        if not m:
            raise DataFormatError(f"bad header {header!r}", line=1)
        k, d = int(m.group(1)), int(m.group(2))
        records: list[ImageRecord] = []
        ids: set[str] = set()
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataFormatError(
                    f"expected 4 tab-separated fields, got {len(fields)}", lineno)
            rid, cls_s, attrs_s, feats_s = fields
            if rid in ids:
                raise DataFormatError(f"duplicate id {rid!r}", lineno)
            ids.add(rid)
            try:
                cls = int(cls_s)
            except ValueError:
                raise DataFormatError(f"bad class id {cls_s!r}", lineno) from None
            if len(attrs_s) != k or set(attrs_s) - {"0", "1"}:
                raise DataFormatError(
                    f"attribute field must be {k} chars of 0/1", lineno)
            parts = feats_s.split(",") if feats_s else []
            if len(parts) != d:
                raise DataFormatError(
                    f"expected {d} features, got {len(parts)}", lineno)
            try:
                feats = np.array([float(p) for p in parts], dtype=np.float64)
            except ValueError:
                raise DataFormatError("unparseable feature value", lineno) from None
            if not np.isfinite(feats).all():
                raise DataFormatError("non-finite feature value", lineno)
            records.append(ImageRecord(
                id=rid, class_id=cls,
                attributes=np.frombuffer(attrs_s.encode("ascii"), dtype=np.uint8) - ord("0"),
                features=feats,
            ))
    splits: dict[str, list[str]] = {}
    try:
        with open(_splits_path(path), "r", encoding="utf-8") as fh:
            splits = {str(name): [str(i) for i in ids_] for name, ids_ in json.load(fh).items()}
    except FileNotFoundError:
        pass
    return Dataset(records, k, d, splits)


def split_instance_retrieval(dataset: Dataset, rng: np.random.Generator,
                             train_fraction: float = 0.6,
                             query_fraction: float = 0.2) -> Dataset:
    """Instance-retrieval split: every class contributes to train, and each
    class's remaining records are partitioned into query/gallery.

    Classes with a single record go wholly to the gallery (with a warning);
    2-record classes contribute 1 query + 1 gallery and nothing to train.
    """
    if not (0.0 < train_fraction and 0.0 < query_fraction
            and train_fraction + query_fraction < 1.0):
        raise ValueError("need 0 < train_fraction, query_fraction and sum < 1")
    gallery_fraction = 1.0 - train_fraction - query_fraction
    by_class: dict[int, list[ImageRecord]] = {}
    for r in dataset.records:
        by_class.setdefault(r.class_id, []).append(r)
    train: list[str] = []
    query: list[str] = []
    gallery: list[str] = []
    for cls in sorted(by_class):
        recs = by_class[cls]
        order = rng.permutation(len(recs))
        if len(recs) == 1:
            warnings.warn(f"class {cls} has a single record; placed in gallery")
            gallery.append(recs[0].id)
            continue
        n_q = max(1, int(query_fraction * len(recs)))
        n_g = max(1, int(gallery_fraction * len(recs)))
        for pos, oi in enumerate(order):
            rid = recs[oi].id
            if pos < n_q:
                query.append(rid)
            elif pos < n_q + n_g:
                gallery.append(rid)
            else:
                train.append(rid)
    return Dataset(dataset.records, dataset.n_attributes, dataset.n_features,
                   {"train": train, "query": query, "gallery": gallery})


def split_class_retrieval(dataset: Dataset, rng: np.random.Generator,
                          class_fraction: float = 0.5) -> Dataset:
    """Class-retrieval split: disjoint class sets for train and test
    (zero-shot test classes, evaluated leave-one-out)."""
    classes = sorted({r.class_id for r in dataset.records})
    if len(classes) < 2:
        raise ValueError("class split needs at least 2 classes")
    n_train = int(round(class_fraction * len(classes)))
    n_train = min(max(n_train, 1), len(classes) - 1)
    order = rng.permutation(len(classes))
    train_classes = {classes[i] for i in order[:n_train]}
    train = [r.id for r in dataset.records if r.class_id in train_classes]
    test = [r.id for r in dataset.records if r.class_id not in train_classes]
    return Dataset(dataset.records, dataset.n_attributes, dataset.n_features,
                   {"train": train, "test": test})
