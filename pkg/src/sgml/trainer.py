"""Training orchestration for the four model variants.

Per optimization step: sample a mini-batch, run the forward pass, build
(s, g, polarity) pair samples from the embeddings and the configured
attribute source, evaluate the variant's loss, backpropagate exactly, and
apply one Adam update.

Variants:
    metric_only  plain binomial deviance on pairs (attribute head untouched)
    attr_only    binary cross-entropy only (embedding head untouched)
    multitask    binomial deviance + lam * BCE, no SGS coupling
    sgml         soft binomial deviance (SGS-modulated) + lam * BCE

SGS values are treated as constants of the metric loss by default; set
sgs_backprop to also route d(loss)/dg into the attribute head through the
SGS cosine Jacobian (only meaningful with sgs_source="predicted").
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses
from .data import Dataset, attribute_matrix, feature_matrix, labels
from .losses import LossParams, PairSample, bdl_batch, sbdl_batch
from .network import (AdamState, Checkpoint, NetworkParams, NetworkShape,
                      adam_step, backward, config_hash, forward, init_params)
from .sampling import (DatasetIndex, ImageWiseSampler, PairList,
                       enumerate_pairs, sample_batch_wise)

VARIANTS = ("metric_only", "attr_only", "multitask", "sgml")
SAMPLING_METHODS = ("image", "batch")
SGS_SOURCES = ("predicted", "ground_truth")

# Deterministic nudge applied to zero-norm embeddings (possible with dead
# ReLU units early in training) so the cosine kernel stays defined.
ZERO_NORM_EPS = 1e-12

# Loss and learning-rate settings that work well in the two retrieval
# regimes (instance retrieval with few images per class, and fine-grained
# class retrieval with larger classes).
INSTANCE_RETRIEVAL_DEFAULTS = {"alpha": 2.0, "beta": 0.5, "lr": 1e-4}
CLASS_RETRIEVAL_DEFAULTS = {"alpha": 3.0, "beta": 0.1, "lr": 4e-6}


class TrainingError(RuntimeError):
    """Training aborted; carries the last good checkpoint when one exists."""

    def __init__(self, message: str, checkpoint: Checkpoint | None = None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "sgml"
    sampling: str = "batch"
    n_anchors: int = 60          # image-wise: triplets per batch (3n slots)
    n_classes: int = 41          # batch-wise: classes per batch
    m_per_class: int = 4         # batch-wise: records per class
    alpha: float = 2.0
    beta: float = 0.5
    lam: float = 1.0
    cost_pos: float = 1.0
    cost_neg: float = 1.0
    lr: float = 1e-4
    epochs: int = 30
    seed: int = 0
    sgs_source: str = "predicted"
    sgs_backprop: bool = False
    trunk_dims: tuple[int, ...] = (256, 2048)
    fc_dim: int = 1024
    emb_dim: int = 512

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.sampling not in SAMPLING_METHODS:
            raise ValueError(f"sampling must be one of {SAMPLING_METHODS}")
        if self.sgs_source not in SGS_SOURCES:
            raise ValueError(f"sgs_source must be one of {SGS_SOURCES}")
        if self.epochs < 1 or self.n_anchors < 1 or self.m_per_class < 1:
            raise ValueError("epochs, n_anchors and m_per_class must be >= 1")
        object.__setattr__(self, "trunk_dims", tuple(int(d) for d in self.trunk_dims))
        self.loss_params()  # validates alpha/lam/costs

    def loss_params(self) -> LossParams:
        return LossParams(self.alpha, self.beta, self.lam, self.cost_pos, self.cost_neg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk_dims"] = list(self.trunk_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "trunk_dims" in d:
            d["trunk_dims"] = tuple(d["trunk_dims"])
        return cls(**d)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class StepRecord:
    step: int
    metric_loss: float
    attr_loss: float
    total_loss: float
    n_pos: int
    n_neg: int


@dataclass
class TrainingHistory:
    steps: list[StepRecord] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step,metric_loss,attr_loss,total_loss,pos_pairs,neg_pairs\n")
            for r in self.steps:
                fh.write(f"{r.step},{r.metric_loss!r},{r.attr_loss!r},"
                         f"{r.total_loss!r},{r.n_pos},{r.n_neg}\n")

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.steps]


def stabilize_embeddings(vectors: np.ndarray) -> np.ndarray:
    """Copy with a deterministic epsilon on the first coordinate of any
    zero-norm row, keeping the cosine kernel defined."""
    norms = np.linalg.norm(vectors, axis=1)
    if not np.any(norms == 0.0):
        return vectors
    out = vectors.copy()
    out[norms == 0.0, 0] += ZERO_NORM_EPS
    return out


def pair_cosines(vectors: np.ndarray, ij: np.ndarray) -> np.ndarray:
    """Cosine similarity for each (i, j) row-index pair."""
    u = vectors[ij[:, 0]]
    v = vectors[ij[:, 1]]
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    return np.einsum("ij,ij->i", u, v) / (nu * nv)


def pair_sgs(vectors: np.ndarray, ij: np.ndarray) -> np.ndarray:
    """SGS (cosine over attribute vectors) for each (i, j) row-index pair.

    Raises:
        ValueError: if any referenced attribute vector is all-zero (cannot
            happen for clamped predicted probabilities).
    """
    norms = np.linalg.norm(vectors, axis=1)
    used = np.unique(ij)
    if np.any(norms[used] == 0.0):
        bad = int(used[np.flatnonzero(norms[used] == 0.0)[0]])
        raise ValueError(f"all-zero attribute vector at batch row {bad}")
    return pair_cosines(vectors, ij)


def build_pair_samples(embeddings: np.ndarray, attr_vectors: np.ndarray,
                       pair_list: PairList,
                       g_override: np.ndarray | None = None) -> list[PairSample]:
    """Assemble PairSamples (positives first, then negatives).

    s comes from the cosine kernel over embeddings (zero-norm rows get the
    deterministic epsilon nudge); g from the SGS kernel over attr_vectors,
    which may be predicted probabilities or ground-truth binary attributes.
    g_override (aligned with the positives+negatives order) replaces the SGS
    computation; gradient checking uses it to freeze g at base values.
    """
    ij = np.vstack([pair_list.positives, pair_list.negatives])
    emb = stabilize_embeddings(embeddings)
    s = pair_cosines(emb, ij)
    if g_override is not None:
        g = np.asarray(g_override, dtype=np.float64)
        if g.shape != (ij.shape[0],):
            raise ValueError("g_override length must equal the number of pairs")
    else:
        g = pair_sgs(np.asarray(attr_vectors, dtype=np.float64), ij)
    n_pos = pair_list.n_pos
    return [PairSample(float(s[k]), float(g[k]),
                       losses.POSITIVE if k < n_pos else losses.NEGATIVE)
            for k in range(ij.shape[0])]


def _cosine_pair_grads(vectors: np.ndarray, ij: np.ndarray,
                       weights: np.ndarray) -> np.ndarray:
    """Accumulate w_k * d s_k / d vectors over pairs (the cosine Jacobian)."""
    u = vectors[ij[:, 0]]
    v = vectors[ij[:, 1]]
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    dot = np.einsum("ij,ij->i", u, v)
    s = dot / (nu * nv)
    inv = 1.0 / (nu * nv)
    du = v * inv[:, None] - (s / (nu * nu))[:, None] * u
    dv = u * inv[:, None] - (s / (nv * nv))[:, None] * v
    grad = np.zeros_like(vectors)
    np.add.at(grad, ij[:, 0], weights[:, None] * du)
    np.add.at(grad, ij[:, 1], weights[:, None] * dv)
    return grad


def _batch_bce(probs: np.ndarray, labels_: np.ndarray, scale: float):
    """Mean-over-rows BCE (each row summed over attributes) and its gradient
    on the probabilities, scaled by `scale` / n_rows."""
    p = np.clip(probs, losses.PROB_EPS, 1.0 - losses.PROB_EPS)
    a = labels_
    per_row = -np.sum(a * np.log(p) + (1.0 - a) * np.log1p(-p), axis=1)
    value = float(np.mean(per_row))
    grad = (-a / p + (1.0 - a) / (1.0 - p)) * (scale / p.shape[0])
    return value, grad


@dataclass
class StepResult:
    total: float
    metric: float
    attr: float
    n_pos: int
    n_neg: int
    grads: dict[str, np.ndarray]
    g_values: np.ndarray | None = None


def loss_and_param_grads(params: NetworkParams, x: np.ndarray,
                         attrs: np.ndarray, pair_list: PairList | None,
                         cfg: TrainConfig,
                         g_override: np.ndarray | None = None,
                         compute_grads: bool = True) -> StepResult:
    """Variant loss and exact parameter gradients for one prepared batch.

    attrs are the ground-truth binary attribute rows for the batch. Exposed
    separately from the training loop so finite-difference checks can drive
    the exact code path the trainer uses; compute_grads=False skips the
    backward pass for value-only evaluations.
    """
    lp = cfg.loss_params()
    out, cache = forward(params, x)
    d_emb = None
    d_attr = None
    metric_value = 0.0
    attr_value = 0.0
    n_pos = n_neg = 0
    g_used = None

    if cfg.variant != "attr_only":
        if pair_list is None:
            raise ValueError("metric variants need a pair list")
        emb = stabilize_embeddings(out.embeddings)
        ij = np.vstack([pair_list.positives, pair_list.negatives])
        if cfg.variant == "sgml":
            attr_src = out.attr_probs if cfg.sgs_source == "predicted" \
                else attrs.astype(np.float64)
            samples = build_pair_samples(emb, attr_src, pair_list, g_override)
            batch = sbdl_batch(samples, lp)
            g_used = np.fromiter((p.g for p in samples), np.float64, len(samples))
        else:
            samples = build_pair_samples(emb, None, pair_list,
                                         np.zeros(ij.shape[0]))
            batch = bdl_batch(samples, lp)
        metric_value = batch.value
        n_pos, n_neg = batch.n_pos, batch.n_neg
        if compute_grads:
            d_emb = _cosine_pair_grads(emb, ij, batch.d_ds)
            if (cfg.variant == "sgml" and cfg.sgs_backprop
                    and cfg.sgs_source == "predicted" and g_override is None):
                d_attr = _cosine_pair_grads(out.attr_probs, ij, batch.d_dg)

    if cfg.variant != "metric_only":
        scale = 1.0 if cfg.variant == "attr_only" else cfg.lam
        attr_value, bce_grad = _batch_bce(out.attr_probs, attrs, scale)
        if compute_grads:
            d_attr = bce_grad if d_attr is None else d_attr + bce_grad

    if cfg.variant == "metric_only":
        total = metric_value
    elif cfg.variant == "attr_only":
        total = attr_value
    else:
        total = metric_value + cfg.lam * attr_value

    grads = backward(params, cache, d_emb, d_attr) if compute_grads else {}
    return StepResult(total, metric_value, attr_value, n_pos, n_neg, grads, g_used)


def _image_wise_batches(sampler: ImageWiseSampler):
    for batch in sampler.epoch():
        t = batch.triplets
        rows = t.reshape(-1)  # anchor, positive, negative per triplet
        base = 3 * np.arange(len(t), dtype=np.int64)
        pos = np.stack([base, base + 1], axis=1)
        neg = np.stack([base, base + 2], axis=1)
        yield rows, PairList(pos, neg)


def _batch_wise_batch(index: DatasetIndex, cfg: TrainConfig,
                      rng: np.random.Generator, class_of: np.ndarray):
    for _ in range(10):
        rows = sample_batch_wise(index, cfg.n_classes, cfg.m_per_class, rng)
        pair_list = enumerate_pairs(list(zip(range(len(rows)),
                                             class_of[rows].tolist())))
        if pair_list.n_pos >= 1 and pair_list.n_neg >= 1:
            return rows, pair_list
    raise TrainingError(
        "degenerate batch after 10 resampling attempts "
        "(no positive or no negative pairs)")


def train(cfg: TrainConfig, dataset: Dataset) -> tuple[Checkpoint, TrainingHistory]:
    """Run the configured number of epochs; deterministic under cfg.seed.

    Trains on the "train" split when the dataset has one, else on every
    record. Returns the final checkpoint (with optimizer state) and the
    per-step history.

    Raises:
        TrainingError: on a non-finite loss (the exception carries the last
            good checkpoint) or an unrecoverable degenerate batch.
    """
    records = dataset.subset("train") if "train" in dataset.splits else dataset.records
    if not records:
        raise ValueError("training split is empty")
    y = labels(records)
    n_cls = len(np.unique(y))
    if cfg.variant != "attr_only" and n_cls < 2:
        raise ValueError(f"variant {cfg.variant} needs >= 2 classes, got {n_cls}")
    if cfg.variant != "metric_only" and dataset.n_attributes < 1:
        raise ValueError("attribute-aware variants need attribute labels")

    feats = feature_matrix(records)
    attrs = attribute_matrix(records)
    shape = NetworkShape(input_dim=dataset.n_features, trunk_dims=cfg.trunk_dims,
                         fc_dim=cfg.fc_dim, emb_dim=cfg.emb_dim,
                         attr_dim=dataset.n_attributes)
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, sample_ss = ss.spawn(2)
    params = init_params(shape, np.random.Generator(np.random.PCG64(init_ss)))
    rng = np.random.Generator(np.random.PCG64(sample_ss))
    state = AdamState.for_params(params, cfg.lr)
    chash = config_hash(cfg.to_dict())
    history = TrainingHistory()

    index = DatasetIndex.from_labels(y)
    sampler = ImageWiseSampler(index, cfg.n_anchors, rng) \
        if cfg.sampling == "image" else None
    batch_size = cfg.n_classes * cfg.m_per_class
    steps_per_epoch = max(1, -(-len(records) // batch_size))

    step = 0
    for _ in range(cfg.epochs):
        if cfg.sampling == "image":
            batches = _image_wise_batches(sampler)
        else:
            batches = (_batch_wise_batch(index, cfg, rng, y)
                       for _ in range(steps_per_epoch))
        for rows, pair_list in batches:
            step += 1
            result = loss_and_param_grads(params, feats[rows], attrs[rows],
                                          pair_list, cfg)
            if not np.isfinite(result.total):
                last_good = Checkpoint(params.copy(), state.copy(), step - 1, chash)
                raise TrainingError(
                    f"non-finite loss at step {step}", checkpoint=last_good)
            try:
                adam_step(params, result.grads, state)
            except FloatingPointError as exc:
                last_good = Checkpoint(params.copy(), state.copy(), step - 1, chash)
                raise TrainingError(str(exc), checkpoint=last_good) from exc
            history.steps.append(StepRecord(
                step, result.metric, result.attr, result.total,
                result.n_pos, result.n_neg))
    return Checkpoint(params, state, step, chash), history
