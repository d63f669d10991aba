"""Pair and attribute losses with closed-form derivatives.

Every loss here returns its value together with analytic partial derivatives
with respect to its scalar inputs, so the trainer can assemble exact
backpropagation without an autograd framework. All softplus terms use the
max(x,0) + log1p(exp(-|x|)) identity and stay finite for |exponent| far
beyond anything the similarity ranges can produce.

Conventions:
    s        embedding cosine similarity, in [-1, 1]
    g        semantic granularity similarity (SGS), in [0, 1]
    polarity 1 for a positive (same-class) pair, 0 for a negative pair
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .similarity import PROB_EPS

POSITIVE = 1
NEGATIVE = 0


class DegenerateBatchError(ValueError):
    """A pair batch is missing positives or negatives entirely."""


@dataclass(frozen=True)
class LossParams:
    """Scaling/translation/balance knobs shared by the loss family.

    alpha scales the exponent, beta translates it, lam balances the metric
    loss against the attribute loss, and cost_pos/cost_neg reweight the plain
    binomial deviance baseline (the soft variants fix both costs to 1).
    """

    alpha: float = 2.0
    beta: float = 0.5
    lam: float = 1.0
    cost_pos: float = 1.0
    cost_neg: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not (self.cost_pos > 0.0 and self.cost_neg > 0.0):
            raise ValueError("cost factors must be > 0")


@dataclass(slots=True)
class PairSample:
    """One training pair: embedding similarity, SGS value, polarity."""

    s: float
    g: float
    polarity: int  # POSITIVE or NEGATIVE


@dataclass
class LossValue:
    """Scalar loss plus its partials in s and g."""

    value: float
    d_ds: float = 0.0
    d_dg: float = 0.0


@dataclass
class BatchLoss:
    """Batch metric loss with per-pair gradients.

    d_ds/d_dg align with the input pair order and already carry the 1/M
    (positives) or 1/N (negatives) averaging factor.
    """

    value: float
    d_ds: np.ndarray
    d_dg: np.ndarray
    n_pos: int
    n_neg: int


@dataclass
class AttrLoss:
    """Binary cross-entropy over one attribute vector, with d/dp per entry."""

    value: float
    d_dp: np.ndarray


@dataclass
class ObjectiveLoss:
    """Combined objective: metric batch loss + lam * mean attribute loss."""

    value: float
    metric: BatchLoss
    attr_mean: float
    # Per attribute term, already scaled by lam / n_terms.
    attr_grads: list[np.ndarray] = field(default_factory=list)


def softplus(x):
    """log(1 + exp(x)) in overflow-safe form; works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    """Numerically stable logistic function; works on scalars and arrays."""
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def bdl(s: float, polarity: int, params: LossParams) -> LossValue:
    """Plain binomial deviance loss log(1 + exp(-(2y-1) alpha (s-beta) C_y)).

    The cost factor C_y comes from params.cost_pos/cost_neg depending on
    polarity. Returns the value and d/ds (d/dg is identically 0).
    """
    cost = params.cost_pos if polarity == POSITIVE else params.cost_neg
    sign = 2 * polarity - 1
    x = -sign * params.alpha * (s - params.beta) * cost
    grad = -sign * params.alpha * cost * float(sigmoid(x))
    return LossValue(float(softplus(x)), grad, 0.0)


def sbdl_positive(s: float, g: float, params: LossParams) -> LossValue:
    """Soft binomial deviance for a positive pair: log(1 + exp(-a(s+g-b))).

    The SGS value g relaxes the similarity target: the more semantic content
    a positive pair already shares, the smaller the loss. Both partials are
    -alpha * sigmoid(exponent) and therefore <= 0.
    """
    x = -(params.alpha * (s + g - params.beta))
    grad = -(params.alpha * float(sigmoid(x)))
    return LossValue(float(softplus(x)), grad, grad)


def sbdl_negative(s: float, g: float, params: LossParams) -> LossValue:
    """Soft binomial deviance for a negative pair: log(1 + exp(+a(s-g-b))).

    High-SGS negatives (semantically similar, different class) are pushed
    less hard: d/ds >= 0 while d/dg <= 0.
    """
    x = params.alpha * (s - g - params.beta)
    sig = float(sigmoid(x))
    return LossValue(float(softplus(x)), params.alpha * sig, -(params.alpha * sig))


def _split_pairs(pairs: list[PairSample]):
    n = len(pairs)
    s = np.fromiter((p.s for p in pairs), dtype=np.float64, count=n)
    g = np.fromiter((p.g for p in pairs), dtype=np.float64, count=n)
    pos = np.fromiter((p.polarity == POSITIVE for p in pairs), dtype=bool, count=n)
    return s, g, pos


def sbdl_batch(pairs: list[PairSample], params: LossParams) -> BatchLoss:
    """Soft binomial deviance over a pair batch.

    Value is mean(positive losses) + mean(negative losses); per-pair
    gradients carry the corresponding 1/M or 1/N factor. The per-group sums
    run over value-sorted addends so any permutation of the input list
    produces a bit-identical value.

    Raises:
        DegenerateBatchError: if the batch lacks positives or negatives.
    """
    s, g, pos = _split_pairs(pairs)
    m = int(pos.sum())
    n = len(pairs) - m
    if m == 0 or n == 0:
        raise DegenerateBatchError(f"batch needs both polarities (M={m}, N={n})")
    x = np.where(pos, -(params.alpha * (s + g - params.beta)),
                 params.alpha * (s - g - params.beta))
    vals = softplus(x)
    sig = sigmoid(x)
    scale = np.where(pos, 1.0 / m, 1.0 / n)
    d_ds = np.where(pos, -(params.alpha * sig), params.alpha * sig) * scale
    d_dg = -(params.alpha * sig) * scale
    value = float(np.sum(np.sort(vals[pos])) / m + np.sum(np.sort(vals[~pos])) / n)
    return BatchLoss(value, d_ds, d_dg, m, n)


def bdl_batch(pairs: list[PairSample], params: LossParams) -> BatchLoss:
    """Plain binomial deviance over a pair batch, same averaging as sbdl_batch.

    Used by the metric-only and multitask baselines; g is ignored and d_dg is
    zero everywhere.
    """
    s, _, pos = _split_pairs(pairs)
    m = int(pos.sum())
    n = len(pairs) - m
    if m == 0 or n == 0:
        raise DegenerateBatchError(f"batch needs both polarities (M={m}, N={n})")
    sign = np.where(pos, 1.0, -1.0)
    cost = np.where(pos, params.cost_pos, params.cost_neg)
    x = -sign * params.alpha * (s - params.beta) * cost
    vals = softplus(x)
    scale = np.where(pos, 1.0 / m, 1.0 / n)
    d_ds = -sign * params.alpha * cost * sigmoid(x) * scale
    value = float(np.sum(np.sort(vals[pos])) / m + np.sum(np.sort(vals[~pos])) / n)
    return BatchLoss(value, d_ds, np.zeros_like(d_ds), m, n)


def bce(probs, labels) -> AttrLoss:
    """Multi-label binary cross-entropy over one attribute vector.

    probs are clamped into [PROB_EPS, 1 - PROB_EPS] before the logs (the
    network forward applies the same clamp, so this is a no-op on its
    outputs). Value is the sum over attributes; d_dp is evaluated at the
    clamped probabilities.

    Raises:
        ValueError: on length mismatch or non-binary labels.
    """
    p = np.asarray(probs, dtype=np.float64)
    a = np.asarray(labels, dtype=np.float64)
    if p.shape != a.shape or p.ndim != 1:
        raise ValueError(f"probs/labels shape mismatch: {p.shape} vs {a.shape}")
    if np.any((a != 0.0) & (a != 1.0)):
        raise ValueError("labels must be binary")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    value = float(-np.sum(a * np.log(p) + (1.0 - a) * np.log1p(-p)))
    d_dp = -a / p + (1.0 - a) / (1.0 - p)
    return AttrLoss(value, d_dp)


def sgml_objective(pairs: list[PairSample], attr_terms, params: LossParams) -> ObjectiveLoss:
    """Full training objective: sbdl_batch(pairs) + lam * mean of BCE terms.

    attr_terms is a sequence of (probs, labels) tuples; the BCE reduction is
    the mean over terms of the per-term attribute sum, so lam keeps its
    meaning regardless of batch size. attr_grads come back scaled by
    lam / n_terms.
    """
    if not attr_terms:
        raise ValueError("attr_terms must be nonempty")
    metric = sbdl_batch(pairs, params)
    t = len(attr_terms)
    attr_values = np.empty(t, dtype=np.float64)
    attr_grads: list[np.ndarray] = []
    for i, (probs, labels) in enumerate(attr_terms):
        term = bce(probs, labels)
        attr_values[i] = term.value
        attr_grads.append(term.d_dp * (params.lam / t))
    attr_mean = float(np.sum(attr_values) / t)
    return ObjectiveLoss(metric.value + params.lam * attr_mean, metric, attr_mean, attr_grads)
