"""Vector similarity kernels.

Two kernels drive the whole engine: plain cosine similarity between
embedding vectors, and the semantic granularity similarity (SGS) mapping,
which is the same cosine applied to attribute-probability vectors. Because
attribute probabilities are nonnegative, SGS lands in [0, 1] and can be read
as "how much semantic content do these two samples share".
"""

from __future__ import annotations

import numpy as np

# Predicted attribute probabilities are clamped into [PROB_EPS, 1 - PROB_EPS]
# before they ever reach the SGS kernel, so a zero-norm probability vector can
# only come from raw user input.
PROB_EPS = 1e-7


def _as_vector(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    return v


def cosine_similarity(u, v) -> float:
    """Cosine similarity u.v / (|u| |v|), in [-1, 1].

    Args:
        u: First vector, length d >= 1.
        v: Second vector, same length.

    Returns:
        float in [-1, 1] (up to ~1e-12 accumulation slack).

    Raises:
        ValueError: on length mismatch or a zero-norm input.
    """
    u = _as_vector(u, "u")
    v = _as_vector(v, "v")
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(np.dot(u, v) / (nu * nv))


def sgs_mapping(p, q) -> float:
    """Semantic granularity similarity between two attribute-probability vectors.

    This is cosine similarity restricted to vectors with entries in [0, 1];
    nonnegativity forces the result into [0, 1].

    Raises:
        ValueError: on length mismatch, entries outside [0, 1], or an
            all-zero vector.
    """
    p = _as_vector(p, "p")
    q = _as_vector(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} vs {q.shape[0]}")
    for name, vec in (("p", p), ("q", q)):
        if np.any(vec < 0.0) or np.any(vec > 1.0):
            raise ValueError(f"{name} has entries outside [0, 1]")
    np_norm = np.linalg.norm(p)
    nq_norm = np.linalg.norm(q)
    if np_norm == 0.0 or nq_norm == 0.0:
        raise ValueError("SGS undefined for an all-zero attribute vector")
    return float(np.dot(p, q) / (np_norm * nq_norm))


def similarity_matrix(embs) -> np.ndarray:
    """Pairwise cosine similarity matrix for n embedding vectors.

    Entry (i, j) equals cosine_similarity(embs[i], embs[j]); the result is
    exactly symmetric and has a unit diagonal up to 1e-12.

    Raises:
        ValueError: if any vector has zero norm (the message names the
            offending index) or lengths differ.
    """
    m = np.asarray(embs, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected n vectors of equal length, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"zero-norm embedding at index {int(bad[0])}")
    normed = m / norms[:, None]
    sim = normed @ normed.T
    # Symmetrize exactly by mirroring the upper triangle; the diagonal is
    # computed per the scalar kernel so it matches cosine_similarity(e, e).
    upper = np.triu(sim, k=1)
    sim = upper + upper.T
    diag = np.einsum("ij,ij->i", m, m) / (norms * norms)
    np.fill_diagonal(sim, diag)
    return sim
