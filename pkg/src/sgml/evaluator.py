"""Retrieval evaluation: cosine-ranked search and Recall@K.

Ranking is exact exhaustive cosine search; ties are broken by ascending
gallery index so results are deterministic and reproducible across
implementations. Two protocols:

* separate: a query set is ranked against a distinct gallery set.
* leave_one_out: every record queries the remaining records of the same set;
  queries whose class has fewer than 2 members are excluded (and counted).

``recall_at_k_bruteforce`` is an intentionally naive per-query re-ranking
using the scalar cosine kernel; it exists purely to cross-check the
vectorized path and shares nothing with it beyond the tie rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import feature_matrix, labels
from .network import NetworkParams, forward
from .similarity import cosine_similarity

LAYERS = ("emb", "fc", "trunk")
MODES = ("separate", "leave_one_out")


@dataclass
class RetrievalResult:
    query_id: str
    ranked_ids: list[str]
    scores: np.ndarray


@dataclass
class RecallReport:
    layer: str
    recalls: dict[int, float]
    query_count: int
    excluded_count: int = 0


def extract_features(params: NetworkParams, records, layer: str) -> np.ndarray:
    """Features from a frozen forward pass: emb / fc / trunk, row-aligned."""
    if layer not in LAYERS:
        raise ValueError(f"layer must be one of {LAYERS}, got {layer!r}")
    out, _ = forward(params, feature_matrix(records))
    return {"emb": out.embeddings, "fc": out.fc_out, "trunk": out.trunk_out}[layer]


def _score_matrix(queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    # Zero-norm rows (possible for dead-ReLU trunk features) score 0 against
    # everything rather than erroring; the tie rule keeps ranking defined.
    qn = np.linalg.norm(queries, axis=1, keepdims=True)
    gn = np.linalg.norm(gallery, axis=1, keepdims=True)
    qn[qn == 0.0] = 1.0
    gn[gn == 0.0] = 1.0
    return (queries / qn) @ (gallery / gn).T


def _check_mode_args(mode: str, gallery, gallery_labels) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "leave_one_out" and (gallery is not None or gallery_labels is not None):
        raise ValueError("leave_one_out ranks queries against themselves; "
                         "pass gallery=None")


def recall_at_k(queries, gallery, query_labels, gallery_labels, ks,
                mode: str = "separate", layer: str = "") -> RecallReport:
    """Fraction of queries whose top-K gallery items contain a same-class item.

    Ties break by ascending gallery index. In separate mode a query whose
    class is absent from the gallery simply never scores a hit; in
    leave_one_out mode such queries (class size < 2) are excluded from the
    average and reported in excluded_count.

    Raises:
        ValueError: on K <= 0, empty inputs, or bad mode arguments.
    """
    ks = [int(k) for k in ks]
    if any(k <= 0 for k in ks):
        raise ValueError("every K must be positive")
    _check_mode_args(mode, gallery, gallery_labels)
    q = np.asarray(queries, dtype=np.float64)
    qy = np.asarray(query_labels, dtype=np.int64)
    if mode == "leave_one_out":
        g, gy = q, qy
    else:
        g = np.asarray(gallery, dtype=np.float64)
        gy = np.asarray(gallery_labels, dtype=np.int64)
    if q.shape[0] == 0 or g.shape[0] == 0:
        raise ValueError("queries and gallery must be nonempty")

    scores = _score_matrix(q, g)
    eligible = np.ones(q.shape[0], dtype=bool)
    if mode == "leave_one_out":
        scores[np.arange(q.shape[0]), np.arange(q.shape[0])] = -np.inf
        count_of = dict(zip(*np.unique(qy, return_counts=True)))
        eligible = np.asarray([count_of[int(c)] >= 2 for c in qy])
    order = np.argsort(-scores, axis=1, kind="stable")
    hit_label = gy[order] == qy[:, None]

    n_gallery = g.shape[0] - (1 if mode == "leave_one_out" else 0)
    n_eligible = int(eligible.sum())
    if n_eligible == 0:
        raise ValueError("no eligible queries (every class has < 2 members)")
    recalls = {}
    for k in ks:
        kk = min(k, n_gallery)
        hits = hit_label[:, :kk].any(axis=1)
        recalls[k] = float(np.sum(hits & eligible) / n_eligible)
    return RecallReport(layer, recalls, n_eligible,
                        int(q.shape[0] - n_eligible))


def recall_at_k_bruteforce(queries, gallery, query_labels, gallery_labels, ks,
                           mode: str = "separate", layer: str = "") -> RecallReport:
    """Independent O(n^2) oracle for recall_at_k (same tie rule).

    Uses the scalar cosine kernel per pair, so it requires nonzero vectors.
    """
    ks = [int(k) for k in ks]
    if any(k <= 0 for k in ks):
        raise ValueError("every K must be positive")
    _check_mode_args(mode, gallery, gallery_labels)
    q = np.asarray(queries, dtype=np.float64)
    qy = [int(c) for c in query_labels]
    if mode == "leave_one_out":
        g, gy = q, qy
    else:
        g = np.asarray(gallery, dtype=np.float64)
        gy = [int(c) for c in gallery_labels]
    if q.shape[0] == 0 or g.shape[0] == 0:
        raise ValueError("queries and gallery must be nonempty")

    class_sizes: dict[int, int] = {}
    for c in gy:
        class_sizes[c] = class_sizes.get(c, 0) + 1
    hits_per_k = {k: 0 for k in ks}
    n_eligible = 0
    for qi in range(q.shape[0]):
        if mode == "leave_one_out" and class_sizes.get(qy[qi], 0) < 2:
            continue
        n_eligible += 1
        sims = []
        for gi in range(g.shape[0]):
            if mode == "leave_one_out" and gi == qi:
                continue
            sims.append((-cosine_similarity(q[qi], g[gi]), gi))
        sims.sort()
        ranked = [gi for _, gi in sims]
        for k in ks:
            if any(gy[gi] == qy[qi] for gi in ranked[:k]):
                hits_per_k[k] += 1
    if n_eligible == 0:
        raise ValueError("no eligible queries (every class has < 2 members)")
    recalls = {k: hits_per_k[k] / n_eligible for k in ks}
    return RecallReport(layer, recalls, n_eligible, q.shape[0] - n_eligible)


def retrieve(queries, gallery, query_ids, gallery_ids, k: int,
             mode: str = "separate") -> list[RetrievalResult]:
    """Top-k ranked lists (ids and scores, descending) per query."""
    if k <= 0:
        raise ValueError("k must be positive")
    q = np.asarray(queries, dtype=np.float64)
    if mode == "leave_one_out":
        if gallery is not None:
            raise ValueError("leave_one_out ranks queries against themselves")
        g, gallery_ids = q, query_ids
    elif mode == "separate":
        g = np.asarray(gallery, dtype=np.float64)
    else:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    scores = _score_matrix(q, g)
    if mode == "leave_one_out":
        scores[np.arange(q.shape[0]), np.arange(q.shape[0])] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")
    n_gallery = g.shape[0] - (1 if mode == "leave_one_out" else 0)
    kk = min(k, n_gallery)
    results = []
    for qi in range(q.shape[0]):
        top = order[qi, :kk]
        results.append(RetrievalResult(
            query_id=str(query_ids[qi]),
            ranked_ids=[str(gallery_ids[gi]) for gi in top],
            scores=scores[qi, top].copy(),
        ))
    return results


def evaluate_all_layers(params: NetworkParams, query_records,
                        gallery_records, ks, mode: str = "separate",
                        layers=LAYERS) -> list[RecallReport]:
    """One RecallReport per feature layer over the same query set."""
    qy = labels(query_records)
    gy = labels(gallery_records) if gallery_records is not None else None
    reports = []
    for layer in layers:
        qf = extract_features(params, query_records, layer)
        gf = extract_features(params, gallery_records, layer) \
            if gallery_records is not None else None
        reports.append(recall_at_k(qf, gf, qy, gy, ks, mode=mode, layer=layer))
    return reports


def write_recall_csv(reports: list[RecallReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("layer,k,recall,query_count,excluded_count\n")
        for rep in reports:
            for k in sorted(rep.recalls):
                fh.write(f"{rep.layer},{k},{rep.recalls[k]!r},"
                         f"{rep.query_count},{rep.excluded_count}\n")


def format_recall_table(reports: list[RecallReport]) -> str:
    """Aligned text table, one row per layer, 4-decimal recall values."""
    all_ks = sorted({k for rep in reports for k in rep.recalls})
    header = ["layer"] + [f"R@{k}" for k in all_ks] + ["queries"]
    rows = [header]
    for rep in reports:
        row = [rep.layer or "-"]
        row += [f"{rep.recalls[k]:.4f}" if k in rep.recalls else "-" for k in all_ks]
        row.append(str(rep.query_count))
        rows.append(row)
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    return "\n".join(lines)


def dump_ranked_jsonl(results: list[RetrievalResult], path) -> None:
    """Ranked lists as JSON Lines: {query, ids, scores} per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in results:
            fh.write(json.dumps({
                "query": r.query_id,
                "ids": r.ranked_ids,
                "scores": [float(s) for s in r.scores],
            }) + "\n")
