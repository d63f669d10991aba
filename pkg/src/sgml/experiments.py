"""Composed experiment runners shared by the CLI and the test suite."""

from __future__ import annotations

from dataclasses import replace

from .data import Dataset
from .evaluator import RecallReport, evaluate_all_layers
from .network import Checkpoint
from .trainer import TrainConfig, TrainingHistory, train

ABLATION_ORDER = ("metric_only", "attr_only", "multitask", "sgml")


def eval_protocol(dataset: Dataset) -> tuple[list, list | None, str]:
    """Pick the evaluation protocol the dataset's splits call for.

    query/gallery splits -> separate mode; a test split -> leave-one-out.
    """
    if "query" in dataset.splits and "gallery" in dataset.splits:
        return dataset.subset("query"), dataset.subset("gallery"), "separate"
    if "test" in dataset.splits:
        return dataset.subset("test"), None, "leave_one_out"
    raise ValueError(
        "dataset needs either query+gallery splits or a test split for "
        f"evaluation; have {sorted(dataset.splits)}")


def train_and_eval(cfg: TrainConfig, dataset: Dataset, ks,
                   layers=("emb",)) -> tuple[Checkpoint, TrainingHistory,
                                             list[RecallReport]]:
    ckpt, history = train(cfg, dataset)
    queries, gallery, mode = eval_protocol(dataset)
    reports = evaluate_all_layers(ckpt.params, queries, gallery, ks,
                                  mode=mode, layers=layers)
    return ckpt, history, reports


def ablation(base_cfg: TrainConfig, dataset: Dataset, ks,
             layer: str = "emb") -> list[tuple[str, RecallReport]]:
    """Train all four variants on the same data and seed; evaluate each."""
    rows = []
    for variant in ABLATION_ORDER:
        cfg = replace(base_cfg, variant=variant)
        _, _, reports = train_and_eval(cfg, dataset, ks, layers=(layer,))
        rows.append((variant, reports[0]))
    return rows


def sweep(base_cfg: TrainConfig, dataset: Dataset, alphas, betas,
          layer: str = "emb") -> list[tuple[float, float, float]]:
    """Recall@1 over the (alpha, beta) grid, rows sorted ascending."""
    cells = []
    for alpha in sorted(alphas):
        for beta in sorted(betas):
            cfg = replace(base_cfg, alpha=float(alpha), beta=float(beta))
            _, _, reports = train_and_eval(cfg, dataset, ks=(1,), layers=(layer,))
            cells.append((float(alpha), float(beta), reports[0].recalls[1]))
    return cells
