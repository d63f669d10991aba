"""Command-line front end.

Subcommands: gen-data, train, eval, sweep, ablate, gradcheck. Every command
is deterministic under --seed, writes its resolved configuration to
<out>/config.json, and removes partial outputs when it fails. Config
precedence: built-in defaults < --config JSON file < explicit flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as dataio
from . import evaluator, experiments, gradcheck
from .network import Checkpoint, config_hash, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train


class CommandFailed(Exception):
    """Raised for expected failures; message goes to stderr, exit code 1."""


class OutputDir:
    """Tracks files written by a command so failures can clean them up."""

    def __init__(self, out: str):
        self.out = out
        self.created: list[str] = []
        os.makedirs(out, exist_ok=True)

    def path(self, name: str) -> str:
        p = os.path.join(self.out, name)
        self.created.append(p)
        return p

    def discard_all(self) -> None:
        for p in self.created:
            for candidate in (p, p + ".splits.json"):
                if os.path.exists(candidate):
                    os.remove(candidate)

    def write_config(self, resolved: dict) -> None:
        with open(self.path("config.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(resolved, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise CommandFailed(f"config file {path} must hold a JSON object")
    return doc


def _merge(defaults: dict, file_cfg: dict, args: argparse.Namespace,
           keys: list[str]) -> dict:
    resolved = dict(defaults)
    for k in file_cfg:
        if k not in defaults:
            raise CommandFailed(f"unknown config key {k!r}")
    resolved.update(file_cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            resolved[k] = v
    return resolved


_TRAIN_KEYS = ["variant", "sampling", "n_anchors", "n_classes", "m_per_class",
               "alpha", "beta", "lam", "cost_pos", "cost_neg", "lr", "epochs",
               "seed", "sgs_source", "sgs_backprop", "trunk_dims", "fc_dim",
               "emb_dim"]


def _train_config(args: argparse.Namespace) -> TrainConfig:
    defaults = TrainConfig().to_dict()
    resolved = _merge(defaults, _load_config_file(args.config), args, _TRAIN_KEYS)
    try:
        return TrainConfig.from_dict(resolved)
    except (TypeError, ValueError) as exc:
        raise CommandFailed(f"bad training configuration: {exc}") from exc


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=["metric_only", "attr_only",
                                         "multitask", "sgml"])
    p.add_argument("--sampling", choices=["image", "batch"])
    p.add_argument("--n-anchors", dest="n_anchors", type=int)
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--m-per-class", dest="m_per_class", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--cost-pos", dest="cost_pos", type=float)
    p.add_argument("--cost-neg", dest="cost_neg", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--sgs-source", dest="sgs_source",
                   choices=["predicted", "truth"])
    p.add_argument("--sgs-backprop", dest="sgs_backprop", action="store_const",
                   const=True)
    p.add_argument("--trunk-dims", dest="trunk_dims",
                   type=lambda s: tuple(int(x) for x in s.split(",") if x))
    p.add_argument("--fc-dim", dest="fc_dim", type=int)
    p.add_argument("--emb-dim", dest="emb_dim", type=int)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults < file < flags)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")


def _parse_ks(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def cmd_gen_data(args: argparse.Namespace, out: OutputDir) -> None:
    defaults = {
        "n_categories": 8, "classes_per_category": 25, "images_per_class": 5,
        "n_attributes": 64, "n_features": 32, "attribute_flip_noise": 0.05,
        "feature_noise_sigma": 0.1, "seed": 0, "split_policy": "instance",
        "train_fraction": 0.6, "query_fraction": 0.2, "class_fraction": 0.5,
    }
    keys = list(defaults)
    resolved = _merge(defaults, _load_config_file(args.config), args, keys)
    try:
        spec = dataio.DatasetSpec(**{k: resolved[k] for k in (
            "n_categories", "classes_per_category", "images_per_class",
            "n_attributes", "n_features", "attribute_flip_noise",
            "feature_noise_sigma", "seed")})
    except ValueError as exc:
        raise CommandFailed(f"invalid dataset spec: {exc}") from exc
    dataset = dataio.generate(spec)
    rng = _rng(int(resolved["seed"]))
    policy = resolved["split_policy"]
    if policy == "instance":
        dataset = dataio.split_instance_retrieval(
            dataset, rng, resolved["train_fraction"], resolved["query_fraction"])
    elif policy == "class":
        dataset = dataio.split_class_retrieval(dataset, rng,
                                               resolved["class_fraction"])
    elif policy != "none":
        raise CommandFailed(f"unknown split policy {policy!r}")
    path = out.path("dataset.sgml")
    dataio.save(dataset, path)
    out.write_config({"command": "gen-data", **resolved})
    split_info = ", ".join(f"{k}={len(v)}" for k, v in dataset.splits.items())
    print(f"wrote {path}: {len(dataset.records)} records, "
          f"{dataset.n_classes} classes, K={dataset.n_attributes}, "
          f"D={dataset.n_features}" + (f"; splits: {split_info}" if split_info else ""))


def cmd_train(args: argparse.Namespace, out: OutputDir) -> None:
    cfg = _train_config(args)
    dataset = dataio.load(args.data)
    ckpt, history = train(cfg, dataset)
    save_checkpoint(ckpt, out.path("checkpoint.json"))
    history.to_csv(out.path("history.csv"))
    out.write_config({"command": "train", "data": args.data, **cfg.to_dict()})
    last = history.steps[-1] if history.steps else None
    print(f"trained {cfg.variant} for {ckpt.step} steps"
          + (f"; final total loss {last.total_loss:.4f}" if last else ""))


def cmd_eval(args: argparse.Namespace, out: OutputDir) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    dataset = dataio.load(args.data)
    ks = _parse_ks(args.ks)
    layers = [x for x in args.layers.split(",") if x]
    mode = args.mode.replace("-", "_")
    if mode == "auto":
        queries, gallery, mode = experiments.eval_protocol(dataset)
    elif mode == "separate":
        queries, gallery = dataset.subset("query"), dataset.subset("gallery")
    else:
        queries, gallery = dataset.subset("test"), None
    reports = evaluator.evaluate_all_layers(ckpt.params, queries, gallery,
                                            ks, mode=mode, layers=layers)
    evaluator.write_recall_csv(reports, out.path("recall.csv"))
    if args.dump_ranked:
        feats_q = evaluator.extract_features(ckpt.params, queries, layers[0])
        feats_g = evaluator.extract_features(ckpt.params, gallery, layers[0]) \
            if gallery is not None else None
        results = evaluator.retrieve(
            feats_q, feats_g, [r.id for r in queries],
            [r.id for r in gallery] if gallery is not None else None,
            k=max(ks), mode=mode)
        evaluator.dump_ranked_jsonl(results, out.path("ranked.jsonl"))
    out.write_config({"command": "eval", "checkpoint": args.checkpoint,
                      "data": args.data, "ks": ks, "layers": layers,
                      "mode": mode, "seed": args.seed or 0})
    print(evaluator.format_recall_table(reports))


def cmd_sweep(args: argparse.Namespace, out: OutputDir) -> None:
    cfg = _train_config(args)
    dataset = dataio.load(args.data)
    alphas = [float(x) for x in args.alphas.split(",") if x]
    betas = [float(x) for x in args.betas.split(",") if x]
    cells = experiments.sweep(cfg, dataset, alphas, betas, layer=args.layer)
    with open(out.path("sweep.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("alpha,beta,recall_at_1\n")
        for alpha, beta, recall in cells:
            fh.write(f"{alpha!r},{beta!r},{recall!r}\n")
    out.write_config({"command": "sweep", "data": args.data,
                      "alphas": alphas, "betas": betas, "layer": args.layer,
                      **cfg.to_dict()})
    for alpha, beta, recall in cells:
        print(f"alpha={alpha:<4g} beta={beta:<4g} R@1={recall:.4f}")


def cmd_ablate(args: argparse.Namespace, out: OutputDir) -> None:
    cfg = _train_config(args)
    dataset = dataio.load(args.data)
    ks = _parse_ks(args.ks)
    rows = experiments.ablation(cfg, dataset, ks, layer=args.layer)
    with open(out.path("ablate.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("variant," + ",".join(f"recall_at_{k}" for k in ks) + "\n")
        for variant, rep in rows:
            fh.write(variant + "," +
                     ",".join(repr(rep.recalls[k]) for k in ks) + "\n")
    out.write_config({"command": "ablate", "data": args.data, "ks": ks,
                      "layer": args.layer, **cfg.to_dict()})
    width = max(len(v) for v, _ in rows)
    print("variant".ljust(width) + "  " +
          "  ".join(f"R@{k}".rjust(8) for k in ks))
    for variant, rep in rows:
        print(variant.ljust(width) + "  " +
              "  ".join(f"{rep.recalls[k]:8.4f}" for k in ks))


def cmd_gradcheck(args: argparse.Namespace, out: OutputDir) -> None:
    results = gradcheck.run_all(scalar_cases=args.scalar_cases,
                                network_cases=args.network_cases,
                                seed=args.seed or 0,
                                flip_sign=args.inject_fault)
    report = gradcheck.format_report(results)
    with open(out.path("gradcheck.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report + "\n")
    out.write_config({"command": "gradcheck", "scalar_cases": args.scalar_cases,
                      "network_cases": args.network_cases,
                      "inject_fault": bool(args.inject_fault),
                      "seed": args.seed or 0})
    print(report)
    if any(not r.passed for r in results):
        raise CommandFailed("gradient checks failed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgml",
        description="Attribute-aware metric learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic attributed dataset")
    _add_common(p)
    p.add_argument("--categories", dest="n_categories", type=int)
    p.add_argument("--classes-per-category", dest="classes_per_category", type=int)
    p.add_argument("--images-per-class", dest="images_per_class", type=int)
    p.add_argument("--attributes", dest="n_attributes", type=int)
    p.add_argument("--features", dest="n_features", type=int)
    p.add_argument("--flip-noise", dest="attribute_flip_noise", type=float)
    p.add_argument("--feature-noise", dest="feature_noise_sigma", type=float)
    p.add_argument("--split-policy", dest="split_policy",
                   choices=["instance", "class", "none"])
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--query-fraction", dest="query_fraction", type=float)
    p.add_argument("--class-fraction", dest="class_fraction", type=float)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one variant, write checkpoint + history")
    _add_common(p)
    p.add_argument("--data", required=True, help="SGMLDATA v1 dataset file")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="Recall@K evaluation of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ks", default="1,2,4,8,16,32")
    p.add_argument("--layers", default="emb,fc,trunk")
    p.add_argument("--mode", default="auto",
                   choices=["auto", "separate", "leave-one-out"])
    p.add_argument("--dump-ranked", dest="dump_ranked", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="alpha/beta grid sweep of Recall@1")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--alphas", default="2,2.5,2.7,3")
    p.add_argument("--betas", default="0,0.1,0.3,0.5,0.7")
    p.add_argument("--layer", default="emb")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ablate", help="four-variant comparison on one dataset")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ks", default="1,2,4,8")
    p.add_argument("--layer", default="emb")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference derivative checks")
    _add_common(p)
    p.add_argument("--scalar-cases", dest="scalar_cases", type=int, default=1000)
    p.add_argument("--network-cases", dest="network_cases", type=int, default=20)
    p.add_argument("--inject-fault", dest="inject_fault", action="store_true",
                   help="flip one analytic sign to self-test the checker")
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "sgs_source", None) == "truth":
        args.sgs_source = "ground_truth"
    out = OutputDir(args.out)
    try:
        args.fn(args, out)
    except CommandFailed as exc:
        out.discard_all()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - uniform CLI failure contract
        out.discard_all()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    raise SystemExit(main())
