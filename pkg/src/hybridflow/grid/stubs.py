"""Deterministic stand-ins for the pipeline stages, run as ``python -m hybridflow.grid.stubs``.

Every stage reads the run seed from ``HF_SEED``.  Outputs depend only on the
arguments, the seed and the bytes of input files.
"""

import argparse
import hashlib
import json
import math
import os
import sys

from .metric import stub_metric


def _seed() -> int:
    return int(os.environ.get("HF_SEED", "0"))


def variant_id(network: str, hp_name: str, dataset: str) -> str:
    return f"{network}|{hp_name}|{dataset}"


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def preprocess(args) -> int:
    _write(args.out, f"dataset={args.dataset}\nstage=preprocess\n")
    return 0


def segment(args) -> int:
    _write(args.out, _read(args.input) + "stage=segment\n")
    return 0


def augment(args) -> int:
    hparams = json.loads(args.hparams)
    datasets = json.loads(args.datasets)
    if len(args.segmented) != len(datasets):
        print(f"expected {len(datasets)} segmented datasets, got {len(args.segmented)}", file=sys.stderr)
        return 3
    source = _read(args.segmented[datasets.index(args.dataset)])
    if f"dataset={args.dataset}\n" not in source:
        print(f"segmented file does not belong to {args.dataset}", file=sys.stderr)
        return 3
    record = {
        "variant": variant_id(args.network, hparams["name"], args.dataset),
        "network": args.network,
        "hparams": hparams,
        "dataset": args.dataset,
        "source_sha256": hashlib.sha256(source.encode()).hexdigest(),
    }
    _write(args.out, json.dumps(record, sort_keys=True) + "\n")
    return 0


def pretrain(args) -> int:
    record = json.loads(_read(args.input))
    weights = {"variant": record["variant"], "seed": _seed(), "init": stub_metric(_seed(), record["variant"], -1)}
    _write(args.out, json.dumps(weights, sort_keys=True) + "\n")
    print(record["variant"])
    return 0


def classify(args) -> int:
    weights = json.loads(_read(args.weights))
    variant = weights["variant"]
    print(json.dumps({"variant": variant, "fold": args.fold, "metric": stub_metric(_seed(), variant, args.fold)}))
    return 0


def fold_reduce(args) -> int:
    metrics = json.loads(args.metrics)
    if any(m["variant"] != args.variant for m in metrics):
        print("fold metrics from another variant", file=sys.stderr)
        return 3
    folds = [m["metric"] for m in sorted(metrics, key=lambda m: m["fold"])]
    mean = math.fsum(folds) / len(folds) if folds else 0.0
    _write(args.out, json.dumps({"variant": args.variant, "mean_metric": mean, "fold_metrics": folds}) + "\n")
    return 0


def rank(args) -> int:
    summaries = [json.loads(_read(p)) for p in args.summaries]
    summaries.sort(key=lambda s: (-s["mean_metric"], s["variant"]))
    print(json.dumps(summaries))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hybridflow.grid.stubs")
    sub = parser.add_subparsers(dest="stage", required=True)

    p = sub.add_parser("preprocess")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=preprocess)

    p = sub.add_parser("segment")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=segment)

    p = sub.add_parser("augment")
    p.add_argument("--network", required=True)
    p.add_argument("--hparams", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--datasets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--segmented", nargs="*", default=[])
    p.set_defaults(fn=augment)

    p = sub.add_parser("pretrain")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=pretrain)

    p = sub.add_parser("classify")
    p.add_argument("--weights", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.set_defaults(fn=classify)

    p = sub.add_parser("fold-reduce")
    p.add_argument("--variant", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=fold_reduce)

    p = sub.add_parser("rank")
    p.add_argument("--summaries", nargs="*", default=[])
    p.set_defaults(fn=rank)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
