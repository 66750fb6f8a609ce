"""Workflow and environment generator for a networks x hyperparams x datasets x folds grid."""

from __future__ import annotations

import itertools
import json
import shlex
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .stubs import variant_id

CLASSIFY = "classify"
FOLD_REDUCE = "fold_reduce"
RANK = "rank"
PRETRAIN = "pretrain"
PREPROCESS = "preprocess"


class GridSpecError(ValueError):
    pass


@dataclass
class GridSpec:
    networks: list[str]
    hyperparams: list[dict[str, Any]]
    datasets: list[str]
    folds: int = 1

    def __post_init__(self):
        if not isinstance(self.folds, int) or self.folds < 1:
            raise GridSpecError("folds must be a positive integer")
        named = []
        for i, hp in enumerate(self.hyperparams):
            hp = dict(hp)
            hp.setdefault("name", f"hp{i}")
            named.append(hp)
        self.hyperparams = named
        for axis, names in (("networks", self.networks), ("hyperparams", self.hp_names),
                            ("datasets", self.datasets)):
            if len(set(names)) != len(names):
                raise GridSpecError(f"{axis} names must be unique")
            for n in names:
                if not isinstance(n, str) or not n or "|" in n:
                    raise GridSpecError(f"{axis}: invalid name {n!r}")

    @property
    def hp_names(self) -> list[str]:
        return [hp["name"] for hp in self.hyperparams]

    @property
    def variant_count(self) -> int:
        return len(self.networks) * len(self.hyperparams) * len(self.datasets)


def hyperparam_grid(learning_rates: list[float], weight_decays: list[float],
                    lr_decays: list[float]) -> list[dict[str, Any]]:
    """Cartesian product of the three training knobs, named hp0, hp1, ..."""
    return [{"name": f"hp{i}", "learning_rate": lr, "weight_decay": wd, "lr_decay": d}
            for i, (lr, wd, d) in enumerate(itertools.product(learning_rates, weight_decays, lr_decays))]


def enumerate_variants(spec: GridSpec) -> list[str]:
    """Variant ids, networks outermost, then hyperparams, then datasets."""
    return [variant_id(n, h, d) for n in spec.networks for h in spec.hp_names for d in spec.datasets]


@dataclass
class SiteOptions:
    batch_connector: str = "sim-batch"
    batch_limit: int = 4
    batch_resources: int = 4
    poll_interval_ms: int = 20
    local_connector: str = "local"
    local_slots: int = 4
    staging_dir: str = "staging"


def _stub(python: str, stage: str, args: str) -> str:
    return f"{shlex.quote(python)} -m hybridflow.grid.stubs {stage} {args}"


def workflow_document(spec: GridSpec, python: str | None = None) -> dict[str, Any]:
    py = python or sys.executable
    return {
        "name": "universal-pipeline",
        "inputs": {
            "networks": {"type": "value[]", "default": list(spec.networks)},
            "hyperparams": {"type": "value[]", "default": [dict(h) for h in spec.hyperparams]},
            "datasets": {"type": "value[]", "default": list(spec.datasets)},
            "folds": {"type": "value[]", "default": list(range(spec.folds))},
        },
        "steps": [
            {
                "id": PREPROCESS,
                "command": _stub(py, "preprocess", "--dataset {dataset} --out {outdir}/preprocessed.dat"),
                "in": {"dataset": {"from": "inputs.datasets", "type": "value[]"}},
                "out": {"data": {"type": "file", "capture": "preprocessed.dat"}},
                "scatter": ["dataset"],
            },
            {
                "id": "segmentation",
                "command": _stub(py, "segment", "--input {data} --out {outdir}/segmented.dat"),
                "in": {"data": {"from": f"{PREPROCESS}.data", "type": "file"}},
                "out": {"segmented": {"type": "file", "capture": "segmented.dat"}},
            },
            {
                "id": "augmentation",
                "command": _stub(py, "augment", "--network {network} --hparams {hparams} --dataset {dataset} "
                                                "--datasets {datasets} --out {outdir}/augmented.json "
                                                "--segmented {segmented}"),
                "in": {
                    "network": {"from": "inputs.networks", "type": "value[]"},
                    "hparams": {"from": "inputs.hyperparams", "type": "value[]"},
                    "dataset": {"from": "inputs.datasets", "type": "value[]"},
                    "datasets": {"from": "inputs.datasets", "type": "value[]"},
                    "segmented": {"from": "segmentation.segmented", "type": "file[]"},
                },
                "out": {"augmented": {"type": "file", "capture": "augmented.json"}},
                "scatter": ["network", "hparams", "dataset"],
                "scatter_method": "cross",
            },
            {
                "id": PRETRAIN,
                "command": _stub(py, "pretrain", "--input {augmented} --out {outdir}/weights.json"),
                "in": {"augmented": {"from": "augmentation.augmented", "type": "file"}},
                "out": {"weights": {"type": "file", "capture": "weights.json"},
                        "variant": {"type": "value"}},
            },
            {
                "id": CLASSIFY,
                "command": _stub(py, "classify", "--weights {weights} --fold {fold}"),
                "in": {"weights": {"from": f"{PRETRAIN}.weights", "type": "file"},
                       "fold": {"from": "inputs.folds", "type": "value[]"}},
                "out": {"metric": {"type": "value"}},
                "scatter": ["fold"],
            },
            {
                "id": FOLD_REDUCE,
                "command": _stub(py, "fold-reduce", "--variant {variant} --metrics {metrics} "
                                                    "--out {outdir}/summary.json"),
                "in": {"variant": {"from": f"{PRETRAIN}.variant", "type": "value"},
                       "metrics": {"from": f"{CLASSIFY}.metric", "type": "value[]"}},
                "out": {"summary": {"type": "file", "capture": "summary.json"}},
            },
            {
                "id": RANK,
                "command": _stub(py, "rank", "--summaries {summaries}"),
                "in": {"summaries": {"from": f"{FOLD_REDUCE}.summary", "type": "file[]"}},
                "out": {"ranking": {"type": "value"}},
            },
        ],
        "outputs": {"ranking": f"{RANK}.ranking"},
    }


def environment_document(opts: SiteOptions | None = None) -> dict[str, Any]:
    """Preprocessing and training on the batch site, reductions on the local one."""
    o = opts or SiteOptions()
    batch_config: dict[str, Any] = {"root": "sites/hpc"}
    if o.batch_connector == "sim-batch":
        batch_config.update(max_concurrent_jobs=o.batch_limit, submit_delay_ms=0,
                            poll_interval_ms=o.poll_interval_ms)
    return {
        "deployments": {
            "hpc": {
                "connector": o.batch_connector,
                "config": batch_config,
                "services": {"cpu": {"resources": 1, "slots": max(1, o.batch_limit)},
                             "gpu": {"resources": o.batch_resources, "slots": 1}},
            },
            "cloud": {
                "connector": o.local_connector,
                "config": {"root": "sites/cloud"},
                "services": {"host": {"resources": 1, "slots": o.local_slots}},
            },
        },
        "bindings": [
            {"step": PREPROCESS, "target": "hpc/cpu"},
            {"step": "segmentation", "target": "hpc/cpu"},
            {"step": "augmentation", "target": "hpc/gpu"},
            {"step": PRETRAIN, "target": "hpc/gpu"},
            {"step": CLASSIFY, "target": "hpc/gpu"},
            {"step": FOLD_REDUCE, "target": "cloud/host"},
            {"step": RANK, "target": "cloud/host"},
        ],
        "staging_dir": o.staging_dir,
    }


def _dump(doc: dict[str, Any]) -> str:
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=False, width=120)


def generate(spec: GridSpec, python: str | None = None, sites: SiteOptions | None = None) -> tuple[str, str]:
    """Return (workflow text, environment text)."""
    return _dump(workflow_document(spec, python)), _dump(environment_document(sites))


def manifest(spec: GridSpec) -> dict[str, Any]:
    return {
        "variants": enumerate_variants(spec),
        "variant_count": spec.variant_count,
        "folds": spec.folds,
        "networks": list(spec.networks),
        "hyperparams": [dict(h) for h in spec.hyperparams],
        "datasets": list(spec.datasets),
    }


def write_grid(spec: GridSpec, outdir: str | Path, python: str | None = None,
               sites: SiteOptions | None = None) -> dict[str, Path]:
    """Write workflow.yaml, env.yaml and manifest.json into ``outdir``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    wf_text, env_text = generate(spec, python, sites)
    paths = {"workflow": out / "workflow.yaml", "env": out / "env.yaml", "manifest": out / "manifest.json"}
    paths["workflow"].write_text(wf_text, encoding="utf-8")
    paths["env"].write_text(env_text, encoding="utf-8")
    paths["manifest"].write_text(json.dumps(manifest(spec), indent=2) + "\n", encoding="utf-8")
    return paths

