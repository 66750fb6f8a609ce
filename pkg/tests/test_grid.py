import json
import math
import random
import time
from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from harness import check_report, record_report

from hybridflow.connectors import SimBatchQueue
from hybridflow.dataflow import RunOptions, execute
from hybridflow.deploy import load_environment
from hybridflow.grid import GridSpec, enumerate_variants, estimate_makespan, generate, stub_metric, write_grid
from hybridflow.grid.generator import GridSpecError, SiteOptions, hyperparam_grid
from hybridflow.provenance import build_report
from hybridflow.workflow import load_workflow, parse_workflow

# Frozen from an independent big-int implementation of the documented definition.
FROZEN = [
    ((0, "a|hp0|d1", 0), float.fromhex("0x1.20fde127f409dp-1")),
    ((7, "resnet|hp3|chest", 4), float.fromhex("0x1.3d4f813067980p-7")),
    ((123456789, "", 0), float.fromhex("0x1.60121ca4bfae9p-1")),
    ((-1, "x", -1), float.fromhex("0x1.29a918da69844p-1")),
]


@pytest.mark.parametrize("args,expected", FROZEN)
def test_stub_metric_frozen_values(args, expected):
    assert stub_metric(*args) == expected


def test_stub_metric_is_uniform():
    rnd = random.Random(1)
    xs = sorted(stub_metric(rnd.randrange(1 << 32), f"v{rnd.randrange(10**6)}", rnd.randrange(10))
                for _ in range(10_000))
    n = len(xs)
    ks = max(max((i + 1) / n - x, x - i / n) for i, x in enumerate(xs))
    assert ks < 0.02
    assert all(0.0 <= x < 1.0 for x in xs)


@given(st.integers(), st.text(max_size=20), st.integers(-5, 50))
def test_stub_metric_deterministic_and_bounded(seed, vid, fold):
    a = stub_metric(seed, vid, fold)
    assert a == stub_metric(seed, vid, fold)
    assert 0.0 <= a < 1.0


def test_estimate_examples():
    assert estimate_makespan(990, 15, 990) == 15.0
    assert estimate_makespan(990, 15, 1) == 14850.0
    assert estimate_makespan(0, 15, 8) == 0
    assert estimate_makespan(990, 15, 180) == 90.0


@pytest.mark.parametrize("args", [(-1, 1, 1), (1, 0, 1), (1, 1, 0)])
def test_estimate_rejects_bad_input(args):
    with pytest.raises(ValueError):
        estimate_makespan(*args)


@given(st.integers(0, 2000), st.floats(0.01, 100), st.integers(1, 1000), st.integers(1, 1000))
def test_estimate_monotone(v, t, g1, g2):
    lo, hi = sorted((g1, g2))
    assert estimate_makespan(v, t, hi) <= estimate_makespan(v, t, lo)
    assert estimate_makespan(v, t, lo) <= estimate_makespan(v + 1, t, lo)
    assert estimate_makespan(v, t, lo) <= estimate_makespan(v, t * 2, lo)


def test_variant_order_is_row_major():
    spec = GridSpec(["n1", "n2"], [{"name": "h1"}, {"name": "h2"}], ["d1", "d2"], 1)
    ids = enumerate_variants(spec)
    assert ids[:3] == ["n1|h1|d1", "n1|h1|d2", "n1|h2|d1"]
    assert len(ids) == spec.variant_count == 8


def test_spec_validation():
    with pytest.raises(GridSpecError):
        GridSpec(["a", "a"], [{}], ["d"], 1)
    with pytest.raises(GridSpecError):
        GridSpec(["a"], [{}], ["d"], 0)
    assert GridSpec(["a"], [{}, {}], ["d"]).hp_names == ["hp0", "hp1"]


def test_hyperparam_grid():
    hps = hyperparam_grid([0.1, 0.01], [0.0, 1e-4], [0.9])
    assert len(hps) == 4
    assert hps[1] == {"name": "hp1", "learning_rate": 0.1, "weight_decay": 1e-4, "lr_decay": 0.9}


def test_generated_workflow_parses_and_is_stable():
    spec = GridSpec(["a", "b"], [{}], ["d"], 2)
    wf1, env1 = generate(spec, python="/usr/bin/python3")
    wf2, env2 = generate(spec, python="/usr/bin/python3")
    assert (wf1, env1) == (wf2, env2)
    w = parse_workflow(wf1)
    assert [s.id for s in w.steps] == ["preprocess", "segmentation", "augmentation", "pretrain", "classify",
                                       "fold_reduce", "rank"]


def test_990_factorization():
    spec = GridSpec([f"net{i}" for i in range(11)], hyperparam_grid([0.1, 0.01, 0.001], [0.0, 1e-4, 1e-3], [0.9]),
                    [f"ds{i}" for i in range(10)], 5)
    assert spec.variant_count == 990
    assert len(set(enumerate_variants(spec))) == 990


def run_grid(tmp_path, spec, seed=0, label="grid", **site):
    paths = write_grid(spec, tmp_path, sites=SiteOptions(**site))
    outcome = execute(load_workflow(paths["workflow"]), load_environment(paths["env"]), RunOptions(seed=seed))
    report = record_report(label, build_report(outcome))
    return outcome, report, json.loads(paths["manifest"].read_text())


def brute_force(spec, seed):
    rows = []
    for n in spec.networks:
        for h in spec.hyperparams:
            for d in spec.datasets:
                vid = f"{n}|{h['name']}|{d}"
                folds = [stub_metric(seed, vid, k) for k in range(spec.folds)]
                rows.append({"variant": vid, "mean_metric": math.fsum(folds) / len(folds), "fold_metrics": folds})
    return sorted(rows, key=lambda r: (-r["mean_metric"], r["variant"]))


def test_grid_2x2x1_k3(tmp_path):
    spec = GridSpec(["a", "b"], [{}, {}], ["d"], 3)
    outcome, report, manifest = run_grid(tmp_path, spec, seed=5, label="grid-2x2x1", batch_limit=4)
    assert outcome.ok, outcome.error
    counts = Counter(i["instance"]["step"] for i in report["instances"])
    assert counts == {"preprocess": 1, "segmentation": 1, "augmentation": 4, "pretrain": 4, "classify": 12,
                      "fold_reduce": 4, "rank": 1}
    assert outcome.workflow_outputs["ranking"] == brute_force(spec, 5)
    assert manifest["variants"] == enumerate_variants(spec)
    check_report(report)


def test_grid_k1_mean_is_the_fold_metric(tmp_path):
    spec = GridSpec(["a"], [{}], ["d1", "d2"], 1)
    outcome, _, _ = run_grid(tmp_path, spec, seed=3, label="grid-k1")
    assert outcome.ok, outcome.error
    for row in outcome.workflow_outputs["ranking"]:
        assert row["mean_metric"] == row["fold_metrics"][0] == stub_metric(3, row["variant"], 0)


def test_grid_preprocessing_once_per_dataset(tmp_path):
    spec = GridSpec(["a", "b", "c"], [{}], ["d1", "d2"], 1)
    outcome, report, _ = run_grid(tmp_path, spec, label="grid-datasets")
    assert outcome.ok, outcome.error
    counts = Counter(i["instance"]["step"] for i in report["instances"])
    assert counts["preprocess"] == counts["segmentation"] == 2
    assert counts["augmentation"] == 6


def test_empty_grid(tmp_path):
    spec = GridSpec([], [{}], ["d"], 2)
    outcome, report, manifest = run_grid(tmp_path, spec, label="grid-empty")
    assert outcome.ok, outcome.error
    assert outcome.workflow_outputs["ranking"] == []
    assert manifest["variants"] == []


def test_990_on_180_slots_by_simulation():
    unit = 0.05
    q = SimBatchQueue(180, poll_interval_ms=10)
    ids = [q.submit(lambda: time.sleep(unit)) for _ in range(990)]
    for i in ids:
        q.wait(i)
    jobs = q.jobs()
    q.shutdown()
    makespan = max(j.finished_at for j in jobs) - min(j.submitted_at for j in jobs)
    waves = round(makespan / unit)
    assert waves == 6
    assert waves * 15 == estimate_makespan(990, 15, 180) == 90
