import random

import pytest

import dagsim
from hybridflow.dataflow import RunOptions, execute
from hybridflow.deploy import parse_environment
from hybridflow.workflow import parse_workflow


def test_reference_on_hand_computed_dag():
    dag = {
        "inputs": {"L0": ["x", "y"], "L1": []},
        "steps": [
            {"id": "s0", "ports": [("p0", "inputs.L0", "value[]")], "scatter": ["p0"], "method": "dot"},
            {"id": "s1", "ports": [("p0", "s0.f", "file[]"), ("p1", "inputs.s0", "value")], "scatter": [],
             "method": "dot"},
            {"id": "s2", "ports": [("p0", "inputs.L1", "value[]")], "scatter": ["p0"], "method": "dot"},
            {"id": "s3", "ports": [("p0", "s2.v", "value[]")], "scatter": [], "method": "dot"},
        ],
    }
    out = dagsim.reference(dag)
    assert out["s0_v"] == ["s0(x)", "s0(y)"]
    assert out["s1_v"] == "s1(s0(x);s0(y);,s)"
    assert out["s1_f"] == b"s1(s0(x);s0(y);,s)"
    assert out["s2_v"] == []
    assert out["s3_v"] == "s3([])"
    assert dagsim.count_instances(dag) == 4


@pytest.mark.parametrize("seed", range(1000, 1010))
def test_engine_matches_reference(seed, tmp_path):
    dag = dagsim.random_dag(random.Random(seed))
    (tmp_path / "fin.txt").write_text(dagsim.FILE_TEXT)
    w = parse_workflow(dagsim.to_yaml(dag), base_dir=tmp_path)
    env = parse_environment(dagsim.environment(dag, "sandbox", random.Random(seed)), base_dir=tmp_path)
    outcome = execute(w, env, RunOptions())
    assert outcome.ok, outcome.error
    assert outcome.materialized() == dagsim.reference(dag)
