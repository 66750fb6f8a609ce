import json
import re
import subprocess
import sys

import pytest

from harness import check_report, record_report_file

from hybridflow.cli import main
from hybridflow.dataflow import unfold_plan
from hybridflow.workflow import load_workflow

CHAIN = """
name: chain
inputs:
  x: {type: value, default: hello}
steps:
  - id: a
    command: echo {x}
    in: {x: {from: inputs.x}}
    out: {y: {type: value}}
  - id: b
    command: echo {y}-b
    in: {y: {from: a.y}}
    out: {z: {type: value}}
outputs:
  z: b.z
"""

ENV = """
deployments:
  site:
    connector: local
    config: {root: sites/site}
    services: {s: {resources: 1, slots: 2}}
bindings:
  - {step: "*", target: site/s}
"""


@pytest.fixture
def chain(tmp_path):
    (tmp_path / "wf.yaml").write_text(CHAIN)
    (tmp_path / "env.yaml").write_text(ENV)
    return tmp_path / "wf.yaml", tmp_path / "env.yaml"


def test_validate_ok_is_silent(chain, capsys):
    wf, env = chain
    assert main(["validate", "-w", str(wf), "-e", str(env)]) == 0
    out = capsys.readouterr()
    assert out.out == "" and out.err == ""


def test_validate_unbound_step(chain, capsys):
    wf, env = chain
    env.write_text(ENV.replace('"*"', "a"))
    assert main(["validate", "-w", str(wf), "-e", str(env)]) == 1
    assert "b" in capsys.readouterr().err.split("unbound step(s):")[1]


def test_validate_cycle(tmp_path, capsys):
    wf = tmp_path / "wf.yaml"
    wf.write_text(CHAIN.replace("from: inputs.x", "from: b.z"))
    assert main(["validate", "-w", str(wf)]) == 1
    err = capsys.readouterr().err
    assert "cycle" in err and "a" in err and "b" in err


@pytest.mark.parametrize("text", ["name: [", "name: x\nsteps: 5\n"])
def test_validate_syntax_is_usage_failure(tmp_path, text):
    wf = tmp_path / "wf.yaml"
    wf.write_text(text)
    assert main(["validate", "-w", str(wf)]) == 2


def test_validate_missing_file(tmp_path):
    assert main(["validate", "-w", str(tmp_path / "nope.yaml")]) == 2


def test_bad_flags_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--variants", "x", "--hours", "1", "--slots", "1"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--variants", "1", "--hours", "1", "--slots", "0"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_estimate_rows(capsys):
    assert main(["estimate", "--variants", "990", "--hours", "15", "--slots", "1,180,990"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    hours = [float(re.search(r": ([0-9.]+) h", r).group(1)) for r in rows]
    assert hours == [14850.0, 90.0, 15.0]
    assert hours == sorted(hours, reverse=True)


def test_plan_chain_depths_zero(chain, capsys):
    wf, env = chain
    assert main(["plan", "-w", str(wf), "-e", str(env)]) == 0
    out = capsys.readouterr().out
    rows = [l.split() for l in out.splitlines()[1:3]]
    assert [r[0] for r in rows] == ["a", "b"] and [r[3] for r in rows] == ["0", "0"]
    assert "a -> b" in out


def _gridgen(tmp_path, *extra):
    args = ["gridgen", "-o", str(tmp_path / "g"), *extra]
    assert main(args) == 0
    return tmp_path / "g" / "workflow.yaml", tmp_path / "g" / "env.yaml"


def test_plan_grid_classify(tmp_path, capsys):
    wf, env = _gridgen(tmp_path, "--networks", "n1,n2", "--hp-count", "1", "--datasets", "d", "--folds", "2")
    capsys.readouterr()
    assert main(["plan", "-w", str(wf), "-e", str(env)]) == 0
    first = capsys.readouterr().out
    assert main(["plan", "-w", str(wf), "-e", str(env)]) == 0
    assert capsys.readouterr().out == first
    (row,) = [l for l in first.splitlines() if l.startswith("classify ")]
    assert row.split()[3] == "2"
    assert row.count("broadcast") == 1
    oracle = unfold_plan(load_workflow(wf))["classify"]
    assert oracle.depth == 2
    assert [p.mode for p in oracle.ports.values()].count("broadcast") == 1


def test_gridgen_manifest(tmp_path):
    _gridgen(tmp_path, "--networks", "n1,n2", "--learning-rates", "0.1,0.01", "--datasets", "d1,d2", "--folds", "3")
    manifest = json.loads((tmp_path / "g" / "manifest.json").read_text())
    assert manifest["variant_count"] == 8
    assert manifest["variants"][0] == "n1|hp0|d1"


def test_run_grid_sandbox_simbatch(tmp_path):
    wf, env = _gridgen(tmp_path, "--networks", "n1,n2", "--hp-count", "2", "--datasets", "d", "--folds", "2",
                       "--batch-limit", "2", "--local-connector", "sandbox")
    out = tmp_path / "out"
    assert main(["run", "-w", str(wf), "-e", str(env), "-o", str(out), "--seed", "11"]) == 0
    report = record_report_file("cli-grid", out / "report.json")
    check_report(report)
    assert report["run"]["status"] == "success"
    assert {d["connector"] for d in report["deployments"]} == {"sim-batch", "sandbox"}
    ranking = json.loads((out / "ranking.json").read_text())
    assert len(ranking) == 4
    assert report["outputs"] == {"ranking": "ranking.json"}


def test_run_failing_step_with_retry(tmp_path):
    wf = tmp_path / "wf.yaml"
    wf.write_text(CHAIN.replace("command: echo {y}-b", 'command: sh -c "exit 4"'))
    (tmp_path / "env.yaml").write_text(ENV)
    out = tmp_path / "out"
    code = main(["run", "-w", str(wf), "-e", str(tmp_path / "env.yaml"), "-o", str(out), "--retries", "1"])
    assert code == 1
    report = record_report_file("cli-fail", out / "report.json")
    (b,) = [i for i in report["instances"] if i["instance"]["step"] == "b"]
    assert b["attempts"] == 2 and b["exit_code"] == 4 and b["status"] == "failed"
    assert report["run"]["status"] == "failed"


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "report.json"}


FILES = """
name: files
inputs:
  xs: {type: "value[]", default: [c, a, b]}
steps:
  - id: w
    command: sh -c "printf %s-{x} {x} > {outdir}/f.txt"
    in: {x: {from: inputs.xs, type: "value[]"}}
    out: {f: {type: file, capture: f.txt}}
    scatter: [x]
  - id: j
    command: cat {fs}
    in: {fs: {from: w.f, type: "file[]"}}
    out: {all: {type: value}}
outputs:
  parts: w.f
  all: j.all
"""


def test_run_confluence_and_normalized_report(tmp_path):
    (tmp_path / "wf.yaml").write_text(FILES)
    (tmp_path / "env.yaml").write_text(ENV)
    base = ["run", "-w", str(tmp_path / "wf.yaml"), "-e", str(tmp_path / "env.yaml"), "--normalize-times"]
    assert main(base + ["-o", str(tmp_path / "o1"), "--max-concurrency", "1"]) == 0
    assert main(base + ["-o", str(tmp_path / "o2")]) == 0
    t1, t2 = _tree(tmp_path / "o1"), _tree(tmp_path / "o2")
    assert t1 == t2
    assert json.loads(t1["all.json"]) == "c-ca-ab-b"
    assert sorted(k for k in t1 if k.startswith("parts/")) == ["parts/0/f.txt", "parts/1/f.txt", "parts/2/f.txt"]
    r1 = record_report_file("cli-conf-1", tmp_path / "o1" / "report.json")
    assert r1["run"]["started"] == "1970-01-01T00:00:00.000Z"
    assert all(i["queued"] == "1970-01-01T00:00:00.000Z" for i in r1["instances"])


def test_run_missing_env_is_usage_failure(chain, tmp_path):
    wf, _ = chain
    assert main(["run", "-w", str(wf), "-e", str(tmp_path / "none.yaml"), "-o", str(tmp_path / "o")]) == 2


def test_run_input_override(chain, tmp_path):
    wf, env = chain
    out = tmp_path / "o"
    assert main(["run", "-w", str(wf), "-e", str(env), "-o", str(out), "--input", "x=bye"]) == 0
    assert json.loads((out / "z.json").read_text()) == "bye-b"
    record_report_file("cli-input", out / "report.json")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hybridflow", "estimate", "--variants", "990", "--hours", "15",
                           "--slots", "990"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "15.0 h" in proc.stdout
