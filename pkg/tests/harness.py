"""Shared test helpers: report registry, invariant validators, environment builders."""

from __future__ import annotations

import json
from collections import defaultdict
from datetime import datetime
from pathlib import Path

from hybridflow.dataflow import RunOptions, execute
from hybridflow.deploy import parse_environment
from hybridflow.provenance import build_report
from hybridflow.workflow import parse_workflow

CONTROLLER = "controller"

# Every provenance report produced anywhere in the session; the star-topology
# acceptance check runs over all of them.
REPORTS: list[tuple[str, dict]] = []


def record_report(label: str, report: dict) -> dict:
    REPORTS.append((label, report))
    return report


def record_report_file(label: str, path: str | Path) -> dict:
    return record_report(label, json.loads(Path(path).read_text()))


def run_workflow(label: str, workflow_text: str, env_text: str, base_dir: Path, **opts):
    """Parse, execute, register the report; returns (outcome, report)."""
    w = parse_workflow(workflow_text, base_dir=base_dir)
    env = parse_environment(env_text, base_dir=base_dir)
    outcome = execute(w, env, RunOptions(**opts))
    report = record_report(label, build_report(outcome))
    return outcome, report


def env_yaml(models: dict[str, dict], bindings: list[tuple[str, str]], staging: str = "staging") -> str:
    """models: name -> {"connector": kind, "services": {svc: (resources, slots)}, "config": {...}}"""
    doc = {"deployments": {}, "bindings": [{"step": s, "target": t} for s, t in bindings], "staging_dir": staging}
    for name, m in models.items():
        doc["deployments"][name] = {
            "connector": m["connector"],
            "config": {"root": f"sites/{name}", **m.get("config", {})},
            "services": {s: {"resources": r, "slots": k} for s, (r, k) in m["services"].items()},
        }
    return json.dumps(doc)


# -- validators ---------------------------------------------------------------


def _ts(text: str | None) -> float | None:
    if text is None:
        return None
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%S.%fZ").timestamp()


def all_transfers(report: dict) -> list[dict]:
    out = [t for inst in report["instances"] for t in inst["transfers"]]
    return out + list(report.get("transfers", []))


def star_violations(report: dict) -> list[dict]:
    """Transfers with no controller endpoint."""
    return [t for t in all_transfers(report) if CONTROLLER not in (t["src"], t["dst"])]


def slot_violations(report: dict) -> list[str]:
    """Instants where a resource runs more instances than it has slots."""
    slots = {}
    for d in report["deployments"]:
        for s in d["services"]:
            slots[(d["model"], s["name"])] = s["slots"]
    events = defaultdict(list)
    for inst in report["instances"]:
        if inst["started"] is None or inst["finished"] is None:
            continue
        b = inst["binding"]
        for idx in inst["resources"]:
            key = (b["model"], b["service"], idx)
            events[key].append((_ts(inst["started"]), 1))
            events[key].append((_ts(inst["finished"]), -1))
    bad = []
    for key, evs in events.items():
        # Releases sort before acquisitions at equal timestamps.
        evs.sort(key=lambda e: (e[0], e[1]))
        level = 0
        for t, delta in evs:
            level += delta
            if level > slots[key[:2]]:
                bad.append(f"{key} holds {level} > {slots[key[:2]]} slots at {t}")
    return bad


def coallocation_violations(report: dict) -> list[str]:
    """Instances that started before every service of their model was initialized."""
    deploys = defaultdict(list)
    for d in report["deployments"]:
        deploys[d["model"]].append(d)
    bad = []
    for inst in report["instances"]:
        if inst["started"] is None:
            continue
        model = inst["binding"]["model"]
        if len(deploys[model]) != 1:
            bad.append(f"model {model} has {len(deploys[model])} deploy events")
            continue
        last_init = max(_ts(s["initialized_at"]) for s in deploys[model][0]["services"])
        if last_init > _ts(inst["started"]):
            bad.append(f"{inst['instance']} started before {model} finished initializing")
    return bad


def timestamp_violations(report: dict) -> list[str]:
    bad = []
    for inst in report["instances"]:
        q, s, f = (_ts(inst[k]) for k in ("queued", "started", "finished"))
        if s is not None and not (q <= s <= f):
            bad.append(f"{inst['instance']}: queued/started/finished out of order")
        if inst["status"] in ("done", "failed") and inst["attempts"] < 1 and inst["started"] is not None:
            bad.append(f"{inst['instance']}: terminal with no attempt")
    return bad


def check_report(report: dict) -> None:
    assert not star_violations(report)
    assert not slot_violations(report)
    assert not coallocation_violations(report)
    assert not timestamp_violations(report)
