"""Provenance records and the JSON run report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

CONTROLLER = "controller"
_EPOCH = "1970-01-01T00:00:00.000Z"


def iso(ts: float | None) -> str | None:
    if ts is None:
        return None
    # Truncation keeps ordering monotone between recorded instants.
    dt = datetime.fromtimestamp(int(ts * 1000) / 1000, tz=timezone.utc)
    return dt.isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass
class TransferRecord:
    """One controller-initiated copy.  ``in`` = controller to site, ``out`` = site to controller."""

    direction: str
    resource: str
    local_path: str
    remote_path: str
    bytes: int
    wall_ms: float
    data_id: str | None = None

    @property
    def src(self) -> str:
        return CONTROLLER if self.direction == "in" else self.resource

    @property
    def dst(self) -> str:
        return self.resource if self.direction == "in" else CONTROLLER

    def to_dict(self, normalize: bool = False) -> dict[str, Any]:
        return {
            "direction": self.direction,
            "src": self.src,
            "dst": self.dst,
            "resource": self.resource,
            "local_path": self.local_path,
            "remote_path": self.remote_path,
            "bytes": self.bytes,
            "wall_ms": 0 if normalize else round(self.wall_ms, 3),
            "data": self.data_id,
        }


@dataclass
class ProvenanceRecord:
    step: str
    tag: tuple[int, ...]
    model: str
    service: str
    resources: list[int] = field(default_factory=list)
    queued: float | None = None
    started: float | None = None
    finished: float | None = None
    exit_code: int | None = None
    attempts: int = 0
    status: str = "pending"
    error: str | None = None
    truncated: bool = False
    transfers: list[TransferRecord] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)

    def to_dict(self, normalize: bool = False) -> dict[str, Any]:
        def ts(v):
            return (_EPOCH if v is not None else None) if normalize else iso(v)
        return {
            "instance": {"step": self.step, "tag": list(self.tag)},
            "binding": {"model": self.model, "service": self.service},
            "resources": list(self.resources),
            "queued": ts(self.queued),
            "started": ts(self.started),
            "finished": ts(self.finished),
            "exit_code": self.exit_code,
            "attempts": self.attempts,
            "status": self.status,
            "error": self.error,
            "truncated": self.truncated,
            "transfers": [t.to_dict(normalize) for t in self.transfers],
            "outputs": list(self.outputs),
        }


@dataclass
class DeployEvent:
    model: str
    connector: str
    deployed_at: float
    services: list[dict[str, Any]] = field(default_factory=list)
    undeployed_at: float | None = None

    def to_dict(self, normalize: bool = False) -> dict[str, Any]:
        def ts(v):
            return (_EPOCH if v is not None else None) if normalize else iso(v)
        return {
            "model": self.model,
            "connector": self.connector,
            "deployed_at": ts(self.deployed_at),
            "undeployed_at": ts(self.undeployed_at),
            "services": [dict(s, initialized_at=ts(s["initialized_at"])) for s in self.services],
        }


def build_report(outcome, normalize: bool = False, outputs: dict[str, str] | None = None) -> dict[str, Any]:
    """The machine-readable reproducibility trail of one run."""
    run = {
        "workflow": outcome.workflow,
        "seed": outcome.seed,
        "started": _EPOCH if normalize else iso(outcome.started),
        "finished": _EPOCH if normalize else iso(outcome.finished),
        "status": outcome.status,
    }
    if outcome.error:
        run["error"] = outcome.error
    records = sorted(outcome.provenance, key=lambda r: (r.step, r.tag))
    return {
        "run": run,
        "deployments": [d.to_dict(normalize) for d in outcome.deployments],
        "instances": [r.to_dict(normalize) for r in records],
        "transfers": [t.to_dict(normalize) for t in outcome.transfers],
        "outputs": dict(outputs or {}),
    }


def write_report(report: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path
