from pathlib import Path

from .base import MAX_CAPTURE, Connector, ConnectorError, PathEscapeError, RunResult
from .directory import LocalConnector, SandboxConnector
from .simbatch import JobCancelled, SimBatchConnector, SimBatchQueue


def make_connector(model, staging_dir: Path) -> Connector:
    """Instantiate the connector named by ``model.connector_kind``."""
    root = model.connector_config.get("root") or Path(staging_dir) / "sites" / model.name
    if model.connector_kind == "local":
        return LocalConnector(model, root)
    if model.connector_kind == "sandbox":
        return SandboxConnector(model, root)
    if model.connector_kind == "sim-batch":
        cfg = model.connector_config
        return SimBatchConnector(model, root, cfg.get("max_concurrent_jobs", 1),
                                 cfg.get("submit_delay_ms", 0), cfg.get("poll_interval_ms", 50))
    raise ValueError(f"unknown connector kind {model.connector_kind!r}")


__all__ = [
    "Connector", "ConnectorError", "JobCancelled", "LocalConnector", "MAX_CAPTURE", "PathEscapeError",
    "RunResult", "SandboxConnector", "SimBatchConnector", "SimBatchQueue", "make_connector",
]
