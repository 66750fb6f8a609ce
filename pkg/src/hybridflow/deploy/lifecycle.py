"""Lazy, all-services-at-once deployment of models."""

from __future__ import annotations

import logging
import threading
import time
from pathlib import Path
from typing import TYPE_CHECKING

from ..provenance import DeployEvent
from .config import DeploymentPlan

if TYPE_CHECKING:
    from ..connectors import Connector

log = logging.getLogger(__name__)


class DeploymentFailed(Exception):
    pass


class DeploymentManager:
    """Deploys a model the first time a step needs it and tears everything down at the end.

    Deploying initializes every service of the model before returning, so no
    step can start on a partially deployed model.
    """

    def __init__(self, plan: DeploymentPlan, staging_dir: Path | None = None):
        self.plan = plan
        self.staging_dir = Path(staging_dir or plan.controller_staging_dir)
        self._connectors: dict[str, Connector] = {}
        self._failures: dict[str, str] = {}
        self._locks = {m.name: threading.Lock() for m in plan.models}
        self._events: dict[str, DeployEvent] = {}
        self._guard = threading.Lock()

    def ensure(self, model_name: str) -> Connector:
        with self._locks[model_name]:
            if model_name in self._connectors:
                return self._connectors[model_name]
            if model_name in self._failures:
                raise DeploymentFailed(self._failures[model_name])
            model = self.plan.model(model_name)
            start = time.time()
            try:
                from ..connectors import make_connector  # connectors import deploy.config

                connector = make_connector(model, self.staging_dir)
                services = connector.initialize()
            except Exception as exc:
                self._failures[model_name] = f"deploy of {model_name!r} failed: {exc}"
                raise DeploymentFailed(self._failures[model_name]) from exc
            event = DeployEvent(model_name, model.connector_kind, start, [
                {"name": name, "initialized_at": ts, "resources": model.service(name).resource_count,
                 "slots": model.service(name).slots_per_resource}
                for name, ts in services
            ])
            log.debug("deployed %s (%s)", model_name, model.connector_kind)
            with self._guard:
                self._events[model_name] = event
                self._connectors[model_name] = connector
            return connector

    def connector(self, model_name: str) -> Connector:
        with self._guard:
            return self._connectors[model_name]

    def deployed(self) -> list[str]:
        with self._guard:
            return list(self._connectors)

    def cancel_all(self) -> None:
        with self._guard:
            connectors = list(self._connectors.values())
        for c in connectors:
            c.cancel()

    def undeploy_all(self) -> None:
        with self._guard:
            items = list(self._connectors.items())
        for name, connector in items:
            try:
                connector.teardown()
            finally:
                with self._guard:
                    self._events[name].undeployed_at = time.time()
                    del self._connectors[name]

    @property
    def events(self) -> list[DeployEvent]:
        with self._guard:
            return sorted(self._events.values(), key=lambda e: e.deployed_at)
