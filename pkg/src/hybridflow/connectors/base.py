"""The connector contract.

Every operation is initiated by the controller.  There is deliberately no
site-to-site copy: data moves between sites only as a ``get`` to the controller
followed by a ``put`` from it.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..deploy.config import Model, Resource
from ..provenance import TransferRecord

MAX_CAPTURE = 8 * 1024 * 1024


class ConnectorError(Exception):
    pass


class PathEscapeError(ConnectorError):
    pass


@dataclass
class RunResult:
    exit_code: int
    stdout: bytes
    stderr: bytes
    wall_ms: float
    truncated: bool = False
    cancelled: bool = False


class Connector(abc.ABC):
    kind: str = "abstract"

    def __init__(self, model: Model):
        self.model = model

    @abc.abstractmethod
    def initialize(self) -> list[tuple[str, float]]:
        """Bring up every service of the model; returns (service, timestamp) per service."""

    @abc.abstractmethod
    def teardown(self) -> None: ...

    @abc.abstractmethod
    def run(self, resource: Resource, command: Sequence[str], env: Mapping[str, str],
            workdir: str) -> RunResult: ...

    @abc.abstractmethod
    def put(self, local_path: str, resource: Resource, remote_path: str) -> TransferRecord: ...

    @abc.abstractmethod
    def get(self, resource: Resource, remote_path: str, local_path: str) -> TransferRecord: ...

    def available_resources(self, service: str) -> list[Resource]:
        svc = self.model.service(service)
        return [Resource(self.model.name, service, i) for i in range(svc.resource_count)]

    @abc.abstractmethod
    def remote_path(self, resource: Resource, path: str) -> str:
        """The path a command running on ``resource`` uses for ``path``."""

    @abc.abstractmethod
    def checksum(self, resource: Resource, path: str) -> str | None:
        """Digest of a file on the resource, ``None`` if it does not exist."""

    @abc.abstractmethod
    def cancel(self) -> None:
        """Kill in-flight commands; blocks until they are reaped."""
