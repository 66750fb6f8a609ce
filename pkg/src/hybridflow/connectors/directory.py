"""Directory-backed sites: the controller host itself and isolated sandboxes.

Each resource owns ``root/<service>/<index>/``.  Remote paths are relative to
that directory and may not leave it.
"""

from __future__ import annotations

import hashlib
import os
import shutil
import subprocess
import tempfile
import threading
import time
from pathlib import Path
from typing import Mapping, Sequence

from ..deploy.config import Model, Resource
from ..provenance import TransferRecord
from .base import MAX_CAPTURE, Connector, ConnectorError, PathEscapeError, RunResult

# Variables a sandboxed command inherits from the controller.
_SANDBOX_ENV = ("PATH", "LANG", "LC_ALL", "PYTHONPATH", "SYSTEMROOT")


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_capped(fh) -> tuple[bytes, bool]:
    fh.seek(0)
    data = fh.read(MAX_CAPTURE + 1)
    return data[:MAX_CAPTURE], len(data) > MAX_CAPTURE


class DirectoryConnector(Connector):
    kind = "directory"
    inherit_env = True

    def __init__(self, model: Model, root: str | Path):
        super().__init__(model)
        self.root = Path(root).resolve()
        self._procs: set[subprocess.Popen] = set()
        self._lock = threading.Lock()
        self._cancelled = False

    def resource_dir(self, resource: Resource) -> Path:
        return self.root / resource.service / str(resource.index)

    def _resolve(self, resource: Resource, path: str) -> Path:
        if os.path.isabs(path):
            raise PathEscapeError(f"absolute remote path {path!r} on {resource}")
        base = self.resource_dir(resource)
        full = Path(os.path.normpath(base / path))
        real_base = os.path.realpath(base)
        if not (full == base or str(full).startswith(str(base) + os.sep)):
            raise PathEscapeError(f"{path!r} escapes the sandbox of {resource}")
        real = os.path.realpath(full)
        if not (real == real_base or real.startswith(real_base + os.sep)):
            raise PathEscapeError(f"{path!r} escapes the sandbox of {resource} through a link")
        return full

    def initialize(self) -> list[tuple[str, float]]:
        events = []
        for svc in self.model.services:
            for i in range(svc.resource_count):
                d = self.resource_dir(Resource(self.model.name, svc.name, i))
                # A deployment starts from an empty site.
                if d.exists():
                    shutil.rmtree(d)
                (d / "tmp").mkdir(parents=True)
            events.append((svc.name, time.time()))
        self._cancelled = False
        return events

    def teardown(self) -> None:
        self.cancel()

    def remote_path(self, resource: Resource, path: str) -> str:
        return str(self._resolve(resource, path))

    def checksum(self, resource: Resource, path: str) -> str | None:
        full = self._resolve(resource, path)
        if not full.is_file():
            return None
        return file_digest(full)

    def _environment(self, resource: Resource, env: Mapping[str, str]) -> dict[str, str]:
        if self.inherit_env:
            merged = dict(os.environ)
        else:
            merged = {k: os.environ[k] for k in _SANDBOX_ENV if k in os.environ}
            home = self.resource_dir(resource)
            merged["HOME"] = str(home)
            merged["TMPDIR"] = str(home / "tmp")
        merged.update(env)
        return merged

    def run(self, resource: Resource, command: Sequence[str], env: Mapping[str, str],
            workdir: str) -> RunResult:
        cwd = self._resolve(resource, workdir)
        cwd.mkdir(parents=True, exist_ok=True)
        start = time.monotonic()
        with tempfile.TemporaryFile() as out, tempfile.TemporaryFile() as err:
            with self._lock:
                if self._cancelled:
                    return RunResult(-1, b"", b"cancelled", 0.0, cancelled=True)
                try:
                    proc = subprocess.Popen(list(command), cwd=cwd, env=self._environment(resource, env),
                                            stdin=subprocess.DEVNULL, stdout=out, stderr=err)
                except OSError as exc:
                    # Same convention as a shell: 127 for a command that cannot be started.
                    msg = f"cannot spawn {command[0]!r} on {resource}: {exc}\n".encode()
                    return RunResult(127, b"", msg, (time.monotonic() - start) * 1000)
                self._procs.add(proc)
            try:
                code = proc.wait()
            finally:
                with self._lock:
                    self._procs.discard(proc)
            wall = (time.monotonic() - start) * 1000
            stdout, t1 = _read_capped(out)
            stderr, t2 = _read_capped(err)
        cancelled = self._cancelled and code < 0
        return RunResult(code, stdout, stderr, wall, t1 or t2, cancelled)

    def cancel(self) -> None:
        with self._lock:
            self._cancelled = True
            procs = list(self._procs)
        for p in procs:
            try:
                p.kill()
            except ProcessLookupError:
                pass
        for p in procs:
            p.wait()

    def put(self, local_path: str, resource: Resource, remote_path: str) -> TransferRecord:
        dst = self._resolve(resource, remote_path)
        start = time.monotonic()
        if not os.path.isfile(local_path):
            raise ConnectorError(f"put: missing source {local_path}")
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(local_path, dst)
        return TransferRecord("in", str(resource), str(local_path), remote_path,
                              dst.stat().st_size, (time.monotonic() - start) * 1000)

    def get(self, resource: Resource, remote_path: str, local_path: str) -> TransferRecord:
        src = self._resolve(resource, remote_path)
        start = time.monotonic()
        if not src.is_file():
            raise ConnectorError(f"get: {remote_path} not found on {resource}")
        Path(local_path).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, local_path)
        return TransferRecord("out", str(resource), str(local_path), remote_path,
                              os.path.getsize(local_path), (time.monotonic() - start) * 1000)


class LocalConnector(DirectoryConnector):
    """The controller's own host; commands see the full controller environment."""

    kind = "local"
    inherit_env = True


class SandboxConnector(DirectoryConnector):
    """An air-gapped site: scrubbed environment, HOME inside the sandbox."""

    kind = "sandbox"
    inherit_env = False
