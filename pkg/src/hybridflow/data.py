"""Where every datum lives, and controller-relayed movement between sites.

All inter-site movement is a ``get`` to controller staging followed by a
``put`` to the destination.  Transfers are skipped when the destination
already holds the datum.
"""

from __future__ import annotations

import hashlib
import re
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .connectors import Connector
from .connectors.directory import file_digest
from .deploy.config import Resource
from .provenance import CONTROLLER, TransferRecord


class DataError(Exception):
    pass


@dataclass(frozen=True)
class DataReference:
    id: str
    origin: tuple[str, tuple[int, ...], str]
    size_bytes: int
    checksum: str
    basename: str

    def __repr__(self) -> str:
        return f"DataReference({self.id!r})"


@dataclass(frozen=True)
class Location:
    """``site`` is ``"controller"`` or a resource; ``path`` is local or resource-relative."""

    site: str
    path: str
    resource: Resource | None = None


def ref_id(step: str, tag: tuple[int, ...], port: str) -> str:
    return f"{step}[{','.join(map(str, tag))}].{port}"


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.\-]", "_", name)


class DataManager:
    """Location registry plus staging.

    ``connector_for`` maps a model name to its (deployed) connector.
    ``staging`` disables every transfer when False; only test harnesses do that.
    """

    def __init__(self, staging_dir: Path, connector_for: Callable[[str], Connector], staging: bool = True):
        self.staging_dir = Path(staging_dir) / "data"
        if self.staging_dir.exists():
            shutil.rmtree(self.staging_dir)
        self.staging_dir.mkdir(parents=True)
        self._connector_for = connector_for
        self.staging = staging
        self._refs: dict[str, DataReference] = {}
        self._locations: dict[str, list[Location]] = {}
        self._lock = threading.Lock()
        self._flights: dict[tuple[str, str], threading.RLock] = {}

    # -- registration --------------------------------------------------------

    def _add(self, ref: DataReference, loc: Location) -> None:
        with self._lock:
            if ref.id in self._refs and self._refs[ref.id] != ref:
                raise DataError(f"reference {ref.id} registered twice")
            self._refs[ref.id] = ref
            locs = self._locations.setdefault(ref.id, [])
            if loc not in locs:
                locs.append(loc)

    def _controller_path(self, data_id: str, basename: str) -> Path:
        return self.staging_dir / _safe(data_id) / basename

    def register_input(self, data_id: str, path: str | Path) -> DataReference:
        src = Path(path)
        if not src.is_file():
            raise DataError(f"workflow input file {src} does not exist")
        dst = self._controller_path(data_id, src.name)
        dst.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dst)
        ref = DataReference(data_id, ("inputs", (), data_id), dst.stat().st_size, file_digest(dst), src.name)
        self._add(ref, Location(CONTROLLER, str(dst)))
        return ref

    def register_output(self, origin: tuple[str, tuple[int, ...], str], resource: Resource,
                        remote_path: str) -> DataReference:
        """Register a file an instance left on its rank-0 resource."""
        connector = self._connector_for(resource.model)
        digest = connector.checksum(resource, remote_path)
        if digest is None:
            raise DataError(f"output not produced: {remote_path} missing on {resource}")
        size = Path(connector.remote_path(resource, remote_path)).stat().st_size
        ref = DataReference(ref_id(*origin), origin, size, digest, Path(remote_path).name)
        self._add(ref, Location(str(resource), remote_path, resource))
        return ref

    def register_stdout(self, origin: tuple[str, tuple[int, ...], str], data: bytes,
                        basename: str = "stdout") -> DataReference:
        """Captured stdout is materialized straight into controller staging."""
        data_id = ref_id(*origin)
        dst = self._controller_path(data_id, basename)
        dst.parent.mkdir(parents=True, exist_ok=True)
        dst.write_bytes(data)
        ref = DataReference(data_id, origin, len(data), hashlib.sha256(data).hexdigest(), basename)
        self._add(ref, Location(CONTROLLER, str(dst)))
        return ref

    # -- queries -------------------------------------------------------------

    def get_ref(self, data_id: str) -> DataReference:
        with self._lock:
            return self._refs[data_id]

    def locations(self, ref: DataReference) -> list[Location]:
        with self._lock:
            return list(self._locations.get(ref.id, []))

    def locality(self, refs: list[DataReference], resource: Resource) -> int:
        site = str(resource)
        with self._lock:
            return sum(1 for r in refs if any(l.site == site for l in self._locations.get(r.id, [])))

    def local_path(self, ref: DataReference) -> Path:
        for loc in self.locations(ref):
            if loc.site == CONTROLLER:
                return Path(loc.path)
        raise DataError(f"{ref.id} is not staged on the controller")

    def read_bytes(self, ref: DataReference) -> bytes:
        return self.local_path(ref).read_bytes()

    # -- movement ------------------------------------------------------------

    def _flight(self, key: tuple[str, str]):
        # Re-entrant: a controller-bound call takes the controller key twice.
        with self._lock:
            return self._flights.setdefault(key, threading.RLock())

    def ensure_at(self, ref: DataReference, target: Resource | str) -> tuple[str, list[TransferRecord]]:
        """Make ``ref`` available at ``target``; returns the path there and the transfers made.

        Concurrent calls for the same (ref, target) perform one physical copy.
        """
        site = CONTROLLER if target == CONTROLLER else str(target)
        remote_rel = f"data/{_safe(ref.id)}/{ref.basename}"
        if not self.staging and site != CONTROLLER:
            return self._connector_for(target.model).remote_path(target, remote_rel), []
        with self._flight((ref.id, site)):
            for loc in self.locations(ref):
                if loc.site == site:
                    return self._visible(loc), []
            records: list[TransferRecord] = []
            staged = None
            for loc in self.locations(ref):
                if loc.site == CONTROLLER:
                    staged = loc
                    break
            if staged is None:
                with self._flight((ref.id, CONTROLLER)):
                    staged = next((l for l in self.locations(ref) if l.site == CONTROLLER), None)
                    if staged is None:
                        staged = self._fetch(ref, records)
            if site == CONTROLLER:
                return staged.path, records
            connector = self._connector_for(target.model)
            rec = connector.put(staged.path, target, remote_rel)
            rec.data_id = ref.id
            records.append(rec)
            loc = Location(site, remote_rel, target)
            self._add(ref, loc)
            return self._visible(loc), records

    def _fetch(self, ref: DataReference, records: list[TransferRecord]) -> Location:
        errors = []
        for holder in self.locations(ref):
            if holder.resource is None:
                continue
            dst = self._controller_path(ref.id, ref.basename)
            try:
                rec = self._connector_for(holder.resource.model).get(holder.resource, holder.path, str(dst))
            except Exception as exc:
                errors.append(f"{holder.site}: {exc}")
                continue
            rec.data_id = ref.id
            records.append(rec)
            loc = Location(CONTROLLER, str(dst))
            self._add(ref, loc)
            return loc
        raise DataError(f"no reachable holder for {ref.id}: {'; '.join(errors) or 'none registered'}")

    def _visible(self, loc: Location) -> str:
        if loc.resource is None:
            return loc.path
        return self._connector_for(loc.resource.model).remote_path(loc.resource, loc.path)

    def checksum_verify(self, ref: DataReference | object, location: Location | None = None) -> bool:
        """True iff the bytes at ``location`` match the digest taken at registration.

        Inline values carry no file and verify vacuously.
        """
        if not isinstance(ref, DataReference):
            return True
        if location is None:
            return all(self.checksum_verify(ref, loc) for loc in self.locations(ref))
        if location.resource is None:
            path = Path(location.path)
            if not path.is_file():
                raise DataError(f"{location.path} unreadable")
            return file_digest(path) == ref.checksum
        digest = self._connector_for(location.resource.model).checksum(location.resource, location.path)
        if digest is None:
            raise DataError(f"{location.path} unreadable on {location.site}")
        return digest == ref.checksum
