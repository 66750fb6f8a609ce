"""Token-driven execution of a validated workflow over a deployment plan."""

from __future__ import annotations

import json
import logging
import re
import shlex
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from ..connectors import Connector, ConnectorError
from ..data import DataError, DataManager, DataReference, ref_id
from ..deploy import (
    DeploymentFailed,
    DeploymentManager,
    DeploymentPlan,
    Resource,
    Scheduler,
    SchedulingCancelled,
    resolve_bindings,
)
from ..provenance import CONTROLLER, DeployEvent, ProvenanceRecord, TransferRecord
from ..workflow import INPUTS, OUTDIR, PLACEHOLDER, Step, Workflow, WorkflowDefinitionError, topological_order, validate
from .plan import GATHER, ScatterNestingError, StepPlan, unfold_plan
from .tokens import ScatterError, Token, dot_cross_product, gather_collect

log = logging.getLogger(__name__)


class EngineSetupError(Exception):
    pass


@dataclass
class RunOptions:
    max_concurrency: int | None = None
    retries: int = 0
    seed: int = 0
    report: str | None = None
    fail_fast: bool = True
    # Harness switch: when False no file is ever copied to a site.
    stage_inputs: bool = True
    inputs: dict[str, Any] = field(default_factory=dict)


@dataclass
class RunOutcome:
    status: str
    workflow_outputs: dict[str, Any]
    provenance: list[ProvenanceRecord]
    deployments: list[DeployEvent]
    transfers: list[TransferRecord]
    workflow: str
    seed: int
    started: float
    finished: float
    error: str | None = None
    data: DataManager | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == "success"

    def resolve(self, payload: Any, reader: Callable[[DataReference], Any] | None = None) -> Any:
        """Replace every DataReference inside ``payload`` (default: controller path)."""
        reader = reader or (lambda ref: self.data.local_path(ref))
        if isinstance(payload, DataReference):
            return reader(payload)
        if isinstance(payload, list):
            return [self.resolve(p, reader) for p in payload]
        return payload

    def materialized(self) -> dict[str, Any]:
        """Workflow outputs with file references replaced by their bytes."""
        return {k: self.resolve(v, self.data.read_bytes) for k, v in self.workflow_outputs.items()}

    def records(self, step: str) -> list[ProvenanceRecord]:
        return sorted((r for r in self.provenance if r.step == step), key=lambda r: r.tag)

    def all_transfers(self) -> list[TransferRecord]:
        return [t for r in self.provenance for t in r.transfers] + list(self.transfers)


def parse_value(stdout: bytes) -> Any:
    """Captured text becomes JSON when it parses as JSON, else the stripped string."""
    text = stdout.decode("utf-8", errors="replace").rstrip("\n")
    try:
        return json.loads(text)
    except ValueError:
        return text


def render_value(value: Any) -> str:
    return value if isinstance(value, str) else json.dumps(value)


def build_command(step: Step, rendered: dict[str, str | list[str]], outdir: str) -> list[str]:
    """Substitute placeholders.  Without ``shell`` the template is split first so
    substituted text never changes argument boundaries."""
    values: dict[str, str | list[str]] = dict(rendered)
    values[OUTDIR] = outdir

    if step.shell:
        def sub(m: re.Match) -> str:
            if m.group(1) is None:
                return m.group(0)[0]
            v = values[m.group(1)]
            return " ".join(shlex.quote(x) for x in v) if isinstance(v, list) else shlex.quote(v)
        return ["/bin/sh", "-c", PLACEHOLDER.sub(sub, step.command)]

    argv: list[str] = []
    for word in shlex.split(step.command):
        whole = PLACEHOLDER.fullmatch(word)
        if whole and whole.group(1) and isinstance(values[whole.group(1)], list):
            argv.extend(values[whole.group(1)])
            continue

        def sub(m: re.Match) -> str:
            if m.group(1) is None:
                return m.group(0)[0]
            v = values[m.group(1)]
            return " ".join(v) if isinstance(v, list) else v
        argv.append(PLACEHOLDER.sub(sub, word))
    return argv


def _file_refs(payload: Any) -> list[DataReference]:
    if isinstance(payload, DataReference):
        return [payload]
    if isinstance(payload, list):
        return [r for p in payload for r in _file_refs(p)]
    return []


def _tag_str(tag: tuple[int, ...]) -> str:
    return "_".join(map(str, tag)) if tag else "root"


class Engine:
    """Fires a step instance as soon as each of its input ports holds a token.

    Token stores, size records and instance bookkeeping are guarded by one
    lock; instance bodies (deploy, reserve, stage, run, collect) run on their
    own threads outside it.
    """

    def __init__(self, workflow: Workflow, plan: DeploymentPlan, options: RunOptions | None = None):
        diags = validate(workflow)
        if diags:
            raise WorkflowDefinitionError(diags)
        self.workflow = workflow
        self.options = options or RunOptions()
        self.steps = {s.id: s for s in workflow.steps}
        self.order = topological_order(workflow)
        self.plans: dict[str, StepPlan] = unfold_plan(workflow)
        self.bindings = resolve_bindings(workflow, plan)
        self.deploy_plan = plan
        self.deployments = DeploymentManager(plan)
        self.scheduler = Scheduler(plan)
        self.data = DataManager(plan.controller_staging_dir, self.deployments.connector,
                                staging=self.options.stage_inputs)

        self._lock = threading.RLock()
        self._idle = threading.Condition(self._lock)
        self._store: dict[str, dict[tuple[int, ...], Token]] = defaultdict(dict)
        self._sizes: dict[tuple[str, tuple[int, ...]], int] = {}
        self._fired: dict[str, set[tuple[int, ...]]] = defaultdict(set)
        self._consumers: dict[str, list[str]] = defaultdict(list)
        for s in workflow.steps:
            for p in s.inputs:
                if s.id not in self._consumers[p.source]:
                    self._consumers[p.source].append(s.id)
        self._has_gather = [sid for sid in self.order
                            if any(pp.mode == GATHER for pp in self.plans[sid].ports.values())]
        self._active = 0
        self._records: list[ProvenanceRecord] = []
        self._threads: list[threading.Thread] = []
        self._failed = False
        self._error: str | None = None
        self._cancel = threading.Event()
        n = self.options.max_concurrency
        self._slots = threading.BoundedSemaphore(n) if n else None
        self._run_transfers: list[TransferRecord] = []

    # -- token routing -------------------------------------------------------

    def _seed_inputs(self) -> None:
        base = self.workflow.base_dir or Path.cwd()
        for wi in self.workflow.inputs:
            value = self.options.inputs.get(wi.name, wi.default)
            if value is None:
                raise EngineSetupError(f"workflow input {wi.name!r} has no value")
            if wi.kind == "file":
                if wi.is_list:
                    if not isinstance(value, list):
                        raise EngineSetupError(f"workflow input {wi.name!r} must be a list of paths")
                    value = [self.data.register_input(f"inputs.{wi.name}[{i}]", base / str(v))
                             for i, v in enumerate(value)]
                else:
                    value = self.data.register_input(f"inputs.{wi.name}", base / str(value))
            elif wi.is_list and not isinstance(value, list):
                raise EngineSetupError(f"workflow input {wi.name!r} must be a list")
            self._store[f"{INPUTS}.{wi.name}"][()] = Token((INPUTS, wi.name), value)

    def _level_sizes(self, levels: tuple[str, ...], tag: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(self._sizes[(levels[i], tag[:i])] for i in range(len(tag)))

    def _candidates(self, sid: str) -> list[tuple[int, ...]]:
        plan = self.plans[sid]
        if plan.base_depth == 0:
            return [()]
        drivers = [pp for pp in plan.ports.values() if pp.presented_depth == plan.base_depth]
        driver = next((pp for pp in drivers if pp.mode != GATHER), drivers[0])
        if driver.mode == GATHER:
            origin = driver.source_levels[plan.base_depth]
            return [prefix for (o, prefix) in self._sizes if o == origin]
        return list(self._store[driver.source])

    def _resolve(self, sid: str, base: tuple[int, ...]) -> dict[str, Any] | None:
        plan = self.plans[sid]
        resolved = {}
        for name, pp in plan.ports.items():
            store = self._store[pp.source]
            if pp.mode == GATHER:
                prefix = base[:pp.presented_depth]
                n = self._sizes.get((pp.source_levels[pp.presented_depth], prefix))
                if n is None:
                    return None
                if n == 0:
                    resolved[name] = []
                    continue
                tokens = [store.get(prefix + (i,)) for i in range(n)]
                if any(t is None for t in tokens):
                    return None
                resolved[name] = gather_collect(tokens).payload
            else:
                tok = store.get(base[:pp.source_depth])
                if tok is None:
                    return None
                resolved[name] = tok.payload
        return resolved

    def _try_fire(self, sid: str) -> None:
        if self._failed:
            return
        for base in self._candidates(sid):
            if base in self._fired[sid]:
                continue
            resolved = self._resolve(sid, base)
            if resolved is None:
                continue
            self._fired[sid].add(base)
            self._fire(sid, base, resolved)

    def _fire(self, sid: str, base: tuple[int, ...], resolved: dict[str, Any]) -> None:
        step = self.steps[sid]
        if not step.scatter:
            self._spawn(sid, base, resolved)
            return
        try:
            lists = []
            for name in step.scatter:
                if not isinstance(resolved[name], list):
                    raise ScatterError(f"step {sid!r}: scatter port {name!r} received a non-list payload")
                lists.append(resolved[name])
            combos = dot_cross_product(lists, step.scatter_method)
        except ScatterError as exc:
            binding = self.bindings[sid]
            rec = ProvenanceRecord(sid, base, binding.model, binding.service, queued=time.time(),
                                   status="failed", error=str(exc))
            rec.started = rec.finished = rec.queued
            self._records.append(rec)
            self._fail(str(exc))
            return
        self._sizes[(sid, base)] = len(combos)
        for i, combo in enumerate(combos):
            inputs = dict(resolved)
            inputs.update(zip(step.scatter, combo))
            self._spawn(sid, base + (i,), inputs)
        if not combos:
            # An empty level may complete gathers anywhere downstream.
            for other in self._has_gather:
                self._try_fire(other)

    def _emit(self, sid: str, tag: tuple[int, ...], outputs: dict[str, Any]) -> None:
        sizes = self._level_sizes(self.plans[sid].levels, tag)
        for port, payload in outputs.items():
            key = f"{sid}.{port}"
            self._store[key][tag] = Token((sid, port), payload, tag, sizes)
            for consumer in self._consumers.get(key, []):
                self._try_fire(consumer)

    # -- instances -----------------------------------------------------------

    def _spawn(self, sid: str, tag: tuple[int, ...], inputs: dict[str, Any]) -> None:
        binding = self.bindings[sid]
        rec = ProvenanceRecord(sid, tag, binding.model, binding.service, queued=time.time())
        self._records.append(rec)
        self._active += 1
        t = threading.Thread(target=self._instance, args=(sid, tag, inputs, rec),
                             name=f"hf-{sid}-{_tag_str(tag)}", daemon=True)
        self._threads.append(t)
        t.start()

    def _instance(self, sid: str, tag: tuple[int, ...], inputs: dict[str, Any], rec: ProvenanceRecord) -> None:
        try:
            if self._slots:
                self._slots.acquire()
            try:
                outputs = self._execute(sid, tag, inputs, rec)
            finally:
                if self._slots:
                    self._slots.release()
            if outputs is not None:
                with self._lock:
                    rec.status = "done"
                    self._emit(sid, tag, outputs)
            elif rec.status == "failed":
                self._fail(rec.error or f"{sid}{list(tag)} failed")
        except Exception as exc:  # infrastructure fault: fail the run, keep the engine alive
            log.exception("instance %s%s crashed", sid, list(tag))
            rec.status = "failed"
            rec.error = f"{type(exc).__name__}: {exc}"
            self._fail(rec.error)
        finally:
            with self._lock:
                self._active -= 1
                self._idle.notify_all()

    def _execute(self, sid: str, tag: tuple[int, ...], inputs: dict[str, Any],
                 rec: ProvenanceRecord) -> dict[str, Any] | None:
        if self._cancel.is_set():
            rec.status = "cancelled"
            return None
        binding = self.bindings[sid]
        try:
            connector = self.deployments.ensure(binding.model)
        except DeploymentFailed as exc:
            rec.status, rec.error = "failed", str(exc)
            return None
        rec.status = "scheduled"
        refs = _file_refs(list(inputs.values()))
        try:
            resources = self.scheduler.reserve(binding.model, binding.service, binding.resources_requested,
                                               lambda res: self.data.locality(refs, res))
        except SchedulingCancelled:
            rec.status = "cancelled"
            return None
        rec.started = time.time()
        rec.status = "running"
        rec.resources = [r.index for r in resources]
        try:
            return self._attempts(sid, tag, inputs, resources, connector, rec)
        finally:
            rec.finished = time.time()
            self.scheduler.release(resources)

    def _attempts(self, sid: str, tag: tuple[int, ...], inputs: dict[str, Any], resources: list[Resource],
                  connector: Connector, rec: ProvenanceRecord) -> dict[str, Any] | None:
        step = self.steps[sid]
        rank0 = resources[0]
        env = {
            "HF_SEED": str(self.options.seed),
            "HF_RESOURCES": ",".join(str(r) for r in resources),
            "HF_STEP": sid,
            "HF_TAG": ",".join(map(str, tag)),
        }
        for attempt in range(1 + self.options.retries):
            if self._cancel.is_set():
                rec.status = "cancelled"
                return None
            rec.attempts += 1
            workdir = f"jobs/{sid}-{_tag_str(tag)}-a{attempt}"
            try:
                rendered = self._stage(step, inputs, rank0, rec)
                argv = build_command(step, rendered, connector.remote_path(rank0, workdir))
                result = connector.run(rank0, argv, env, workdir)
            except (DataError, ConnectorError) as exc:
                rec.error = str(exc)
                continue
            rec.exit_code = result.exit_code
            rec.truncated = rec.truncated or result.truncated
            if result.cancelled:
                rec.status = "cancelled"
                return None
            if result.exit_code != 0:
                tail = result.stderr.decode("utf-8", errors="replace").strip().splitlines()[-3:]
                rec.error = f"exit code {result.exit_code}" + (f": {' | '.join(tail)}" if tail else "")
                continue
            try:
                outputs = self._collect(step, tag, rank0, workdir, result.stdout, rec)
            except (DataError, ConnectorError) as exc:
                rec.error = str(exc)
                continue
            rec.error = None
            return outputs
        rec.status = "failed"
        return None

    def _stage(self, step: Step, inputs: dict[str, Any], rank0: Resource,
               rec: ProvenanceRecord) -> dict[str, str | list[str]]:
        rendered: dict[str, str | list[str]] = {}
        for port in step.inputs:
            payload = inputs[port.name]
            if port.kind == "file":
                items = payload if isinstance(payload, list) else [payload]
                paths = []
                for ref in items:
                    path, records = self.data.ensure_at(ref, rank0)
                    rec.transfers.extend(records)
                    paths.append(path)
                rendered[port.name] = paths if isinstance(payload, list) else paths[0]
            else:
                rendered[port.name] = render_value(payload)
        return rendered

    def _collect(self, step: Step, tag: tuple[int, ...], rank0: Resource, workdir: str, stdout: bytes,
                 rec: ProvenanceRecord) -> dict[str, Any]:
        connector = self.deployments.connector(rank0.model)
        for port in step.outputs:
            if port.capture != "stdout" and connector.checksum(rank0, f"{workdir}/{port.capture}") is None:
                raise DataError(f"output not produced: {port.name} ({port.capture})")
        outputs: dict[str, Any] = {}
        for port in step.outputs:
            origin = (step.id, tag, port.name)
            if port.capture == "stdout":
                if port.kind == "value":
                    outputs[port.name] = parse_value(stdout)
                    continue
                ref = self.data.register_stdout(origin, stdout)
            else:
                ref = self.data.register_output(origin, rank0, f"{workdir}/{port.capture}")
                if port.kind == "value":
                    path, records = self.data.ensure_at(ref, CONTROLLER)
                    rec.transfers.extend(records)
                    outputs[port.name] = parse_value(Path(path).read_bytes())
                    rec.outputs.append(ref.id)
                    continue
            rec.outputs.append(ref.id)
            outputs[port.name] = ref
        return outputs

    def _fail(self, message: str) -> None:
        with self._lock:
            if self._error is None:
                self._error = message
            if not self.options.fail_fast:
                return
            first = not self._failed
            self._failed = True
            self._cancel.set()
        if first:
            self.scheduler.cancel()
            self.deployments.cancel_all()

    # -- driver --------------------------------------------------------------

    def _collect_output(self, source: str, levels: tuple[str, ...], prefix: tuple[int, ...]) -> Any:
        if len(prefix) == len(levels):
            return self._store[source][prefix].payload
        n = self._sizes[(levels[len(prefix)], prefix)]
        return [self._collect_output(source, levels, prefix + (i,)) for i in range(n)]

    def run(self) -> RunOutcome:
        started = time.time()
        outputs: dict[str, Any] = {}
        try:
            self._seed_inputs()
            with self._lock:
                for sid in self.order:
                    self._try_fire(sid)
                while self._active:
                    self._idle.wait()
            for t in list(self._threads):
                t.join()
            with self._lock:
                failed = self._failed or self._error is not None or any(
                    r.status not in ("done", "cancelled") for r in self._records)
            if not failed:
                for out in self.workflow.outputs:
                    levels = self.plans[out.source_step].levels
                    value = self._collect_output(out.source, levels, ())
                    for ref in _file_refs(value):
                        _, records = self.data.ensure_at(ref, CONTROLLER)
                        self._run_transfers.extend(records)
                    outputs[out.name] = value
        except (EngineSetupError, DataError) as exc:
            self._error = self._error or str(exc)
            self._failed = True
        finally:
            self.deployments.undeploy_all()
        with self._lock:
            ok = not self._failed and self._error is None and all(
                r.status in ("done", "cancelled") for r in self._records)
            status = "success" if ok else "failed"
            return RunOutcome(status, outputs if ok else {}, list(self._records), self.deployments.events,
                              list(self._run_transfers), self.workflow.name, self.options.seed, started,
                              time.time(), self._error, self.data)


def execute(w: Workflow, env: DeploymentPlan, opts: RunOptions | None = None) -> RunOutcome:
    """Run ``w`` on the sites described by ``env``."""
    return Engine(w, env, opts).run()


__all__ = ["Engine", "EngineSetupError", "RunOptions", "RunOutcome", "ScatterNestingError", "build_command",
           "execute", "parse_value", "render_value", "ref_id"]
