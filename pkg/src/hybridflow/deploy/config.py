"""Deployment hierarchy (model / service / resource) and the environment file."""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..workflow import Workflow

CONNECTOR_KINDS = ("local", "sandbox", "sim-batch")
_CONNECTOR_CONFIG_KEYS = {
    "local": {"root"},
    "sandbox": {"root"},
    "sim-batch": {"root", "max_concurrent_jobs", "submit_delay_ms", "poll_interval_ms"},
}


class DeploymentConfigError(Exception):
    pass


class EnvironmentSyntaxError(DeploymentConfigError):
    """The environment file is not parseable YAML."""


class BindingError(Exception):
    def __init__(self, message: str, steps: list[str] | None = None):
        self.steps = steps or []
        super().__init__(message)


@dataclass(frozen=True)
class Service:
    name: str
    resource_count: int = 1
    slots_per_resource: int = 1


@dataclass
class Model:
    name: str
    connector_kind: str
    connector_config: dict[str, Any] = field(default_factory=dict)
    services: list[Service] = field(default_factory=list)

    def service(self, name: str) -> Service:
        for s in self.services:
            if s.name == name:
                return s
        raise KeyError(name)


@dataclass(frozen=True, order=True)
class Resource:
    model: str
    service: str
    index: int

    def __str__(self) -> str:
        return f"{self.model}/{self.service}/{self.index}"


@dataclass(frozen=True)
class Binding:
    step_selector: str
    model: str
    service: str
    resources_requested: int = 1

    @property
    def is_glob(self) -> bool:
        return any(c in self.step_selector for c in "*?[")

    def matches(self, step_id: str) -> bool:
        if self.is_glob:
            return fnmatch.fnmatchcase(step_id, self.step_selector)
        return step_id == self.step_selector

    @property
    def target(self) -> str:
        return f"{self.model}/{self.service}"


@dataclass
class DeploymentPlan:
    models: list[Model]
    bindings: list[Binding]
    controller_staging_dir: Path

    def model(self, name: str) -> Model:
        for m in self.models:
            if m.name == name:
                return m
        raise KeyError(name)


def _check_keys(what: str, mapping: Any, allowed: set[str]) -> dict:
    if not isinstance(mapping, dict):
        raise DeploymentConfigError(f"{what} must be a mapping")
    unknown = set(mapping) - allowed
    if unknown:
        raise DeploymentConfigError(f"{what}: unknown key(s) {', '.join(sorted(map(str, unknown)))}")
    return mapping


def _positive_int(what: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise DeploymentConfigError(f"{what} must be a positive integer, got {value!r}")
    return value


def _nonnegative_int(what: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise DeploymentConfigError(f"{what} must be a non-negative integer, got {value!r}")
    return value


def parse_environment(text: str, base_dir: Path | str | None = None) -> DeploymentPlan:
    """Parse the environment (bindings) file.  Relative paths resolve against ``base_dir``."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise EnvironmentSyntaxError(f"invalid YAML: {exc}") from exc
    doc = _check_keys("environment", doc, {"deployments", "bindings", "staging_dir"})

    models = []
    for mname, mdoc in (doc.get("deployments") or {}).items():
        what = f"deployments.{mname}"
        mdoc = _check_keys(what, mdoc, {"connector", "config", "services"})
        kind = mdoc.get("connector")
        if kind not in CONNECTOR_KINDS:
            raise DeploymentConfigError(f"{what}.connector must be one of {', '.join(CONNECTOR_KINDS)}")
        config = dict(_check_keys(f"{what}.config", mdoc.get("config") or {}, _CONNECTOR_CONFIG_KEYS[kind]))
        if "root" in config:
            config["root"] = str((base / str(config["root"])).resolve())
        if kind == "sim-batch":
            config["max_concurrent_jobs"] = _positive_int(f"{what}.config.max_concurrent_jobs",
                                                          config.get("max_concurrent_jobs", 1))
            config["submit_delay_ms"] = _nonnegative_int(f"{what}.config.submit_delay_ms",
                                                         config.get("submit_delay_ms", 0))
            config["poll_interval_ms"] = _positive_int(f"{what}.config.poll_interval_ms",
                                                       config.get("poll_interval_ms", 50))
        services = []
        for sname, sdoc in (mdoc.get("services") or {}).items():
            sdoc = _check_keys(f"{what}.services.{sname}", sdoc or {}, {"resources", "slots"})
            services.append(Service(
                str(sname),
                _positive_int(f"{what}.services.{sname}.resources", sdoc.get("resources", 1)),
                _positive_int(f"{what}.services.{sname}.slots", sdoc.get("slots", 1)),
            ))
        if not services:
            raise DeploymentConfigError(f"{what} declares no services")
        models.append(Model(str(mname), kind, config, services))

    bindings = []
    selectors: set[str] = set()
    for i, bdoc in enumerate(doc.get("bindings") or []):
        bdoc = _check_keys(f"bindings[{i}]", bdoc, {"step", "target", "resources"})
        selector, target = bdoc.get("step"), bdoc.get("target")
        if not isinstance(selector, str) or not isinstance(target, str) or target.count("/") != 1:
            raise DeploymentConfigError(f"bindings[{i}] needs 'step' and a 'model/service' target")
        if selector in selectors:
            raise DeploymentConfigError(f"bindings[{i}]: duplicate binding for selector {selector!r}")
        selectors.add(selector)
        model, service = target.split("/")
        bindings.append(Binding(selector, model, service,
                                _positive_int(f"bindings[{i}].resources", bdoc.get("resources", 1))))

    staging = doc.get("staging_dir", ".hybridflow-staging")
    plan = DeploymentPlan(models, bindings, (base / str(staging)).resolve())
    check_plan(plan)
    return plan


def load_environment(path: str | Path) -> DeploymentPlan:
    path = Path(path)
    return parse_environment(path.read_text(encoding="utf-8"), base_dir=path.resolve().parent)


def check_plan(plan: DeploymentPlan) -> None:
    names = [m.name for m in plan.models]
    if len(set(names)) != len(names):
        raise DeploymentConfigError("duplicate model names")
    for m in plan.models:
        snames = [s.name for s in m.services]
        if len(set(snames)) != len(snames):
            raise DeploymentConfigError(f"model {m.name!r} has duplicate service names")
    for b in plan.bindings:
        try:
            service = plan.model(b.model).service(b.service)
        except KeyError:
            raise DeploymentConfigError(f"binding {b.step_selector!r} targets unknown {b.target!r}") from None
        if b.resources_requested > service.resource_count:
            raise DeploymentConfigError(
                f"binding {b.step_selector!r} requests {b.resources_requested} resources "
                f"but {b.target} has {service.resource_count}")


def resolve_bindings(w: Workflow, plan: DeploymentPlan) -> dict[str, Binding]:
    """Bind every step to one service: exact selectors beat globs, later beats earlier."""
    resolved: dict[str, Binding] = {}
    unbound = []
    for sid in w.step_ids:
        best: Binding | None = None
        for b in plan.bindings:
            if not b.matches(sid):
                continue
            if best is None or not b.is_glob or best.is_glob:
                best = b
        if best is None:
            unbound.append(sid)
        else:
            resolved[sid] = best
    if unbound:
        raise BindingError("unbound step(s): " + ", ".join(unbound), unbound)
    return resolved
