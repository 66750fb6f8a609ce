"""Static workflow model: parsing, serialization and structural validation.

A workflow file is a closed YAML schema::

    name: chain
    inputs:
      xs: {type: "value[]", default: [1, 2, 3]}
    steps:
      - id: square
        command: "echo {x}"
        in:
          x: {from: inputs.xs, type: "value[]"}
        out:
          y: {type: value, capture: stdout}
        scatter: [x]
    outputs:
      squares: square.y

Port types are ``value``, ``file`` and their list forms ``value[]`` and
``file[]``.  Only list-typed input ports may be scattered; an unscattered
list-typed port fed by a scattered producer receives the gathered list.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Any, Iterable

import yaml

INPUTS = "inputs"
OUTDIR = "outdir"
PORT_TYPES = ("value", "file", "value[]", "file[]")
SCATTER_METHODS = ("dot", "cross")

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_STEP_ID = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
# ``{name}`` is a placeholder, ``{{`` and ``}}`` are literal braces.
PLACEHOLDER = re.compile(r"\{\{|\}\}|\{([A-Za-z_][A-Za-z0-9_]*)\}")


class WorkflowError(Exception):
    pass


class WorkflowSyntaxError(WorkflowError):
    """Malformed YAML or a violation of the closed file schema."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


class WorkflowDefinitionError(WorkflowError):
    def __init__(self, diagnostics: list["Diagnostic"]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    steps: tuple[str, ...] = ()

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


def split_type(port_type: str) -> tuple[str, bool]:
    if port_type.endswith("[]"):
        return port_type[:-2], True
    return port_type, False


@dataclass(frozen=True)
class InPort:
    name: str
    type: str
    source: str

    @property
    def kind(self) -> str:
        return split_type(self.type)[0]

    @property
    def is_list(self) -> bool:
        return split_type(self.type)[1]

    @property
    def source_step(self) -> str:
        return self.source.rsplit(".", 1)[0]

    @property
    def source_port(self) -> str:
        return self.source.rsplit(".", 1)[1]


@dataclass(frozen=True)
class OutPort:
    name: str
    type: str
    capture: str = "stdout"

    @property
    def kind(self) -> str:
        return self.type


@dataclass
class Step:
    id: str
    command: str
    inputs: list[InPort] = field(default_factory=list)
    outputs: list[OutPort] = field(default_factory=list)
    scatter: list[str] = field(default_factory=list)
    scatter_method: str = "dot"
    shell: bool = False

    def input(self, name: str) -> InPort:
        for port in self.inputs:
            if port.name == name:
                return port
        raise KeyError(name)

    def output(self, name: str) -> OutPort:
        for port in self.outputs:
            if port.name == name:
                return port
        raise KeyError(name)

    def placeholders(self) -> list[str]:
        return [m.group(1) for m in PLACEHOLDER.finditer(self.command) if m.group(1)]


@dataclass(frozen=True)
class WorkflowInput:
    name: str
    type: str
    default: Any = None

    @property
    def kind(self) -> str:
        return split_type(self.type)[0]

    @property
    def is_list(self) -> bool:
        return split_type(self.type)[1]


@dataclass(frozen=True)
class WorkflowOutput:
    name: str
    source: str

    @property
    def source_step(self) -> str:
        return self.source.rsplit(".", 1)[0]

    @property
    def source_port(self) -> str:
        return self.source.rsplit(".", 1)[1]


@dataclass
class Workflow:
    name: str
    steps: list[Step] = field(default_factory=list)
    inputs: list[WorkflowInput] = field(default_factory=list)
    outputs: list[WorkflowOutput] = field(default_factory=list)
    # Directory that relative file defaults resolve against.
    base_dir: Path | None = field(default=None, compare=False, repr=False)

    def step(self, step_id: str) -> Step:
        for s in self.steps:
            if s.id == step_id:
                return s
        raise KeyError(step_id)

    def input(self, name: str) -> WorkflowInput:
        for i in self.inputs:
            if i.name == name:
                return i
        raise KeyError(name)

    @property
    def step_ids(self) -> list[str]:
        return [s.id for s in self.steps]


# --------------------------------------------------------------------------
# parsing

_TOP_KEYS = {"name", "inputs", "steps", "outputs"}
_STEP_KEYS = {"id", "command", "shell", "in", "out", "scatter", "scatter_method"}
_INPUT_KEYS = {"type", "default"}
_IN_KEYS = {"from", "type"}
_OUT_KEYS = {"type", "capture"}


def _fail(node: yaml.Node, message: str) -> WorkflowSyntaxError:
    mark = node.start_mark
    return WorkflowSyntaxError(message, mark.line + 1, mark.column + 1)


def _mapping(node: yaml.Node, what: str, allowed: set[str] | None = None) -> dict[str, yaml.Node]:
    if not isinstance(node, yaml.MappingNode):
        raise _fail(node, f"{what} must be a mapping")
    out: dict[str, yaml.Node] = {}
    for key_node, value_node in node.value:
        if not isinstance(key_node, yaml.ScalarNode):
            raise _fail(key_node, f"{what}: keys must be scalars")
        key = key_node.value
        if key in out:
            raise _fail(key_node, f"{what}: duplicate key {key!r}")
        if allowed is not None and key not in allowed:
            raise _fail(key_node, f"{what}: unknown key {key!r}")
        out[key] = value_node
    return out


def _construct(node: yaml.Node) -> Any:
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node, deep=True)
    finally:
        loader.dispose()


def _string(node: yaml.Node, what: str) -> str:
    value = _construct(node)
    if not isinstance(value, str):
        raise _fail(node, f"{what} must be a string")
    return value


def _bool(node: yaml.Node, what: str) -> bool:
    value = _construct(node)
    if not isinstance(value, bool):
        raise _fail(node, f"{what} must be a boolean")
    return value


def _port_type(node: yaml.Node, what: str) -> str:
    value = _string(node, what)
    if value not in PORT_TYPES:
        raise _fail(node, f"{what}: unknown type {value!r}, expected one of {', '.join(PORT_TYPES)}")
    return value


def _required(fields: dict[str, yaml.Node], key: str, parent: yaml.Node, what: str) -> yaml.Node:
    if key not in fields:
        raise _fail(parent, f"{what}: missing required key {key!r}")
    return fields[key]


def _parse_step(node: yaml.Node, index: int) -> Step:
    what = f"steps[{index}]"
    fields = _mapping(node, what, _STEP_KEYS)
    step_id = _string(_required(fields, "id", node, what), f"{what}.id")
    what = f"step {step_id!r}"
    command = _string(_required(fields, "command", node, what), f"{what}.command")
    shell = _bool(fields["shell"], f"{what}.shell") if "shell" in fields else False

    inputs = []
    if "in" in fields:
        for name, pnode in _mapping(fields["in"], f"{what}.in").items():
            pfields = _mapping(pnode, f"{what}.in.{name}", _IN_KEYS)
            source = _string(_required(pfields, "from", pnode, f"{what}.in.{name}"), f"{what}.in.{name}.from")
            ptype = _port_type(pfields["type"], f"{what}.in.{name}.type") if "type" in pfields else "value"
            inputs.append(InPort(name, ptype, source))

    outputs = []
    if "out" in fields:
        for name, pnode in _mapping(fields["out"], f"{what}.out").items():
            pfields = _mapping(pnode, f"{what}.out.{name}", _OUT_KEYS)
            ptype = _port_type(pfields["type"], f"{what}.out.{name}.type") if "type" in pfields else "value"
            if ptype.endswith("[]"):
                raise _fail(pnode, f"{what}.out.{name}: output ports are scalar; lists arise from scatter")
            capture = _string(pfields["capture"], f"{what}.out.{name}.capture") if "capture" in pfields else "stdout"
            outputs.append(OutPort(name, ptype, capture))

    scatter: list[str] = []
    if "scatter" in fields:
        raw = _construct(fields["scatter"])
        if isinstance(raw, str):
            raw = [raw]
        if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
            raise _fail(fields["scatter"], f"{what}.scatter must be a list of port names")
        scatter = raw
    method = "dot"
    if "scatter_method" in fields:
        method = _string(fields["scatter_method"], f"{what}.scatter_method")
        if method not in SCATTER_METHODS:
            raise _fail(fields["scatter_method"], f"{what}.scatter_method must be 'dot' or 'cross'")
    return Step(step_id, command, inputs, outputs, scatter, method, shell)


def parse_workflow(text: str, base_dir: Path | str | None = None) -> Workflow:
    """Parse workflow YAML into a :class:`Workflow` with every reference resolved.

    Raises :class:`WorkflowSyntaxError` for malformed YAML or schema violations
    and :class:`WorkflowDefinitionError` for duplicate ids, dangling references
    and placeholder/port mismatches.  Cycles are left to :func:`validate`.
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise WorkflowSyntaxError(str(exc.problem), mark.line + 1 if mark else None,
                                  mark.column + 1 if mark else None) from exc
    if root is None:
        raise WorkflowSyntaxError("empty workflow file")
    top = _mapping(root, "workflow", _TOP_KEYS)
    name = _string(_required(top, "name", root, "workflow"), "name")

    inputs = []
    if "inputs" in top:
        for iname, inode in _mapping(top["inputs"], "inputs").items():
            ifields = _mapping(inode, f"inputs.{iname}", _INPUT_KEYS)
            itype = _port_type(_required(ifields, "type", inode, f"inputs.{iname}"), f"inputs.{iname}.type")
            default = _construct(ifields["default"]) if "default" in ifields else None
            inputs.append(WorkflowInput(iname, itype, default))

    steps = []
    if "steps" in top:
        snode = top["steps"]
        if not isinstance(snode, yaml.SequenceNode):
            raise _fail(snode, "steps must be a list")
        steps = [_parse_step(n, i) for i, n in enumerate(snode.value)]

    outputs = []
    if "outputs" in top:
        for oname, onode in _mapping(top["outputs"], "outputs").items():
            outputs.append(WorkflowOutput(oname, _string(onode, f"outputs.{oname}")))

    wf = Workflow(name, steps, inputs, outputs, Path(base_dir) if base_dir is not None else None)
    fatal = [d for d in validate(wf) if d.code != "cycle"]
    if fatal:
        raise WorkflowDefinitionError(fatal)
    return wf


def load_workflow(path: str | Path) -> Workflow:
    path = Path(path)
    return parse_workflow(path.read_text(encoding="utf-8"), base_dir=path.resolve().parent)


def to_dict(w: Workflow) -> dict[str, Any]:
    doc: dict[str, Any] = {"name": w.name}
    if w.inputs:
        doc["inputs"] = {}
        for i in w.inputs:
            entry: dict[str, Any] = {"type": i.type}
            if i.default is not None:
                entry["default"] = i.default
            doc["inputs"][i.name] = entry
    steps = []
    for s in w.steps:
        entry = {"id": s.id, "command": s.command}
        if s.shell:
            entry["shell"] = True
        if s.inputs:
            entry["in"] = {p.name: {"from": p.source, "type": p.type} for p in s.inputs}
        if s.outputs:
            entry["out"] = {p.name: {"type": p.type, "capture": p.capture} for p in s.outputs}
        if s.scatter:
            entry["scatter"] = list(s.scatter)
            entry["scatter_method"] = s.scatter_method
        steps.append(entry)
    doc["steps"] = steps
    if w.outputs:
        doc["outputs"] = {o.name: o.source for o in w.outputs}
    return doc


def serialize(w: Workflow) -> str:
    return yaml.safe_dump(to_dict(w), sort_keys=False, default_flow_style=False, width=4096)


# --------------------------------------------------------------------------
# validation


def _find_cycle(nodes: list[str], edges: Iterable[tuple[str, str]]) -> list[str] | None:
    succ: dict[str, list[str]] = {n: [] for n in nodes}
    for a, b in edges:
        succ.setdefault(a, []).append(b)
    WHITE, GREY, BLACK = 0, 1, 2
    colour = {n: WHITE for n in succ}
    for start in nodes:
        if colour[start] != WHITE:
            continue
        path: list[str] = []
        stack: list[tuple[str, int]] = [(start, 0)]
        colour[start] = GREY
        path.append(start)
        while stack:
            node, i = stack[-1]
            if i < len(succ[node]):
                stack[-1] = (node, i + 1)
                nxt = succ[node][i]
                if colour[nxt] == GREY:
                    return path[path.index(nxt):]
                if colour[nxt] == WHITE:
                    colour[nxt] = GREY
                    path.append(nxt)
                    stack.append((nxt, 0))
            else:
                colour[node] = BLACK
                path.pop()
                stack.pop()
    return None


def _raw_edges(w: Workflow) -> list[tuple[str, str]]:
    known = set(w.step_ids)
    return [(p.source_step, s.id) for s in w.steps for p in s.inputs
            if "." in p.source and p.source_step in known]


def validate(w: Workflow) -> list[Diagnostic]:
    """Return every structural problem with ``w``; empty means executable."""
    diags: list[Diagnostic] = []
    seen: set[str] = set()
    for s in w.steps:
        if not _STEP_ID.match(s.id) or s.id == INPUTS:
            diags.append(Diagnostic("bad-id", f"invalid step id {s.id!r}", (s.id,)))
        if s.id in seen:
            diags.append(Diagnostic("duplicate-id", f"duplicate step id {s.id!r}", (s.id,)))
        seen.add(s.id)

    input_names = [i.name for i in w.inputs]
    for i in w.inputs:
        if not _IDENT.match(i.name):
            diags.append(Diagnostic("bad-id", f"invalid input name {i.name!r}"))
        if i.type not in PORT_TYPES:
            diags.append(Diagnostic("bad-type", f"input {i.name!r} has unknown type {i.type!r}"))
        if i.is_list and i.default is not None and not isinstance(i.default, list):
            diags.append(Diagnostic("bad-default", f"input {i.name!r} is list-typed but its default is not a list"))
    if len(set(input_names)) != len(input_names):
        diags.append(Diagnostic("duplicate-id", "duplicate workflow input names"))

    steps = {s.id: s for s in w.steps}
    for s in w.steps:
        names = [p.name for p in s.inputs]
        if len(set(names)) != len(names):
            diags.append(Diagnostic("duplicate-port", f"step {s.id!r} has duplicate input port names", (s.id,)))
        onames = [p.name for p in s.outputs]
        if len(set(onames)) != len(onames):
            diags.append(Diagnostic("duplicate-port", f"step {s.id!r} has duplicate output port names", (s.id,)))
        for p in s.inputs:
            if not _IDENT.match(p.name) or p.name == OUTDIR:
                diags.append(Diagnostic("bad-id", f"step {s.id!r}: invalid input port name {p.name!r}", (s.id,)))
            if p.type not in PORT_TYPES:
                diags.append(Diagnostic("bad-type", f"step {s.id!r}.{p.name}: unknown type {p.type!r}", (s.id,)))
                continue
            diags.extend(_check_source(w, steps, s, p))
        for p in s.outputs:
            if not _IDENT.match(p.name):
                diags.append(Diagnostic("bad-id", f"step {s.id!r}: invalid output port name {p.name!r}", (s.id,)))
            if p.type not in ("value", "file"):
                diags.append(Diagnostic("bad-type", f"step {s.id!r}.{p.name}: output type must be value or file", (s.id,)))
            if p.capture != "stdout":
                rel = PurePosixPath(p.capture)
                if rel.is_absolute() or ".." in rel.parts or not rel.parts:
                    diags.append(Diagnostic("bad-capture",
                                            f"step {s.id!r}.{p.name}: capture path {p.capture!r} must stay inside outdir",
                                            (s.id,)))
        for ph in s.placeholders():
            if ph != OUTDIR and ph not in names:
                diags.append(Diagnostic("placeholder", f"step {s.id!r}: placeholder {{{ph}}} names no input port", (s.id,)))
        for sp in s.scatter:
            if sp not in names:
                diags.append(Diagnostic("scatter", f"step {s.id!r}: scatter port {sp!r} is not an input", (s.id,)))
            elif not s.input(sp).is_list:
                diags.append(Diagnostic("scatter", f"step {s.id!r}: scatter port {sp!r} must be list-typed", (s.id,)))
        if len(set(s.scatter)) != len(s.scatter):
            diags.append(Diagnostic("scatter", f"step {s.id!r}: scatter lists a port twice", (s.id,)))
        if s.scatter_method not in SCATTER_METHODS:
            diags.append(Diagnostic("scatter", f"step {s.id!r}: unknown scatter_method {s.scatter_method!r}", (s.id,)))

    for o in w.outputs:
        if "." not in o.source or o.source_step not in steps:
            diags.append(Diagnostic("dangling", f"output {o.name!r} references unknown step in {o.source!r}"))
        elif o.source_port not in [p.name for p in steps[o.source_step].outputs]:
            diags.append(Diagnostic("dangling", f"output {o.name!r} references unknown port {o.source!r}"))

    cycle = _find_cycle(w.step_ids, _raw_edges(w))
    if cycle:
        diags.append(Diagnostic("cycle", "dependency cycle through " + " -> ".join(cycle + [cycle[0]]),
                                tuple(cycle)))
    return diags


def _check_source(w: Workflow, steps: dict[str, Step], s: Step, p: InPort) -> list[Diagnostic]:
    where = f"step {s.id!r}.{p.name}"
    if "." not in p.source:
        return [Diagnostic("dangling", f"{where}: malformed reference {p.source!r}", (s.id,))]
    src_step, src_port = p.source_step, p.source_port
    if src_step == INPUTS:
        try:
            wi = w.input(src_port)
        except KeyError:
            return [Diagnostic("dangling", f"{where}: unknown workflow input {src_port!r}", (s.id,))]
        if wi.kind != p.kind:
            return [Diagnostic("kind", f"{where}: {p.kind} port wired from {wi.kind} input", (s.id,))]
        if wi.is_list and not p.is_list:
            return [Diagnostic("kind", f"{where}: scalar port wired from list input {src_port!r}", (s.id,))]
        if p.is_list and not wi.is_list and p.kind == "file":
            return [Diagnostic("kind", f"{where}: file list port wired from scalar file input", (s.id,))]
        return []
    if src_step not in steps:
        return [Diagnostic("dangling", f"{where}: reference {p.source!r} names no step", (s.id,))]
    try:
        out = steps[src_step].output(src_port)
    except KeyError:
        return [Diagnostic("dangling", f"{where}: step {src_step!r} has no output {src_port!r}", (s.id,))]
    if out.kind != p.kind:
        return [Diagnostic("kind", f"{where}: {p.kind} port wired from {out.kind} output", (s.id,))]
    return []


def dependency_edges(w: Workflow) -> list[tuple[str, str]]:
    """Deduplicated producer->consumer step pairs, in first-wired order."""
    seen: dict[tuple[str, str], None] = {}
    for edge in _raw_edges(w):
        seen.setdefault(edge, None)
    return list(seen)


def topological_order(w: Workflow) -> list[str]:
    """Kahn order that keeps file order among independent steps."""
    edges = dependency_edges(w)
    indeg = {sid: 0 for sid in w.step_ids}
    succ: dict[str, list[str]] = {sid: [] for sid in w.step_ids}
    for a, b in edges:
        indeg[b] += 1
        succ[a].append(b)
    ready = [sid for sid in w.step_ids if indeg[sid] == 0]
    order = []
    while ready:
        sid = ready.pop(0)
        order.append(sid)
        for nxt in succ[sid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    if len(order) != len(indeg):
        raise WorkflowDefinitionError([d for d in validate(w) if d.code == "cycle"])
    return order
