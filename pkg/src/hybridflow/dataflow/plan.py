"""Symbolic unfolding: scatter depth per step and the role of every input edge.

Depth rules, applied in topological order:

* a workflow input sits at depth 0;
* a step output sits at the depth of its step;
* an unscattered scalar port presents its source at the source's depth;
* an unscattered list-typed port fed by a scattered source gathers one level,
  so it presents at ``source depth - 1``;
* a scattered port presents its source at the source's depth and its list
  payload is expanded into a new level.

A step's base depth is the deepest presentation among its ports; a scattered
step adds one level on top.  Ports presenting shallower than the step depth
are broadcast.  Every level carries the id of the step that introduced it,
and all presentations of a step must be prefixes of one lineage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..workflow import INPUTS, Workflow, topological_order

ELEMENTWISE = "element-wise"
BROADCAST = "broadcast"
GATHER = "gather"
SCATTER = "scatter"


class ScatterNestingError(Exception):
    pass


@dataclass(frozen=True)
class PortPlan:
    name: str
    source: str
    source_depth: int
    presented_depth: int
    mode: str
    # Level lineage of the source (origin step id per level).
    source_levels: tuple[str, ...] = ()


@dataclass
class StepPlan:
    step: str
    depth: int
    base_depth: int
    levels: tuple[str, ...]
    ports: dict[str, PortPlan] = field(default_factory=dict)

    @property
    def scattered(self) -> bool:
        return self.depth > self.base_depth


def unfold_plan(w: Workflow) -> dict[str, StepPlan]:
    """Return the :class:`StepPlan` of every step, keyed by step id.

    Raises :class:`ScatterNestingError` when presentations of one step do not
    share a level lineage (element-wise matching would be meaningless).
    """
    plans: dict[str, StepPlan] = {}
    for sid in topological_order(w):
        step = w.step(sid)
        presented: dict[str, tuple[tuple[str, ...], int, tuple[str, ...]]] = {}
        for port in step.inputs:
            if port.source_step == INPUTS:
                src_levels: tuple[str, ...] = ()
            else:
                src_levels = plans[port.source_step].levels
            s = len(src_levels)
            if port.name not in step.scatter and port.is_list and s > 0:
                presented[port.name] = (src_levels[:-1], s, src_levels)
            else:
                presented[port.name] = (src_levels, s, src_levels)

        lineage: tuple[str, ...] = ()
        for name, (levels, _, _) in presented.items():
            if len(levels) > len(lineage):
                lineage = levels
        for name, (levels, _, _) in presented.items():
            if lineage[:len(levels)] != levels:
                raise ScatterNestingError(
                    f"step {sid!r}: port {name!r} is scattered along {list(levels)} "
                    f"which is not a prefix of {list(lineage)}")

        base = len(lineage)
        levels = lineage + ((sid,) if step.scatter else ())
        depth = len(levels)
        ports = {}
        for port in step.inputs:
            plevels, s, src_levels = presented[port.name]
            p = len(plevels)
            if port.name in step.scatter:
                mode = SCATTER
            elif p < s:
                mode = GATHER
            elif p < depth:
                mode = BROADCAST
            else:
                mode = ELEMENTWISE
            ports[port.name] = PortPlan(port.name, port.source, s, p, mode, src_levels)
        plans[sid] = StepPlan(sid, depth, base, levels, ports)
    return plans
