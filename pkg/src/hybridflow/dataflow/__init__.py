"""Scatter/gather tokens, static unfolding, and the execution engine."""

from .engine import Engine, EngineSetupError, RunOptions, RunOutcome, build_command, execute, parse_value
from .plan import BROADCAST, ELEMENTWISE, GATHER, SCATTER, PortPlan, ScatterNestingError, StepPlan, unfold_plan
from .tokens import ScatterError, Token, dot_cross_product, gather_collect, scatter_expand

__all__ = [
    "BROADCAST", "ELEMENTWISE", "GATHER", "SCATTER", "Engine", "EngineSetupError", "PortPlan", "RunOptions",
    "RunOutcome", "ScatterError", "ScatterNestingError", "StepPlan", "Token", "build_command",
    "dot_cross_product", "execute", "gather_collect", "parse_value", "scatter_expand", "unfold_plan",
]
