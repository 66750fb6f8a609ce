"""Universal-pipeline grid: generator, deterministic stub stages, makespan estimate.

Only the dependency-free pieces are imported eagerly so stub stages start fast.
"""

from .estimate import estimate_makespan
from .metric import stub_metric

_LAZY = {"GridSpec", "GridSpecError", "SiteOptions", "enumerate_variants", "generate", "hyperparam_grid",
         "manifest", "write_grid"}


def __getattr__(name):
    if name in _LAZY:
        from . import generator
        return getattr(generator, name)
    raise AttributeError(name)


__all__ = ["estimate_makespan", "stub_metric", *sorted(_LAZY)]
