"""Hybrid workflow engine.

Submodules are imported on demand; this package root stays light so that the
stub tasks under :mod:`hybridflow.grid.stubs` start quickly on execution sites.
"""

__version__ = "0.1.0"
