"""Tokens and the scatter / gather / combinator primitives."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Any, Sequence


class ScatterError(Exception):
    pass


@dataclass(frozen=True)
class Token:
    """A payload on a port, tagged with its scatter-index path.

    ``tag[i]`` is the element index at scatter level ``i`` (outermost first)
    and ``level_sizes[i]`` the list length recorded at that level.
    """

    port: tuple[str, str]
    payload: Any
    tag: tuple[int, ...] = ()
    level_sizes: tuple[int, ...] = ()
    # Set on the marker emitted for an empty scatter; carries no element.
    empty: bool = False

    def __post_init__(self):
        if len(self.tag) != len(self.level_sizes) - (1 if self.empty else 0):
            raise ValueError("tag and level_sizes disagree on depth")
        for i, size in zip(self.tag, self.level_sizes):
            if not 0 <= i < size:
                raise ValueError(f"tag index {i} outside recorded size {size}")

    @property
    def depth(self) -> int:
        return len(self.tag)


def scatter_expand(token: Token, port: tuple[str, str] | None = None) -> list[Token]:
    """Split a list-valued token into one token per element, one level deeper.

    An empty list yields a single marker token whose recorded size is 0, so a
    downstream gather can still fire (with ``[]``).
    """
    if not isinstance(token.payload, list):
        raise ScatterError(f"cannot scatter non-list payload on {token.port}: {type(token.payload).__name__}")
    port = port or token.port
    n = len(token.payload)
    sizes = token.level_sizes + (n,)
    if n == 0:
        return [Token(port, None, token.tag, sizes, empty=True)]
    return [Token(port, item, token.tag + (i,), sizes) for i, item in enumerate(token.payload)]


def gather_collect(tokens: Sequence[Token], port: tuple[str, str] | None = None) -> Token:
    """Collapse one level: siblings sharing a tag prefix become one list token.

    The result is ordered by scatter index, never by arrival.
    """
    if not tokens:
        raise ScatterError("gather needs at least one token or an empty-scatter marker")
    first = tokens[0]
    if first.empty:
        if len(tokens) != 1:
            raise ScatterError("empty-scatter marker mixed with element tokens")
        return Token(port or first.port, [], first.tag, first.level_sizes[:-1])
    prefix = first.tag[:-1]
    expected = first.level_sizes[-1]
    slots: list[Any] = [None] * expected
    filled = [False] * expected
    for tok in tokens:
        if tok.tag[:-1] != prefix or tok.level_sizes != first.level_sizes:
            raise ScatterError(f"token {tok.tag} does not belong to group {prefix}")
        i = tok.tag[-1]
        if filled[i]:
            raise ScatterError(f"duplicate sibling index {i} under {prefix}")
        slots[i] = tok.payload
        filled[i] = True
    if not all(filled):
        missing = [i for i, f in enumerate(filled) if not f]
        raise ScatterError(f"gather under {prefix} incomplete, missing {missing}")
    return Token(port or first.port, slots, prefix, first.level_sizes[:-1])


def dot_cross_product(lists: Sequence[Sequence[Any]], method: str = "dot") -> list[tuple[Any, ...]]:
    """Per-instance input tuples for the scattered ports, in declaration order.

    ``dot`` zips equal-length lists; ``cross`` is the row-major Cartesian
    product (last port varies fastest).
    """
    if method == "dot":
        lengths = {len(x) for x in lists}
        if len(lengths) > 1:
            raise ScatterError(f"dot product over lists of unequal lengths {[len(x) for x in lists]}")
        return list(zip(*lists))
    if method == "cross":
        return list(itertools.product(*lists))
    raise ScatterError(f"unknown scatter method {method!r}")
