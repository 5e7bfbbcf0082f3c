"""Multiply-accumulate instrumentation.

Counters are exact integers so complexity ratios (windowed vs. global
attention) can be asserted without tolerance. Ops report their MAC cost to
every active meter; meters can additionally attribute counts to a named
scope, which is how the attention benchmark isolates the score and
aggregation matmuls from the surrounding projections.
"""
from __future__ import annotations

from contextlib import contextmanager

_ACTIVE: list["MacMeter"] = []


class MacMeter:
    """Accumulates MAC counts, optionally split by scope name."""

    def __init__(self) -> None:
        self.total = 0
        self.scopes: dict[str, int] = {}
        self._stack: list[str] = []

    def add(self, count: int) -> None:
        self.total += count
        if self._stack:
            name = self._stack[-1]
            self.scopes[name] = self.scopes.get(name, 0) + count

    @contextmanager
    def scope(self, name: str):
        self._stack.append(name)
        try:
            yield self
        finally:
            self._stack.pop()

    def __enter__(self) -> "MacMeter":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)


def record_macs(count: int) -> None:
    """Report `count` MACs to all active meters. Cheap no-op when none."""
    if _ACTIVE:
        for meter in _ACTIVE:
            meter.add(count)


@contextmanager
def scope(name: str):
    """Attribute MACs recorded inside the block to `name` on active meters."""
    for meter in _ACTIVE:
        meter._stack.append(name)
    try:
        yield
    finally:
        for meter in _ACTIVE:
            meter._stack.pop()
