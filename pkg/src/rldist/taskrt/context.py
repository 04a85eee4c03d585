"""Ambient execution context.

Driver code holds a Runtime directly; code running inside an actor method
reaches the runtime through ``current_context()``. Both expose the same
operation surface (spawn_actor / invoke / get / wait / put / fetch /
terminate_actor), so algorithm code is agnostic about where it runs.
"""

from __future__ import annotations

_CURRENT = None


def set_current_context(ctx) -> None:
    global _CURRENT
    _CURRENT = ctx


def current_context():
    if _CURRENT is None:
        raise RuntimeError("no active task runtime in this process")
    return _CURRENT
