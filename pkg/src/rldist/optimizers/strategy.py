"""Adaptive strategy selection: probe each candidate execution strategy for
a few steps, then commit to the one with the lowest median step time."""

from __future__ import annotations

import statistics
import time


class InsufficientHistory(Exception):
    pass


def select_strategy(history: dict[str, list[float]],
                    current: str | None = None) -> str:
    """Pick the candidate with the lowest median step wall-time.

    Requires at least two completed steps per candidate. Ties retain the
    current strategy (no thrashing); with no current strategy, ties break
    to the first candidate by name.
    """
    if not history:
        raise InsufficientHistory("no timing history")
    for name, times in history.items():
        if len(times) < 2:
            raise InsufficientHistory(
                f"strategy {name!r} has only {len(times)} probe step(s)")
    medians = {name: statistics.median(times) for name, times in history.items()}
    best = min(medians.values())
    winners = sorted(name for name, m in medians.items() if m == best)
    if current in winners:
        return current
    return winners[0]


class AdaptiveStrategySelector:
    """Runs a probe phase over named step callables, then sticks with the
    fastest. The probe order and any switch are logged."""

    def __init__(self, strategies: dict[str, callable], probe_steps: int = 2):
        if probe_steps < 2:
            raise ValueError("need >= 2 probe steps per candidate")
        self.strategies = dict(strategies)
        self.probe_steps = probe_steps
        self.history: dict[str, list[float]] = {k: [] for k in strategies}
        self.current: str | None = None
        self.log: list[str] = []
        self._probe_queue = [name for name in strategies
                             for _ in range(probe_steps)]

    @property
    def probing(self) -> bool:
        return bool(self._probe_queue)

    def step(self):
        if self._probe_queue:
            name = self._probe_queue.pop(0)
            self.log.append(f"probe {name}")
        else:
            name = self.current
        t0 = time.monotonic()
        result = self.strategies[name]()
        self.history[name].append(time.monotonic() - t0)
        if not self._probe_queue:
            choice = select_strategy(self.history, self.current)
            if choice != self.current:
                self.log.append(f"switch {self.current} -> {choice}")
                self.current = choice
        return result
