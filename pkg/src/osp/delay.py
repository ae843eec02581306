"""Feedback scheduling under fixed or variable delays."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, FormatError, InvariantViolation

NONE = "none"
FIXED = "fixed"
VARIABLE = "variable"


@dataclass(frozen=True)
class FeedbackEvent:
    """Feedback generated at round ``origin`` and visible at ``deliver_at``."""

    origin: int
    deliver_at: int
    payload: Any = None

    def __post_init__(self) -> None:
        if self.deliver_at < self.origin:
            raise ConfigError(f"event delivered before its origin ({self.deliver_at} < {self.origin})")


@dataclass
class DelayProfile:
    """Delay of each round's feedback.

    Variable delays come either from an explicit trace (``trace[s-1]`` is
    the delay of round ``s``) or from a seeded uniform draw on
    ``[0, tau_max]``.
    """

    kind: str = NONE
    D: int = 0
    tau_max: int = 0
    seed: int = 0
    trace: list[int] | None = None
    _rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in (NONE, FIXED, VARIABLE):
            raise ConfigError(f"unknown delay kind {self.kind!r}")
        if self.D < 0 or self.tau_max < 0:
            raise ConfigError("delays must be nonnegative")
        if self.trace is not None and any(int(v) < 0 for v in self.trace):
            raise ConfigError("delay trace has negative entries")

    @classmethod
    def none(cls) -> "DelayProfile":
        return cls(NONE)

    @classmethod
    def fixed(cls, D: int) -> "DelayProfile":
        return cls(FIXED, D=int(D))

    @classmethod
    def uniform(cls, tau_max: int, seed: int) -> "DelayProfile":
        return cls(VARIABLE, tau_max=int(tau_max), seed=int(seed))

    @classmethod
    def from_trace(cls, trace) -> "DelayProfile":
        return cls(VARIABLE, trace=[int(v) for v in trace])

    @classmethod
    def from_file(cls, path: str | Path) -> "DelayProfile":
        return cls.from_trace(load_trace(path))

    def delay(self, s: int) -> int:
        """Delay of round ``s``; variable draws must be requested in order."""
        if self.kind == NONE:
            return 0
        if self.kind == FIXED:
            return self.D
        if self.trace is not None:
            if s > len(self.trace):
                raise ConfigError(f"delay trace has {len(self.trace)} entries, round {s} requested")
            return self.trace[s - 1]
        if self._rng is None:
            self._rng = np.random.Generator(np.random.Philox(self.seed))
        return int(self._rng.integers(0, self.tau_max + 1))

    @property
    def tau_star(self) -> int:
        """Largest possible delay (used by learners that need it upfront)."""
        if self.kind == FIXED:
            return self.D
        if self.kind == VARIABLE:
            return max(self.trace) if self.trace else self.tau_max
        return 0


def load_trace(path: str | Path) -> list[int]:
    """One nonnegative integer per line; blank lines are ignored."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            v = int(line)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: not an integer: {line!r}") from None
        if v < 0:
            raise FormatError(f"{path}:{lineno}: negative delay {v}")
        out.append(v)
    return out


class DelayQueue:
    """Priority queue of pending feedback keyed by ``(deliver_at, origin)``."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, FeedbackEvent]] = []
        self._delivered: set[int] = set()
        self.pushed = 0
        self.delivered = 0
        self._last_origin = 0

    def push(self, event: FeedbackEvent) -> None:
        if event.origin <= self._last_origin:
            raise InvariantViolation(f"events must be pushed in origin order ({event.origin})")
        self._last_origin = event.origin
        heapq.heappush(self._heap, (event.deliver_at, event.origin, event))
        self.pushed += 1

    def pop_due(self, t: int) -> list[FeedbackEvent]:
        """All events with ``deliver_at <= t`` in ``(deliver_at, origin)`` order."""
        out = []
        while self._heap and self._heap[0][0] <= t:
            _, origin, ev = heapq.heappop(self._heap)
            if origin in self._delivered:
                raise InvariantViolation(f"feedback of round {origin} delivered twice")
            self._delivered.add(origin)
            out.append(ev)
        self.delivered += len(out)
        return out

    def shutdown(self) -> list[FeedbackEvent]:
        """Drop and return everything still in flight."""
        dropped = [ev for _, _, ev in sorted(self._heap, key=lambda e: (e[0], e[1]))]
        self._heap.clear()
        return dropped

    def __len__(self) -> int:
        return len(self._heap)
