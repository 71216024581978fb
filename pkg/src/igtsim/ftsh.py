"""Timeout-and-retry semantics for flaky commands (the FTSH subset we need).

`FtshRun` is the bookkeeping state machine shared by the standalone
`run_with_retry` driver and the event-driven transfer wrapper in the grid
simulator, so both produce the same attempt history for the same schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable


class AttemptOutcome(str, Enum):
    SUCCESS = "Success"
    FAIL = "Fail"
    TIMED_OUT = "TimedOut"


@dataclass(frozen=True)
class RetrySpec:
    timeout: float = 300.0
    max_attempts: int = 5
    backoff: float = 60.0
    backoff_mode: str = "fixed"  # or "multiplicative"
    multiplier: float = 2.0

    def __post_init__(self) -> None:
        if not self.timeout > 0:
            raise ValueError("timeout must be > 0")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff < 0:
            raise ValueError("backoff must be >= 0")
        if self.backoff_mode not in ("fixed", "multiplicative"):
            raise ValueError(f"unknown backoff_mode {self.backoff_mode!r}")
        if self.multiplier < 1:
            raise ValueError("multiplier must be >= 1")

    def delay_after(self, attempt: int) -> float:
        """Pause between attempt `attempt` (1-based) and the next one."""
        if self.backoff_mode == "fixed":
            return self.backoff
        return self.backoff * self.multiplier ** (attempt - 1)

    @property
    def max_elapsed(self) -> float:
        return self.max_attempts * self.timeout + sum(self.delay_after(i) for i in range(1, self.max_attempts))


@dataclass(frozen=True)
class AttemptRecord:
    attempt_index: int
    start_time: float
    end_time: float
    outcome: AttemptOutcome


@dataclass
class FtshRun:
    spec: RetrySpec
    history: list[AttemptRecord] = field(default_factory=list)
    attempt: int = 0
    attempt_start: float = 0.0
    done: bool = False

    def begin(self, now: float) -> float:
        """Start the next attempt; returns its deadline."""
        if self.done or self.attempt >= self.spec.max_attempts:
            raise RuntimeError("no attempts left")
        self.attempt += 1
        self.attempt_start = now
        return now + self.spec.timeout

    @property
    def deadline(self) -> float:
        return self.attempt_start + self.spec.timeout

    def finish(self, now: float, ok: bool) -> float | None:
        """Record the end of the running attempt.

        Returns the time at which the next attempt should begin, or None when
        the run is over (success, or attempts exhausted). An attempt that ends
        at or after its deadline counts as timed out.
        """
        if now >= self.deadline:
            return self.timeout(self.deadline)
        outcome = AttemptOutcome.SUCCESS if ok else AttemptOutcome.FAIL
        self.history.append(AttemptRecord(self.attempt, self.attempt_start, now, outcome))
        return self._next(now, ok)

    def timeout(self, now: float) -> float | None:
        self.history.append(AttemptRecord(self.attempt, self.attempt_start, now, AttemptOutcome.TIMED_OUT))
        return self._next(now, False)

    def _next(self, now: float, ok: bool) -> float | None:
        if ok or self.attempt >= self.spec.max_attempts:
            self.done = True
            return None
        return now + self.spec.delay_after(self.attempt)

    @property
    def succeeded(self) -> bool:
        return bool(self.history) and self.history[-1].outcome is AttemptOutcome.SUCCESS


@dataclass(frozen=True)
class FtshResult:
    outcome: AttemptOutcome  # SUCCESS or FAIL
    history: tuple[AttemptRecord, ...]
    start_time: float
    end_time: float

    @property
    def elapsed(self) -> float:
        return self.end_time - self.start_time

    @property
    def attempts(self) -> int:
        return len(self.history)


# An action maps (attempt index, start time) to (duration, ok); math.inf means it hangs.
TimedAction = Callable[[int, float], "tuple[float, bool]"]


def run_with_retry(action: TimedAction, spec: RetrySpec, clock=None) -> FtshResult:
    """Drive `action` under `spec` on a simulated clock.

    `clock` is anything with a `now` attribute (default: start at 0). When it
    also has `advance_to`, it is moved to the end of the run.
    """
    start = clock.now if clock is not None else 0.0
    run = FtshRun(spec)
    now = start
    while True:
        deadline = run.begin(now)
        duration, ok = action(run.attempt, now)
        if duration < 0:
            raise ValueError("action duration must be >= 0")
        end = now + duration
        nxt = run.finish(end, ok) if end < deadline else run.timeout(deadline)
        if nxt is None:
            now = run.history[-1].end_time
            break
        now = nxt
    if clock is not None and hasattr(clock, "advance_to"):
        clock.advance_to(now)
    outcome = AttemptOutcome.SUCCESS if run.succeeded else AttemptOutcome.FAIL
    return FtshResult(outcome, tuple(run.history), start, now)


def hang_then(durations: list[float]) -> TimedAction:
    """Action whose n-th attempt takes durations[n-1] (inf = hang); the last value repeats."""

    def action(attempt: int, _start: float) -> tuple[float, bool]:
        d = durations[min(attempt, len(durations)) - 1]
        return d, not math.isinf(d)

    return action
