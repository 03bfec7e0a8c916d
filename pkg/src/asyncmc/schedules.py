"""Asynchronous execution order as data.

A schedule is a totally ordered list of write events.  Event ``seq`` (0-based,
consecutive) writes state version ``seq``; ``read_from`` names the version the
writer read, with ``-1`` standing for the initial state.  Staleness of an
event is ``seq - read_from``, so a fully synchronous chain has
``read_from == seq - 1`` everywhere.

Two invariants define validity:

* bounded staleness: ``seq - read_from <= staleness_bound`` for every event;
* no worker dies: every worker writes at least once in every window of
  ``staleness_bound`` consecutive events (equivalently, per-worker gaps
  between writes, counted with virtual writes at -1 and at the end of the
  schedule, never exceed the bound).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ParameterError, ValidationError

EVENT_KINDS = ("write", "server_commit")


@dataclass(frozen=True)
class Event:
    seq: int
    worker: int
    read_from: int
    kind: str = "write"

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValidationError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class Schedule:
    events: tuple
    workers: int
    staleness_bound: int

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if self.workers < 1:
            raise ParameterError("need at least one worker")
        if self.staleness_bound < 1:
            raise ParameterError("staleness bound must be positive")

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class ScheduleViolation:
    seq: int
    invariant: str  # "sequence" | "staleness" | "no_worker_dies"
    detail: str

    def __str__(self) -> str:
        return f"schedule invalid at seq {self.seq}: {self.invariant} ({self.detail})"


def validate(s: Schedule) -> ScheduleViolation | None:
    """Return ``None`` when valid, else a report naming the first bad seq."""
    b, m = s.staleness_bound, s.workers
    last_write = [-1] * m
    for k, ev in enumerate(s.events):
        if ev.seq != k:
            return ScheduleViolation(ev.seq, "sequence", f"expected seq {k}")
        if not 0 <= ev.worker < m:
            return ScheduleViolation(k, "sequence", f"worker {ev.worker} out of range")
        if not -1 <= ev.read_from < ev.seq:
            return ScheduleViolation(
                k, "sequence", f"read_from {ev.read_from} outside [-1, {ev.seq})"
            )
        if ev.seq - ev.read_from > b:
            return ScheduleViolation(
                k, "staleness", f"staleness {ev.seq - ev.read_from} exceeds bound {b}"
            )
        # a worker silent for more than b events has already broken a window
        for w in range(m):
            if w != ev.worker and k - last_write[w] > b:
                return ScheduleViolation(
                    k, "no_worker_dies", f"worker {w} silent through window ending at {k}"
                )
        if k - last_write[ev.worker] > b:
            return ScheduleViolation(
                k, "no_worker_dies", f"worker {ev.worker} silent through window ending at {k}"
            )
        last_write[ev.worker] = k
    n = len(s.events)
    for w in range(m):
        if n - last_write[w] > b:
            return ScheduleViolation(
                max(n - 1, 0), "no_worker_dies", f"worker {w} absent from the final window"
            )
    return None


def _check_feasible(m: int, b: int, length: int) -> None:
    if m < 1:
        raise ParameterError("need at least one worker")
    if b < m:
        raise ParameterError(f"b={b} < m={m}: some window of {b} events cannot hold all workers")
    if length < b:
        raise ParameterError(f"length {length} shorter than staleness bound {b}")


def _edf_safe_workers(deadlines: list[int], seq: int) -> list[int]:
    # Candidates whose choice leaves the remaining deadlines schedulable:
    # after serving w at `seq`, the i-th earliest other deadline must be
    # reachable at seq+1+i.
    m = len(deadlines)
    safe = []
    for w in range(m):
        others = sorted(deadlines[v] for v in range(m) if v != w)
        if all(d >= seq + 1 + i for i, d in enumerate(others)):
            safe.append(w)
    return safe


def random_schedule(
    m: int, b: int, length: int, rng: np.random.Generator, kind: str = "write"
) -> Schedule:
    """A uniformly scrambled valid schedule.

    Worker choice is random among options that keep the liveness deadlines
    satisfiable; staleness is uniform over the legal range, so both the
    fully fresh read (``read_from == seq - 1``) and the maximally stale one
    (``seq - read_from == b``) occur with positive probability.
    """
    _check_feasible(m, b, length)
    deadlines = [b - 1] * m  # each worker must first write within the opening window
    events = []
    for seq in range(length):
        safe = _edf_safe_workers(deadlines, seq)
        if not safe:  # pragma: no cover - b >= m keeps this unreachable
            raise ParameterError("scheduling dead end; parameters infeasible")
        urgent = [w for w in safe if deadlines[w] == seq]
        pool = urgent if urgent else safe
        worker = int(pool[int(rng.integers(len(pool)))])
        deadlines[worker] = seq + b
        staleness = 1 + int(rng.integers(min(seq + 1, b)))
        events.append(Event(seq, worker, seq - staleness, kind))
    sched = Schedule(tuple(events), m, b)
    violation = validate(sched)
    if violation is not None:  # pragma: no cover - generator soundness guard
        raise ParameterError(f"generator produced invalid schedule: {violation}")
    return sched


def synchronous_schedule(m: int, length: int, b: int | None = None, kind: str = "write") -> Schedule:
    """Round-robin workers, every read perfectly fresh."""
    if b is None:
        b = max(m, 1)
    _check_feasible(m, b, length)
    events = tuple(Event(seq, seq % m, seq - 1, kind) for seq in range(length))
    return Schedule(events, m, b)


def adversarial_schedules(m: int, b: int, length: int) -> dict[str, Schedule]:
    """Named extreme-but-valid schedules for stress testing.

    ``always_max_stale`` reads the oldest legal version everywhere;
    ``single_worker_dominant`` gives worker 0 every slot not needed for
    liveness; ``alternating_window`` alternates fresh and maximally stale
    reads in a crossing pattern.  The dominant pattern needs whole windows,
    so its length is rounded down to a multiple of ``b``.
    """
    _check_feasible(m, b, length)
    out = {}

    events = tuple(
        Event(seq, seq % m, max(-1, seq - b), "write") for seq in range(length)
    )
    out["always_max_stale"] = Schedule(events, m, b)

    blocks = length // b
    dominant = []
    for seq in range(blocks * b):
        pos = seq % b
        worker = pos - (b - m) if pos > b - m else 0
        dominant.append(Event(seq, worker, seq - 1, "write"))
    out["single_worker_dominant"] = Schedule(tuple(dominant), m, b)

    events = tuple(
        Event(seq, seq % m, seq - 1 if seq % 2 == 0 else max(-1, seq - b), "write")
        for seq in range(length)
    )
    out["alternating_window"] = Schedule(events, m, b)

    for name, sched in out.items():
        violation = validate(sched)
        if violation is not None:  # pragma: no cover - construction soundness guard
            raise ParameterError(f"{name}: {violation}")
    return out


def minimal_valid_bound(events, workers: int) -> int:
    """Smallest staleness bound under which these event triples validate.

    ``events`` holds ``(seq, worker, read_from)`` triples in seq order; the
    result covers both read staleness and every worker's write gaps
    (including the virtual writes at -1 and at the end).
    """
    last = [-1] * workers
    worst = 1
    n = 0
    for seq, worker, read_from in events:
        worst = max(worst, seq - read_from)
        worst = max(worst, *(seq - last[w] for w in range(workers)))
        last[worker] = seq
        n = seq + 1
    for w in range(workers):
        worst = max(worst, n - last[w])
    return worst


# ---------------------------------------------------------------------------
# JSONL trace format, shared with the executors' emitted traces
# ---------------------------------------------------------------------------


def schedule_to_jsonl(s: Schedule) -> str:
    """One event per line; a leading meta line carries workers and bound."""
    lines = [json.dumps({"kind": "meta", "workers": s.workers, "staleness_bound": s.staleness_bound})]
    for ev in s.events:
        lines.append(
            json.dumps(
                {"seq": ev.seq, "worker": ev.worker, "read_from": ev.read_from, "kind": ev.kind}
            )
        )
    return "\n".join(lines) + "\n"


def schedule_from_jsonl(text: str | Iterable[str]) -> Schedule:
    """Parse a JSONL trace; infers workers/bound when the meta line is absent."""
    if isinstance(text, str):
        lines = [ln for ln in text.splitlines() if ln.strip()]
    else:
        lines = [ln for ln in text if ln.strip()]
    workers = bound = None
    events = []
    for ln in lines:
        try:
            doc = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad JSONL line: {exc}") from exc
        if doc.get("kind") == "meta":
            workers = int(doc["workers"])
            bound = int(doc["staleness_bound"])
            continue
        try:
            events.append(
                Event(int(doc["seq"]), int(doc["worker"]), int(doc["read_from"]), doc.get("kind", "write"))
            )
        except KeyError as exc:
            raise ValidationError(f"event line missing field {exc}") from exc
    if not events and workers is None:
        raise ValidationError("trace contains no events")
    if workers is None:
        workers = max(ev.worker for ev in events) + 1
    if bound is None:
        bound = max(max((ev.seq - ev.read_from) for ev in events), 1)
    return Schedule(tuple(events), workers, bound)
