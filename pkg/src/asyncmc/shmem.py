"""Shared-memory asynchronous execution of a sampling kernel.

Workers loop read -> step -> write against one shared cell holding the full
state; there is no other coordination.  The cell swaps the whole
``(state, version)`` pair in one linearizable operation, which is the weakest
mechanism that rules out torn reads.  Write order defines the global sequence
numbering; a watchdog turns the bounded-staleness liveness assumption into an
enforced runtime contract instead of a silent hypothesis.

Two modes share the read/step/write semantics: ``run_async`` races real
threads and records the schedule it happened to execute, while ``replay``
deterministically executes a prescribed schedule so the sample-level and
measure-level views of the same schedule can be compared.
"""
from __future__ import annotations

import json
import threading
import zlib
from dataclasses import dataclass
from typing import Sequence

from .errors import LivenessError, ScheduleError
from .kernels import KernelSpec, default_init, kernel_step, worker_streams
from .schedules import Event, Schedule, minimal_valid_bound, validate


class SharedCell:
    """A lock-guarded cell swapping an immutable (state, version) snapshot.

    Readers always observe a pair written together by a single writer; there
    is no way to observe half of one write and half of another.
    """

    def __init__(self, state, version: int = -1):
        self._lock = threading.Lock()
        self._state = state
        self._version = version

    def read(self):
        with self._lock:
            return self._state, self._version

    def swap(self, state, version: int):
        with self._lock:
            old = (self._state, self._version)
            self._state = state
            self._version = version
            return old


@dataclass(frozen=True)
class ChecksumState:
    """A state value carrying a checksum over its payload.

    Used to detect torn reads: any mixture of two distinct writes fails
    verification.
    """

    payload: tuple
    checksum: int

    @classmethod
    def make(cls, payload: Sequence) -> "ChecksumState":
        payload = tuple(payload)
        return cls(payload, zlib.crc32(repr(payload).encode()))

    def verify(self) -> bool:
        return zlib.crc32(repr(self.payload).encode()) == self.checksum


@dataclass(frozen=True)
class RunRecord:
    """What an execution did: its schedule, its samples, and its settings."""

    trace: Schedule
    samples: tuple  # (seq, worker, state) triples in seq order
    config: dict

    def states(self) -> list:
        return [s for _, _, s in self.samples]


class _AsyncCoordinator:
    """Linearizes writes: seq assignment, watchdog, and logging in one lock."""

    def __init__(self, init_state, m: int, horizon: int, watchdog_b: int):
        self.lock = threading.Lock()
        self.state = init_state
        self.version = -1
        self.next_seq = 0
        self.last_write = [-1] * m
        self.horizon = horizon
        self.watchdog_b = watchdog_b
        self.m = m
        self.stop = False
        self.liveness_failure = None
        self.events = []
        self.samples = []

    def read(self):
        with self.lock:
            return self.state, self.version

    def commit(self, worker: int, read_version: int, state) -> bool:
        """Returns False when the worker should stop (horizon or abort)."""
        with self.lock:
            if self.stop:
                return False
            if self.next_seq >= self.horizon:
                self.stop = True
                return False
            seq = self.next_seq
            for w in range(self.m):
                if seq - self.last_write[w] > self.watchdog_b:
                    self.stop = True
                    self.liveness_failure = (
                        w,
                        f"worker {w} wrote nothing in window ({seq - self.watchdog_b}, {seq}]",
                    )
                    return False
            self.next_seq = seq + 1
            self.last_write[worker] = seq
            self.state = state
            self.version = seq
            self.events.append((seq, worker, read_version))
            self.samples.append((seq, worker, state))
            return True


def run_async(
    kernel: KernelSpec,
    m: int,
    horizon: int,
    seed: int,
    watchdog_b: int,
    *,
    init=None,
) -> RunRecord:
    """Race ``m`` worker threads against one shared cell for ``horizon`` writes.

    The watchdog aborts with :class:`LivenessError` if any worker stays
    silent for more than ``watchdog_b`` consecutive writes, since all
    convergence guarantees are conditional on that bound.
    """
    if m < 1 or horizon < 1 or watchdog_b < 1:
        raise ScheduleError("m, horizon, and watchdog_b must all be positive")
    if init is None:
        init = default_init(kernel.target)
    coord = _AsyncCoordinator(init, m, horizon, watchdog_b)
    rngs = worker_streams(seed, m)

    def work(worker: int):
        rng = rngs[worker]
        while True:
            state, version = coord.read()
            step = kernel_step(kernel, state, rng)
            if not coord.commit(worker, version, step.state):
                return

    threads = [threading.Thread(target=work, args=(w,), daemon=True) for w in range(m)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if coord.liveness_failure is not None:
        worker, detail = coord.liveness_failure
        raise LivenessError(f"liveness watchdog fired: {detail}")

    events = sorted(coord.events)
    bound = minimal_valid_bound(events, m)
    trace = Schedule(
        tuple(Event(seq, w, rv, "write") for seq, w, rv in events), m, bound
    )
    samples = tuple(sorted(coord.samples, key=lambda t: t[0]))
    config = {
        "mode": "shmem_real",
        "kernel": kernel.describe(),
        "m": m,
        "horizon": horizon,
        "seed": seed,
        "watchdog_b": watchdog_b,
    }
    return RunRecord(trace, samples, config)


def replay(kernel: KernelSpec, schedule: Schedule, seed: int, *, init=None) -> RunRecord:
    """Deterministically execute the read/step/write loop under a schedule."""
    violation = validate(schedule)
    if violation is not None:
        raise ScheduleError(str(violation))
    if init is None:
        init = default_init(kernel.target)
    rngs = worker_streams(seed, schedule.workers)
    versions = {-1: init}
    samples = []
    for ev in schedule.events:
        state = versions[ev.read_from]
        step = kernel_step(kernel, state, rngs[ev.worker])
        versions[ev.seq] = step.state
        samples.append((ev.seq, ev.worker, step.state))
    config = {
        "mode": "shmem_replay",
        "kernel": kernel.describe(),
        "m": schedule.workers,
        "horizon": len(schedule.events),
        "seed": seed,
        "watchdog_b": schedule.staleness_bound,
    }
    return RunRecord(schedule, tuple(samples), config)


def torn_state_stress(m: int, total_ops: int, seed: int) -> dict:
    """Hammer one cell from ``m`` threads with checksummed states.

    Every read verifies the checksum of the snapshot it got; every write
    installs a freshly checksummed payload.  Returns op and failure counts;
    any failure means the atomic-swap contract is broken.
    """
    cell = SharedCell(ChecksumState.make((0, 0, 0.0)), 0)
    counter = {"ops": 0}
    counter_lock = threading.Lock()
    failures = [0] * m
    rngs = worker_streams(seed, m)

    def work(worker: int):
        rng = rngs[worker]
        local = 0
        while True:
            with counter_lock:
                if counter["ops"] >= total_ops:
                    break
                counter["ops"] += 2
            state, version = cell.read()
            if not state.verify():
                failures[worker] += 1
            local += 1
            payload = (worker, local, float(rng.random()))
            cell.swap(ChecksumState.make(payload), version + 1)

    threads = [threading.Thread(target=work, args=(w,), daemon=True) for w in range(m)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return {"ops": counter["ops"], "failures": sum(failures)}


def _state_str(state) -> str:
    if isinstance(state, tuple):
        return json.dumps(list(state))
    return json.dumps(state)


def samples_csv(record: RunRecord) -> str:
    lines = ["seq,worker,state"]
    for seq, worker, state in record.samples:
        lines.append(f'{seq},{worker},"{_state_str(state)}"')
    return "\n".join(lines) + "\n"
