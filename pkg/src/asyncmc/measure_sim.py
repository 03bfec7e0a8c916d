"""Deterministic measure-level propagation under asynchronous schedules.

Instead of sampling states, this module pushes exact distributions through a
schedule: version ``v`` of the shared state has a distribution ``mu_v``, and
an event that reads version ``j`` and writes version ``v`` sets
``mu_v = mu_j P``.  On top of the resulting trace it computes the windowed
statistics that drive the convergence argument for bounded-staleness
execution:

* ``d[v]``: TV distance of ``mu_v`` to the stationary distribution,
* ``d_star[v]``: max of ``d`` over the trailing window of ``b`` versions,
* ``p[v]``: how many operator applications lie in ``mu_v``'s lineage,
* ``p_star[v]``: min of ``p`` over the same trailing window,

and checks, rather than assumes, that ``d_star`` is nonincreasing once the
window is warm, that ``p_star`` grows at least linearly, and that ``d``
collapses to zero.  Versions are indexed 0..N with version 0 the initial
distribution, so arrays here are offset by one from event sequence numbers.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    DimensionError,
    InconclusiveCounterexampleError,
    ScheduleError,
)
from .measures import (
    FiniteDistribution,
    StochasticMatrix,
    apply_operator,
    random_distribution,
    random_stochastic_matrix,
    stationary_distribution,
    tv_distance,
)
from .schedules import Event, Schedule, random_schedule, validate

MONOTONE_TOL = 1e-12
CONVERGENCE_THRESHOLD = 1e-8


@dataclass(frozen=True)
class MeasureTrace:
    """Everything the convergence argument needs, per state version."""

    schedule: Schedule
    pi: FiniteDistribution
    mus: tuple
    d: tuple
    d_star: tuple
    p: tuple
    p_star: tuple

    @property
    def exact(self) -> bool:
        return isinstance(self.d[0], Fraction)

    @property
    def n_versions(self) -> int:
        return len(self.mus)


def _window_stats(values: list, b: int, reduce) -> list:
    out = []
    for k in range(len(values)):
        lo = max(0, k - b + 1)
        out.append(reduce(values[lo : k + 1]))
    return out


def _propagate_events(
    m: StochasticMatrix, mu0: FiniteDistribution, schedule: Schedule, pi: FiniteDistribution
) -> MeasureTrace:
    mus = [mu0]
    p = [0]
    d = [tv_distance(mu0, pi)]
    for ev in schedule.events:
        j = ev.read_from + 1  # version index: read_from -1 is version 0
        nxt = apply_operator(m, mus[j])
        mus.append(nxt)
        p.append(p[j] + 1)
        d.append(tv_distance(nxt, pi))
    b = schedule.staleness_bound
    d_star = _window_stats(d, b, max)
    p_star = _window_stats(p, b, min)
    return MeasureTrace(
        schedule, pi, tuple(mus), tuple(d), tuple(d_star), tuple(p), tuple(p_star)
    )


def propagate(
    m: StochasticMatrix,
    mu0: FiniteDistribution,
    schedule: Schedule,
    *,
    pi: FiniteDistribution | None = None,
) -> MeasureTrace:
    """Propagate ``mu0`` through a valid schedule under kernel ``m``."""
    violation = validate(schedule)
    if violation is not None:
        raise ScheduleError(str(violation))
    if m.space != mu0.space:
        raise DimensionError("kernel and initial distribution live on different spaces")
    if pi is None:
        pi = stationary_distribution(m)
    elif pi.space != m.space:
        raise DimensionError("pi lives on a different space")
    return _propagate_events(m, mu0, schedule, pi)


@dataclass(frozen=True)
class TheoremReport:
    """Outcome of checking the bounded-staleness convergence argument."""

    passed: bool
    failures: tuple
    monotone_ok: bool
    depth_nondecreasing: bool
    depth_floor: int
    depth_floor_ok: bool
    dominance_ok: bool
    converged: bool
    d_final: float
    p_star_final: int
    l_times: tuple
    tolerance: float
    threshold: float


def verify_theorem4(
    trace: MeasureTrace,
    *,
    threshold: float = CONVERGENCE_THRESHOLD,
    tolerance: float | None = None,
) -> TheoremReport:
    """Check every numerical step of the convergence argument on a trace.

    Failures signal an implementation bug for valid inputs, never a theory
    bug; each failure message names the offending version index.
    """
    b = trace.schedule.staleness_bound
    n = len(trace.schedule.events)
    d, d_star, p, p_star = trace.d, trace.d_star, trace.p, trace.p_star
    if tolerance is None:
        tolerance = 0 if trace.exact else MONOTONE_TOL
    failures = []

    monotone_ok = True
    for k in range(b + 1, n):
        if d_star[k + 1] > d_star[k] + tolerance:
            monotone_ok = False
            failures.append(f"d_star increases at k={k + 1}")

    depth_nondecreasing = True
    for k in range(n):
        if p_star[k + 1] < p_star[k]:
            depth_nondecreasing = False
            failures.append(f"p_star decreases at k={k + 1}")
    depth_floor = (n - b) // b - 1
    depth_floor_ok = p_star[n] >= depth_floor
    if not depth_floor_ok:
        failures.append(f"p_star[{n}]={p_star[n]} below linear floor {depth_floor}")

    dominance_ok = True
    for k in range(n + 1):
        if d_star[k] < d[k]:
            dominance_ok = False
            failures.append(f"d_star below d at k={k}")

    converged = d[n] <= threshold
    if not converged:
        failures.append(f"d at final version {n} is {float(d[n]):.3e} > {threshold:.1e}")

    # smallest index attaining max p_star over 0 < j < k, one entry per k >= 2
    l_times = []
    best_j, best_val = 1, p_star[1] if n >= 1 else 0
    for k in range(2, n + 1):
        j = k - 1
        if p_star[j] > best_val:
            best_val, best_j = p_star[j], j
        l_times.append(best_j)

    return TheoremReport(
        passed=not failures,
        failures=tuple(failures),
        monotone_ok=monotone_ok,
        depth_nondecreasing=depth_nondecreasing,
        depth_floor=depth_floor,
        depth_floor_ok=depth_floor_ok,
        dominance_ok=dominance_ok,
        converged=converged,
        d_final=float(d[n]),
        p_star_final=int(p_star[n]),
        l_times=tuple(l_times),
        tolerance=float(tolerance),
        threshold=threshold,
    )


def frozen_worker_schedule(length: int, *, staleness_bound: int = 2) -> Schedule:
    """Two workers, one forever re-serving its read of the initial state.

    Worker 0 (even seqs) always reads version -1; worker 1 (odd seqs)
    advances its own lineage.  The staleness bound is broken by
    construction, so this schedule does not validate.
    """
    events = []
    for seq in range(length):
        if seq % 2 == 0:
            events.append(Event(seq, 0, -1, "write"))
        else:
            events.append(Event(seq, 1, seq - 2, "write"))
    return Schedule(tuple(events), 2, staleness_bound)


def propagate_unbounded_counterexample(
    m: StochasticMatrix, mu0: FiniteDistribution, length: int
) -> MeasureTrace:
    """Show the liveness hypothesis is load-bearing: without it, no convergence.

    Returns the trace for the frozen-worker schedule, whose odd versions all
    equal the once-stepped initial distribution and therefore keep their
    distance to stationarity forever.
    """
    if length < 10:
        raise ScheduleError("counterexample needs length >= 10")
    pi = stationary_distribution(m)
    if tv_distance(mu0, pi) == 0:
        raise InconclusiveCounterexampleError(
            "mu0 equals pi, so stale rewrites are indistinguishable from progress"
        )
    schedule = frozen_worker_schedule(length)
    return _propagate_events(m, mu0, schedule, pi)


def matrix_power_consistency(
    trace: MeasureTrace, m: StochasticMatrix, *, tol: float = 1e-10
) -> bool:
    """Check mu_v equals the p_v-fold kernel power applied to mu_0."""
    mu0 = trace.mus[0]
    powers = {0: mu0}
    current = mu0
    for k in range(1, max(trace.p) + 1):
        current = apply_operator(m, current)
        powers[k] = current
    zero = 0 if trace.exact else tol
    return all(
        tv_distance(trace.mus[v], powers[trace.p[v]]) <= zero
        for v in range(trace.n_versions)
    )


def measure_trace_csv(trace: MeasureTrace) -> str:
    """One row per event: schedule fields plus the post-write statistics."""
    buf = io.StringIO()
    buf.write("seq,worker,read_from,d_k,d_star_k,p_k,p_star_k\n")
    for ev in trace.schedule.events:
        v = ev.seq + 1
        buf.write(
            f"{ev.seq},{ev.worker},{ev.read_from},"
            f"{float(trace.d[v])!r},{float(trace.d_star[v])!r},{trace.p[v]},{trace.p_star[v]}\n"
        )
    return buf.getvalue()


@dataclass(frozen=True)
class Theorem4CampaignReport:
    instances: int
    violations: int
    worst_final_d: float
    min_depth_margin: int


def run_theorem4_campaign(
    n_instances: int,
    seed: int,
    *,
    n_states_max: int = 6,
    m_max: int = 5,
    b_max: int = 10,
    length: int = 300,
    threshold: float = CONVERGENCE_THRESHOLD,
    uniform_mix: tuple[float, float] = (0.55, 0.9),
) -> Theorem4CampaignReport:
    """Randomized verification campaign over kernels, inits, and schedules.

    Kernels are Dirichlet rows blended with the uniform kernel at a mixing
    weight drawn from ``uniform_mix``; the blend bounds the per-application
    TV contraction coefficient away from 1 so the stated final threshold is
    reachable at the worst legal operator depth.
    """
    rng = np.random.default_rng(seed)
    violations = 0
    worst_d = 0.0
    min_margin = None
    for _ in range(n_instances):
        n = int(rng.integers(2, n_states_max + 1))
        raw = random_stochastic_matrix(rng, n)
        eps = float(rng.uniform(*uniform_mix))
        rows = (1.0 - eps) * raw.rows + eps / n
        kernel = StochasticMatrix(raw.space, rows)
        mu0 = random_distribution(rng, n)
        m_workers = int(rng.integers(1, m_max + 1))
        b = int(rng.integers(m_workers, b_max + 1))
        schedule = random_schedule(m_workers, b, length, rng)
        trace = propagate(kernel, mu0, schedule)
        report = verify_theorem4(trace, threshold=threshold)
        if not report.passed:
            violations += 1
        worst_d = max(worst_d, report.d_final)
        margin = report.p_star_final - report.depth_floor
        min_margin = margin if min_margin is None else min(min_margin, margin)
    return Theorem4CampaignReport(n_instances, violations, worst_d, int(min_margin or 0))
