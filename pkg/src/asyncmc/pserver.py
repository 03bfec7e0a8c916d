"""Simulated parameter-server execution with server-side MH correction.

Workers read the server's state, compute a proposal from that possibly stale
read, and send it in; the server accepts each incoming proposal against its
CURRENT state with probability ``min{1, pi(x*) f(x_s|x) / (pi(x_s) f(x*|x))}``
where ``x`` is the state the worker read and ``x_s`` the server's state at
receipt.  A switchable naive mode accepts everything, reproducing the known
divergence of uncorrected asynchronous Gibbs.

How a proposal lands depends on its scope:

* full-state proposals (independence, random walk) replace the whole server
  state on accept, and the server trusts the worker-shipped density of the
  proposed state;
* site proposals (Gibbs conditionals) and slot proposals (coupled replicas)
  apply their one updated component to the server's current state, which is
  the componentwise reading of the coupled-operator picture; the density of
  that merged candidate is evaluated server-side since no worker can know it.

The simulation is a deterministic discrete-event loop: worker sends and
message deliveries live in one priority queue keyed by virtual time; workers
re-read the server at each send (except explicitly frozen workers, which
keep re-serving their first read forever, the aggressive-staleness regime);
the delay model sets per-message latency, per-worker send cadence, and the
staleness cap enforced by backpressure.
"""
from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    LivenessError,
    NumericError,
    ParameterError,
    ProtocolError,
    UnsupportedTargetError,
    ValidationError,
)
from .kernels import (
    GibbsSiteProposal,
    KernelSpec,
    TargetDensity,
    default_init,
    worker_streams,
)
from .measures import StateSpace, StochasticMatrix
from .schedules import Event, Schedule

NEG_INF = float("-inf")
MODES = ("mh_corrected", "naive_accept")
DELAY_KINDS = ("fifo_fixed", "fifo_random", "reorder_random")


@dataclass(frozen=True)
class TaggedState:
    value: object
    log_pi: float


@dataclass(frozen=True)
class ServerState:
    tagged: TaggedState
    version: int = 0
    commit_count: int = 0


@dataclass(frozen=True)
class ServerMessage:
    """What a worker sends: its read, its proposal, and cached densities."""

    worker: int
    read_version: int
    x: object
    x_star: object
    log_pi_x_star: float
    log_f_forward: float
    proposal_id: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DelayModel:
    """Latency law, per-worker send cadence, and the staleness cap.

    ``params`` per kind: ``latency`` (fifo_fixed), ``mean`` (fifo_random,
    geometric), ``span`` (reorder_random, uniform integer).  Optional keys
    for any kind: ``periods`` (scalar or per-worker list of send cadences)
    and ``jitter``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    staleness_cap: int = 64

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ParameterError(f"unknown delay kind {self.kind!r}")
        if self.staleness_cap < 0:
            raise ParameterError("staleness cap must be non-negative")

    def latency(self, rng: np.random.Generator) -> float:
        if self.kind == "fifo_fixed":
            return float(self.params.get("latency", 0.0))
        if self.kind == "fifo_random":
            mean = float(self.params.get("mean", 2.0))
            return float(rng.geometric(1.0 / (1.0 + mean)) - 1)
        return float(rng.integers(0, int(self.params.get("span", 8)) + 1))

    def period(self, worker: int) -> float:
        periods = self.params.get("periods", 1.0)
        if isinstance(periods, (int, float)):
            return float(periods)
        return float(periods[worker])

    @property
    def jitter(self) -> float:
        return float(self.params.get("jitter", 0.25))


def coupled_embed(target: TargetDensity, m: int) -> TargetDensity:
    """Product target over ``m`` replicas; marginal ``i`` is the original.

    States are tuples of base states.  For finite base targets the result is
    itself finite with the product space enumerated explicitly.
    """
    if m < 1:
        raise ParameterError("need at least one replica")
    if m == 1:
        return target

    def log_unnorm(xs):
        return sum(target.log_unnorm(x) for x in xs)

    support = None
    if target.is_finite:
        labels = tuple(itertools.product(*([target.support.labels] * m)))
        support = StateSpace(labels)
    return TargetDensity(dim=m, log_unnorm=log_unnorm, support=support)


class SlotProposal:
    """Propose a new value for one replica slot of a coupled state."""

    symmetric = False

    def __init__(self, base, slot: int):
        self.base = base
        self.slot = int(slot)
        self.proposal_id = f"slot{slot}:{base.proposal_id}"

    def sample(self, xs, rng: np.random.Generator):
        value, base_params = self.base.sample(xs[self.slot], rng)
        out = list(xs)
        out[self.slot] = value
        return tuple(out), {"slot": self.slot, **base_params}

    def logpdf(self, ys, xs, params) -> float:
        return self.base.logpdf(ys[self.slot], xs[self.slot], params)


def _candidate(st: ServerState, msg: ServerMessage):
    """The proposed next server state and, when known, its shipped density."""
    site = msg.params.get("site")
    slot = msg.params.get("slot")
    if slot is not None:
        out = list(st.tagged.value)
        out[slot] = msg.x_star[slot]
        return tuple(out), None
    if site is not None:
        out = list(st.tagged.value)
        out[site] = msg.x_star[site]
        return tuple(out), None
    return msg.x_star, msg.log_pi_x_star


def server_receive(
    st: ServerState,
    msg: ServerMessage,
    target: TargetDensity,
    proposals: dict,
    rng: np.random.Generator,
    *,
    mode: str = "mh_corrected",
    debug_revalidate: bool = False,
) -> tuple[ServerState, bool, float]:
    """Process one message; returns (new state, accepted, log accept ratio).

    Exactly one uniform is drawn per message in either mode, so corrected
    and naive runs with the same seed consume identical randomness.
    """
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}")
    family = proposals.get(msg.proposal_id)
    if family is None:
        raise ProtocolError(f"proposal id {msg.proposal_id!r} is not registered")
    if msg.read_version > st.version:
        raise ProtocolError(
            f"message read version {msg.read_version} is ahead of the server ({st.version})"
        )
    if debug_revalidate:
        actual = target.log_unnorm(msg.x_star)
        if not math.isclose(actual, msg.log_pi_x_star, rel_tol=0, abs_tol=1e-10):
            raise ValidationError(
                f"worker-shipped density {msg.log_pi_x_star} disagrees with target ({actual})"
            )
        cached = target.log_unnorm(st.tagged.value)
        if not math.isclose(cached, st.tagged.log_pi, rel_tol=0, abs_tol=1e-10):
            raise ValidationError(
                f"server cached density {st.tagged.log_pi} disagrees with target ({cached})"
            )

    cand_value, cand_lp = _candidate(st, msg)
    if cand_lp is None:
        cand_lp = target.log_unnorm(cand_value)
    log_f_reverse = family.logpdf(st.tagged.value, msg.x, msg.params)
    num = cand_lp + log_f_reverse
    den = st.tagged.log_pi + msg.log_f_forward
    if num == NEG_INF:
        log_ratio = NEG_INF
    elif den == NEG_INF:
        log_ratio = float("inf")
    else:
        log_ratio = num - den
    if math.isnan(log_ratio):
        raise NumericError(f"non-finite acceptance arithmetic: num={num}, den={den}")

    u = rng.random()
    accepted = mode == "naive_accept" or log_ratio >= 0.0 or u < math.exp(log_ratio)
    if accepted:
        new = ServerState(TaggedState(cand_value, cand_lp), st.version + 1, st.commit_count + 1)
    else:
        new = ServerState(st.tagged, st.version + 1, st.commit_count)
    return new, accepted, log_ratio


@dataclass(frozen=True)
class PServerRecord:
    """Trace of a parameter-server run, arrays sized by the horizon."""

    trace: Schedule
    workers: np.ndarray
    read_versions: np.ndarray
    accepted: np.ndarray
    log_ratios: np.ndarray
    states: np.ndarray  # (horizon, dim) floats, or (horizon,) label indices
    config: dict
    target: TargetDensity

    @property
    def accept_rate(self) -> float:
        return float(self.accepted.mean())

    def state_labels(self) -> list:
        if not self.target.is_finite:
            raise UnsupportedTargetError("continuous runs store coordinates, not labels")
        labels = self.target.support.labels
        return [labels[i] for i in self.states]

    def late_states(self, burn_fraction: float = 0.2) -> np.ndarray:
        start = int(len(self.states) * burn_fraction)
        return self.states[start:]


def _worker_proposal(kernel: KernelSpec):
    if kernel.kind == "metropolis_hastings":
        return kernel.proposal
    if kernel.kind == "gibbs_single_site":
        return GibbsSiteProposal(kernel.target)
    raise UnsupportedTargetError(f"kernel kind {kernel.kind!r} has no parameter-server form")


def run_pserver(
    kernel: KernelSpec,
    m: int,
    horizon: int,
    delay: DelayModel,
    mode: str,
    seed: int,
    *,
    init=None,
    frozen_workers: tuple = (),
    coupled: bool = False,
    max_resends: int = 1000,
    debug_revalidate: bool = False,
) -> PServerRecord:
    """Drive ``m`` workers against one simulated server for ``horizon`` messages.

    Every processed message, accepted or rejected, increments the server
    version and lands in the trace; the recorded state row is the server
    state right after processing.  With ``coupled=True`` the server holds
    ``m`` replica slots of the target and worker ``i`` only ever updates
    slot ``i``.
    """
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}")
    if m < 1 or horizon < 1:
        raise ParameterError("m and horizon must be positive")

    base_target = kernel.target
    if coupled:
        target = coupled_embed(base_target, m)
        base_proposal = _worker_proposal(kernel)
        worker_props = [SlotProposal(base_proposal, w) for w in range(m)]
        if init is None:
            init = tuple(default_init(base_target) for _ in range(m))
    else:
        target = base_target
        prop = _worker_proposal(kernel)
        worker_props = [prop] * m
        if init is None:
            init = default_init(base_target)
    registry = {p.proposal_id: p for p in worker_props}

    init_lp = target.log_unnorm(init)
    if init_lp == NEG_INF:
        raise ValidationError("initial state lies outside the target support")
    st = ServerState(TaggedState(init, init_lp))

    rngs = worker_streams(seed, m, extra=1)
    infra = rngs[m]
    frozen = set(frozen_workers)
    heap: list = []
    tiebreak = 0

    def push(t: float, kind: str, payload):
        nonlocal tiebreak
        heapq.heappush(heap, (t, tiebreak, kind, payload))
        tiebreak += 1

    frozen_reads: dict = {}
    resend_counts = [0] * m
    sends = 0

    def compose(worker: int, t: float, *, force_fresh: bool = False):
        nonlocal sends
        sends += 1
        if worker in frozen and not force_fresh and worker in frozen_reads:
            x, rv = frozen_reads[worker]
        else:
            x, rv = st.tagged.value, st.version
            frozen_reads[worker] = (x, rv)
        prop = worker_props[worker]
        y, params = prop.sample(x, rngs[worker])
        msg = ServerMessage(
            worker=worker,
            read_version=rv,
            x=x,
            x_star=y,
            log_pi_x_star=target.log_unnorm(y),
            log_f_forward=prop.logpdf(y, x, params),
            proposal_id=prop.proposal_id,
            params=params,
        )
        push(t + delay.latency(infra), "deliver", msg)

    for w in range(m):
        if w in frozen:
            push(0.0, "send", w)
        else:
            push(float(infra.uniform(0.0, delay.jitter + 1e-9)), "send", w)

    is_finite = target.is_finite
    if is_finite:
        index = {lab: i for i, lab in enumerate(target.support.labels)}
        states = np.empty(horizon, dtype=np.int64)
    else:
        states = np.empty((horizon, target.dim))
    workers_arr = np.empty(horizon, dtype=np.int32)
    reads_arr = np.empty(horizon, dtype=np.int64)
    accepted_arr = np.empty(horizon, dtype=bool)
    ratios_arr = np.empty(horizon, dtype=float)

    processed = 0
    while processed < horizon:
        t, _, kind, payload = heapq.heappop(heap)
        if kind == "send":
            compose(payload, t)
            continue
        msg: ServerMessage = payload
        staleness = st.version - msg.read_version
        if staleness > delay.staleness_cap:
            # backpressure: re-read now and resend rather than apply a read
            # staler than the model allows
            w = msg.worker
            resend_counts[w] += 1
            if resend_counts[w] > max_resends:
                raise LivenessError(
                    f"worker {w} exceeded {max_resends} stale resends (cap {delay.staleness_cap})"
                )
            compose(w, t, force_fresh=True)
            continue
        st, accepted, log_ratio = server_receive(
            st, msg, target, registry, rngs[msg.worker], mode=mode, debug_revalidate=debug_revalidate
        )
        workers_arr[processed] = msg.worker
        reads_arr[processed] = msg.read_version
        accepted_arr[processed] = accepted
        ratios_arr[processed] = log_ratio
        if is_finite:
            states[processed] = index[st.tagged.value]
        else:
            states[processed] = st.tagged.value
        processed += 1
        push(t + delay.period(msg.worker) + float(infra.uniform(0.0, delay.jitter)), "send", msg.worker)

    events = tuple(
        Event(int(i), int(workers_arr[i]), int(reads_arr[i]) - 1, "server_commit")
        for i in range(horizon)
    )
    bound = int(max(1, (np.arange(horizon) - (reads_arr - 1)).max()))
    for w in range(m):
        where = np.flatnonzero(workers_arr == w)
        gaps = np.diff(np.concatenate(([-1], where, [horizon])))
        bound = max(bound, int(gaps.max()))
    trace = Schedule(events, m, bound)
    config = {
        "mode": f"pserver:{mode}",
        "kernel": kernel.describe(),
        "m": m,
        "horizon": horizon,
        "seed": seed,
        "delay": {"kind": delay.kind, "params": delay.params, "staleness_cap": delay.staleness_cap},
        "coupled": coupled,
        "frozen_workers": sorted(frozen),
        "messages_sent": sends,
        "resends": sum(resend_counts),
        "pending_at_exit": sum(1 for item in heap if item[2] == "deliver"),
    }
    return PServerRecord(
        trace, workers_arr, reads_arr, accepted_arr, ratios_arr, states, config, target
    )


def render_server_kernel(target: TargetDensity, proposal) -> StochasticMatrix:
    """Enumerate the zero-staleness server chain as a transition matrix.

    Every message then reads the current state, so row ``s`` mixes the
    proposal's distribution with the server's accept rule evaluated at
    ``x = x_s``.
    """
    if not target.is_finite:
        raise UnsupportedTargetError("only finite targets can be enumerated")
    if not hasattr(proposal, "support_logpdfs"):
        raise UnsupportedTargetError("proposal is not enumerable")
    space = target.support
    n = space.size
    lp = np.array([target.log_unnorm(lab) for lab in space.labels])
    rows = np.zeros((n, n))
    for i, lab in enumerate(space.labels):
        lq = proposal.support_logpdfs(lab)
        for j in range(n):
            log_ratio = (lp[j] + lq[i]) - (lp[i] + lq[j])
            rows[i, j] = math.exp(lq[j]) * min(1.0, math.exp(min(log_ratio, 0.0)))
        rows[i, i] += 1.0 - rows[i].sum()
    return StochasticMatrix(space, rows)


def replica_marginal_indices(record: PServerRecord, slot: int, base: TargetDensity) -> np.ndarray:
    """Map a coupled finite run's states to one replica's label indices."""
    if not record.target.is_finite:
        raise UnsupportedTargetError("marginals by label need a finite target")
    base_index = {lab: i for i, lab in enumerate(base.support.labels)}
    coupled_labels = record.target.support.labels
    lookup = np.array([base_index[lab[slot]] for lab in coupled_labels], dtype=np.int64)
    return lookup[record.states]


def pserver_trace_jsonl(record: PServerRecord) -> str:
    """Shared JSONL event format plus the per-message accepted flag."""
    s = record.trace
    lines = [
        json.dumps({"kind": "meta", "workers": s.workers, "staleness_bound": s.staleness_bound})
    ]
    for i, ev in enumerate(s.events):
        lines.append(
            json.dumps(
                {
                    "seq": ev.seq,
                    "worker": ev.worker,
                    "read_from": ev.read_from,
                    "kind": ev.kind,
                    "accepted": bool(record.accepted[i]),
                }
            )
        )
    return "\n".join(lines) + "\n"


def messages_csv(record: PServerRecord) -> str:
    lines = ["seq,worker,read_version,accepted,log_ratio"]
    for i in range(len(record.workers)):
        lines.append(
            f"{i},{record.workers[i]},{record.read_versions[i]},"
            f"{int(record.accepted[i])},{record.log_ratios[i]!r}"
        )
    return "\n".join(lines) + "\n"
