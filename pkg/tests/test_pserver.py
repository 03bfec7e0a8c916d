import math

import numpy as np
import pytest

from asyncmc.errors import (
    LivenessError,
    NumericError,
    ParameterError,
    ProtocolError,
    UnsupportedTargetError,
    ValidationError,
)
from asyncmc.kernels import (
    GaussianRandomWalkProposal,
    GaussianTarget,
    KernelSpec,
    TableIndependenceProposal,
    UniformIndependenceProposal,
    default_init,
    finite_target,
    gaussian_target,
    mh_step,
    target_distribution,
    worker_streams,
)
from asyncmc.pserver import (
    DelayModel,
    ServerMessage,
    ServerState,
    TaggedState,
    coupled_embed,
    messages_csv,
    pserver_trace_jsonl,
    render_server_kernel,
    replica_marginal_indices,
    run_pserver,
    server_receive,
)
from asyncmc.schedules import validate


def three_state():
    return finite_target([1.0, 2.0, 3.0])


def mh_uniform(target=None):
    target = target or three_state()
    return KernelSpec("metropolis_hastings", target, UniformIndependenceProposal(target.support))


def zero_delay(cap=0):
    return DelayModel("fifo_fixed", {"latency": 0.0, "jitter": 0.0}, staleness_cap=cap)


def make_message(target, proposal, x, y, params=None):
    params = params or {}
    return ServerMessage(
        worker=0,
        read_version=0,
        x=x,
        x_star=y,
        log_pi_x_star=target.log_unnorm(y),
        log_f_forward=proposal.logpdf(y, x, params),
        proposal_id=proposal.proposal_id,
        params=params,
    )


class TestServerReceive:
    def test_fresh_symmetric_uphill_always_accepted(self):
        target = gaussian_target([0.0, 0.0], ((1.0, 0.0), (0.0, 1.0)))
        prop = GaussianRandomWalkProposal(0.5)
        x_s = (1.0, 1.0)
        st = ServerState(TaggedState(x_s, target.log_unnorm(x_s)))
        rng = np.random.default_rng(0)
        for _ in range(100):
            y = (float(rng.uniform(-0.9, 0.9)), float(rng.uniform(-0.9, 0.9)))
            assert target.log_unnorm(y) >= target.log_unnorm(x_s)
            msg = make_message(target, prop, x_s, y)
            _, accepted, _ = server_receive(
                st, msg, target, {prop.proposal_id: prop}, np.random.default_rng(1)
            )
            assert accepted

    def test_zero_density_proposal_always_rejected(self):
        target = finite_target([1.0, 2.0, 0.0])
        prop = TableIndependenceProposal(target.support, [1.0, 1.0, 1.0])
        st = ServerState(TaggedState(0, target.log_unnorm(0)))
        msg = make_message(target, prop, 0, 2)
        for seed in range(50):
            new, accepted, lr = server_receive(
                st, msg, target, {prop.proposal_id: prop}, np.random.default_rng(seed)
            )
            assert not accepted
            assert lr == float("-inf")
            assert new.tagged.value == 0
            assert new.version == st.version + 1

    def test_rejection_increments_version_not_commits(self):
        target = three_state()
        prop = TableIndependenceProposal(target.support, [1.0, 0.001, 0.001])
        st = ServerState(TaggedState(2, target.log_unnorm(2)), version=5, commit_count=3)
        msg = make_message(target, prop, 2, 0)
        new, accepted, _ = server_receive(
            st, msg, target, {prop.proposal_id: prop}, np.random.default_rng(42)
        )
        assert new.version == 6
        assert new.commit_count == (4 if accepted else 3)

    def test_unregistered_proposal_raises(self):
        target = three_state()
        prop = UniformIndependenceProposal(target.support)
        st = ServerState(TaggedState(0, target.log_unnorm(0)))
        with pytest.raises(ProtocolError):
            server_receive(st, make_message(target, prop, 0, 1), target, {}, np.random.default_rng(0))

    def test_nan_arithmetic_raises(self):
        target = three_state()
        prop = UniformIndependenceProposal(target.support)
        st = ServerState(TaggedState(0, target.log_unnorm(0)))
        msg = ServerMessage(0, 0, 0, 1, float("nan"), prop.logpdf(1, 0, {}), prop.proposal_id, {})
        with pytest.raises(NumericError):
            server_receive(st, msg, target, {prop.proposal_id: prop}, np.random.default_rng(0))

    def test_debug_revalidation_catches_corruption(self):
        target = three_state()
        prop = UniformIndependenceProposal(target.support)
        st = ServerState(TaggedState(0, target.log_unnorm(0)))
        msg = ServerMessage(0, 0, 0, 1, -99.0, prop.logpdf(1, 0, {}), prop.proposal_id, {})
        with pytest.raises(ValidationError):
            server_receive(
                st, msg, target, {prop.proposal_id: prop}, np.random.default_rng(0),
                debug_revalidate=True,
            )

    def test_one_uniform_in_both_modes(self):
        target = three_state()
        prop = UniformIndependenceProposal(target.support)
        st = ServerState(TaggedState(0, target.log_unnorm(0)))
        msg = make_message(target, prop, 0, 1)
        for mode in ("mh_corrected", "naive_accept"):
            rng = np.random.default_rng(7)
            server_receive(st, msg, target, {prop.proposal_id: prop}, rng, mode=mode)
            follow = np.random.default_rng(7)
            follow.random()
            assert rng.random() == follow.random()


class TestZeroDelay:
    def test_single_worker_matches_mh_step(self):
        spec = mh_uniform()
        record = run_pserver(spec, m=1, horizon=400, delay=zero_delay(), mode="mh_corrected", seed=21)
        rng = worker_streams(21, 1)[0]
        x = default_init(spec.target)
        expected = []
        for _ in range(400):
            x = mh_step(spec, x, rng).state
            expected.append(x)
        assert record.state_labels() == expected

    def test_server_kernel_detailed_balance(self):
        target = three_state()
        srv = render_server_kernel(target, UniformIndependenceProposal(target.support))
        pi = target_distribution(target).to_float().probs
        worst = max(
            abs(pi[i] * srv.rows[i][j] - pi[j] * srv.rows[j][i])
            for i in range(3)
            for j in range(3)
        )
        assert worst <= 1e-10

    def test_empirical_distribution_near_target(self):
        spec = mh_uniform()
        record = run_pserver(spec, m=1, horizon=100_000, delay=zero_delay(), mode="mh_corrected", seed=5)
        pi = target_distribution(spec.target).to_float().probs
        late = record.late_states(0.2)
        emp = np.bincount(late, minlength=3) / len(late)
        assert 0.5 * np.abs(emp - pi).sum() <= 0.02

    def test_stale_proposals_still_target_pi(self):
        # correction repairs staleness: reordered delivery on a finite target
        spec = mh_uniform()
        delay = DelayModel("reorder_random", {"span": 10}, staleness_cap=64)
        record = run_pserver(spec, m=4, horizon=200_000, delay=delay, mode="mh_corrected", seed=14)
        staleness = np.arange(200_000) - (record.read_versions - 1)
        assert staleness.max() > 1  # messages really did arrive stale
        pi = target_distribution(spec.target).to_float().probs
        late = record.late_states(0.2)
        emp = np.bincount(late, minlength=3) / len(late)
        assert 0.5 * np.abs(emp - pi).sum() <= 0.02

    def test_server_version_invariant_enforced(self):
        target = three_state()
        prop = UniformIndependenceProposal(target.support)
        st = ServerState(TaggedState(0, target.log_unnorm(0)), version=2)
        msg = ServerMessage(0, 5, 0, 1, target.log_unnorm(1), prop.logpdf(1, 0, {}),
                            prop.proposal_id, {})
        with pytest.raises(ProtocolError):
            server_receive(st, msg, target, {prop.proposal_id: prop}, np.random.default_rng(0))


class TestRunPServer:
    def test_trace_validates_and_conserves_messages(self):
        spec = mh_uniform()
        delay = DelayModel("fifo_random", {"mean": 2.0}, staleness_cap=64)
        record = run_pserver(spec, m=4, horizon=4000, delay=delay, mode="mh_corrected", seed=5)
        assert validate(record.trace) is None
        cfg = record.config
        assert cfg["messages_sent"] == 4000 + cfg["resends"] + cfg["pending_at_exit"]
        assert record.accepted.sum() + (~record.accepted).sum() == 4000

    def test_staleness_cap_respected_in_trace(self):
        spec = mh_uniform()
        delay = DelayModel("reorder_random", {"span": 6}, staleness_cap=5)
        record = run_pserver(spec, m=3, horizon=3000, delay=delay, mode="mh_corrected", seed=8)
        staleness = np.arange(3000) - (record.read_versions - 1)
        assert staleness.max() <= 5 + 1  # read at version v is event v-1; cap counts versions

    def test_deterministic_given_seed(self):
        spec = mh_uniform()
        delay = DelayModel("reorder_random", {"span": 4}, staleness_cap=64)
        a = run_pserver(spec, m=3, horizon=2000, delay=delay, mode="mh_corrected", seed=13)
        b = run_pserver(spec, m=3, horizon=2000, delay=delay, mode="mh_corrected", seed=13)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.accepted, b.accepted)

    def test_backpressure_deadlock_raises_liveness(self):
        spec = mh_uniform()
        delay = DelayModel("fifo_fixed", {"latency": 1.0, "jitter": 0.0}, staleness_cap=0)
        with pytest.raises(LivenessError):
            run_pserver(spec, m=3, horizon=1000, delay=delay, mode="mh_corrected", seed=2, max_resends=50)

    def test_mode_validation(self):
        with pytest.raises(ParameterError):
            run_pserver(mh_uniform(), 1, 10, zero_delay(), "bogus", 1)
        with pytest.raises(ParameterError):
            DelayModel("warp", {}, 1)

    def test_systematic_kernel_unsupported(self):
        target = gaussian_target([0.0, 0.0], GaussianTarget.bivariate_correlated(0.2).precision)
        spec = KernelSpec("systematic_gibbs", target)
        with pytest.raises(UnsupportedTargetError):
            run_pserver(spec, 1, 10, zero_delay(), "mh_corrected", 1)

    def test_naive_and_corrected_share_message_schedule(self):
        target = gaussian_target([0.0, 0.0], GaussianTarget.bivariate_correlated(0.9).precision)
        spec = KernelSpec("gibbs_single_site", target)
        delay = DelayModel(
            "fifo_fixed", {"latency": 0.0, "periods": [1.0, 2.0], "jitter": 0.5}, staleness_cap=10**9
        )
        runs = {
            mode: run_pserver(spec, m=2, horizon=2000, delay=delay, mode=mode, seed=3,
                              init=(2.0, -2.0), frozen_workers=(0,))
            for mode in ("mh_corrected", "naive_accept")
        }
        # same delivery order and same read bookkeeping for the frozen worker
        a, b = runs["mh_corrected"], runs["naive_accept"]
        assert np.array_equal(a.workers, b.workers)
        frozen_a = a.read_versions[a.workers == 0]
        frozen_b = b.read_versions[b.workers == 0]
        assert np.array_equal(frozen_a, frozen_b)
        assert frozen_a.max() == 0  # frozen worker never refreshes its read


class TestCoupled:
    def test_embed_m1_returns_original(self):
        t = three_state()
        assert coupled_embed(t, 1) is t

    def test_embed_product_weights(self):
        t = three_state()
        coupled = coupled_embed(t, 2)
        assert coupled.support.size == 9
        assert math.exp(coupled.log_unnorm((1, 2))) == pytest.approx(2.0 * 3.0)
        assert coupled.dim == 2

    def test_replica_marginals_near_target(self):
        spec = mh_uniform()
        delay = DelayModel("fifo_random", {"mean": 2.0}, staleness_cap=64)
        record = run_pserver(spec, m=2, horizon=150_000, delay=delay, mode="mh_corrected",
                             seed=6, coupled=True)
        pi = target_distribution(spec.target).to_float().probs
        for slot in range(2):
            idx = replica_marginal_indices(record, slot, spec.target)
            late = idx[len(idx) // 5:]
            emp = np.bincount(late, minlength=3) / len(late)
            assert 0.5 * np.abs(emp - pi).sum() <= 0.02

    def test_replicas_decorrelate_under_independent_proposals(self):
        spec = mh_uniform()
        delay = DelayModel("fifo_random", {"mean": 2.0}, staleness_cap=64)
        record = run_pserver(spec, m=2, horizon=150_000, delay=delay, mode="mh_corrected",
                             seed=9, coupled=True)
        a = replica_marginal_indices(record, 0, spec.target)[30_000:]
        b = replica_marginal_indices(record, 1, spec.target)[30_000:]
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) <= 0.02


class TestExports:
    def test_trace_jsonl_has_accept_flags(self):
        record = run_pserver(mh_uniform(), 1, 50, zero_delay(), "mh_corrected", 3)
        lines = pserver_trace_jsonl(record).strip().splitlines()
        assert len(lines) == 51
        assert '"accepted":' in lines[1]
        assert '"kind": "server_commit"' in lines[1] or '"kind":"server_commit"' in lines[1].replace(" ", "")

    def test_messages_csv_columns(self):
        record = run_pserver(mh_uniform(), 1, 20, zero_delay(), "mh_corrected", 3)
        lines = messages_csv(record).strip().splitlines()
        assert lines[0] == "seq,worker,read_version,accepted,log_ratio"
        assert len(lines) == 21
