import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from dataprov.chain import TREASURY, EscrowState
from dataprov.errors import (
    AlreadyVoted, BadSignature, ChainBreak, DegenerateParams, NotAuthorized, NotSelected,
    ReplayRejected, SessionClosed, SessionPending, WindowOpen,
)
from dataprov.voting import (
    ChangeSubmission, Decision, Mode, Outcome, RejectReason, RoundInfo, SelectionSeed, State,
    VotingConfig, VotingParams, is_eligible, select_mode, selection_value,
)

from conftest import Net


def _seed(rng, addr=None):
    return SelectionSeed(rng.randrange(2**40), rng.randbytes(48), rng.randrange(2**32), rng.randrange(2**32),
                         addr or rng.randbytes(20))


def test_mode_by_user_count():
    assert [select_mode(n) for n in (1, 2, 3, 4, 5, 100)] == [
        Mode.AutoAccept, Mode.AutoAccept, Mode.Majority, Mode.Majority, Mode.Threshold, Mode.Threshold]


def test_params_scale_with_n():
    cfg = VotingConfig()
    assert (cfg.params_for(100).s, cfg.params_for(100).t) == (60, 72)
    assert (cfg.params_for(5).s, cfg.params_for(5).t) == (3, 4)
    with pytest.raises(DegenerateParams):
        VotingParams(10, 5, 5).validate()


def test_selection_value_basics():
    rng = random.Random(1)
    seed = _seed(rng)
    assert selection_value(seed, 1) == 0
    assert selection_value(seed, 100) == selection_value(seed, 100)
    with pytest.raises(DegenerateParams):
        selection_value(seed, 0)


def test_selection_is_uniform():
    from scipy.stats import chisquare

    rng = random.Random(2)
    counts = [0] * 100
    for _ in range(100_000):
        counts[selection_value(_seed(rng), 100)] += 1
    assert chisquare(counts).pvalue > 0.001


def test_eligibility():
    from scipy.stats import binomtest

    rng = random.Random(3)
    params_full = VotingParams(100, 60, 100)
    assert all(is_eligible(_seed(rng), params_full) for _ in range(200))
    half = VotingParams(100, 40, 50)
    hits = sum(is_eligible(_seed(rng), half) for _ in range(10_000))
    assert binomtest(hits, 10_000, 0.5).pvalue > 0.001
    # Ks == t is on the wrong side of a strict inequality
    while True:
        seed = _seed(rng)
        if selection_value(seed, 100) == 50:
            break
    assert not is_eligible(seed, half)
    assert is_eligible(seed, VotingParams(100, 40, 51))


def test_threshold_session_opens_with_table_gas():
    net = Net(100)
    s = net.submit(net.users[1])
    assert s.mode is Mode.Threshold and (s.params.s, s.params.t) == (60, 72)
    assert net.ledger.gas_tally["InitiateChange"] == [1, 731352]
    info = RoundInfo.decode(net.ledger.events[-1].payload)
    assert (info.session_id, info.n, info.s, info.t, info.round) == (s.session_id, 100, 60, 72, 0)
    with pytest.raises(SessionPending):
        net.submit(net.users[2])


def test_external_adversary_loses_deposit():
    net = Net(5)
    outsider = net.crypto.keypair_from_seed(b"o" * 32)
    net.ledger.register_key(outsider.address, outsider.public_key)
    net.ledger.fund(outsider.address, 10**9)
    with pytest.raises(NotAuthorized):
        net.submit(outsider)
    (attempt,) = net.vote.attempts
    assert attempt.reason is RejectReason.NotAuthorized and attempt.disposition == "Withheld"
    assert net.ledger.treasury == 1000
    net.ledger.check_conservation()


def test_owner_only_document_auto_accepts():
    net = Net(1)
    s = net.submit(net.owner)
    assert s.mode is Mode.AutoAccept and s.state is State.Accepted
    assert len(net.tracker.get_trail(net.docid)) == 2
    assert "Vote" not in net.ledger.gas_tally


def test_replay_bad_signature_chain_break():
    net = Net(5)
    s = net.submit(net.users[1])
    for u in net.users[2:]:
        net.vote.cast_vote(u.address, s.session_id, Decision.For)
    net.ledger.advance_block(3600)
    assert net.vote.close_session(s.session_id) is Outcome.Accepted
    net.head = s.submission.event.opm.artifact_after
    net.version += 1

    with pytest.raises(ReplayRejected):
        net.vote.initiate_change(net.users[1].address, s.submission)
    net.ledger.advance_block(15)
    ev, ts = net.event(net.users[2])
    tampered = type(ev)(ev.docid, ev.agent, ev.ciphertext, ev.opm, net.crypto.sign(net.users[3], b"other"))
    with pytest.raises(BadSignature):
        net.vote.initiate_change(net.users[2].address, ChangeSubmission(tampered, 1000, ts))
    with pytest.raises(ChainBreak):
        net.submit(net.users[2], prev=net.crypto.hash(b"stale"))
    reasons = [(a.reason, a.disposition) for a in net.vote.attempts]
    assert reasons == [
        (RejectReason.Replay, "Refunded"), (RejectReason.BadSignature, "Withheld"), (RejectReason.ChainBreak, "Refunded"),
    ]
    net.ledger.check_conservation()


def test_cast_vote_rules():
    net = Net(100)
    s = net.submit(net.users[1])
    good = net.eligible(s)[0]
    bad = net.ineligible(s)[0]
    net.vote.cast_vote(good.address, s.session_id, Decision.For)
    assert net.ledger.gas_tally["Vote"] == [1, 89176]
    with pytest.raises(AlreadyVoted):
        net.vote.cast_vote(good.address, s.session_id, Decision.Against)
    tally = s.tally()
    with pytest.raises(NotSelected):
        net.vote.cast_vote(bad.address, s.session_id, Decision.Against)
    assert s.tally() == tally
    assert net.ledger.gas_tally["RejectedVote"] == [1, 22294]
    stranger = net.crypto.keypair_from_seed(b"s" * 32)
    with pytest.raises(NotAuthorized):
        net.vote.cast_vote(stranger.address, s.session_id, Decision.For)
    with pytest.raises(WindowOpen):
        net.vote.close_session(s.session_id)
    net.ledger.advance_block(3600)
    with pytest.raises(SessionClosed):
        net.vote.cast_vote(net.eligible(s)[1].address, s.session_id, Decision.For)


def test_threshold_accept_and_restart():
    net = Net(100)
    s = net.submit(net.users[1])
    voters = net.eligible(s)
    assert len(voters) >= 60
    for i, u in enumerate(voters[:72]):
        net.vote.cast_vote(u.address, s.session_id, Decision.For if i < 50 else Decision.Against)
    net.ledger.advance_block(3600)
    assert net.vote.close_session(s.session_id) is Outcome.Accepted

    net.head = s.submission.event.opm.artifact_after
    net.version += 1
    net.ledger.advance_block(15)
    s2 = net.submit(net.users[2])
    for u in net.eligible(s2)[:40]:
        net.vote.cast_vote(u.address, s2.session_id, Decision.For)
    net.ledger.advance_block(3600)
    assert net.vote.close_session(s2.session_id, caller=net.users[5].address) is Outcome.Restarted
    assert s2.restart_count == 1 and s2.votes == {} and s2.state is State.Open
    assert net.ledger.gas_tally["RestartVote"] == [1, 731352]
    assert net.ledger.events[-1].payload == net.vote.round_info(s2).encode()


@pytest.mark.parametrize("pattern", list(itertools.product([Decision.For, Decision.Against], repeat=4)))
def test_majority_mode_all_patterns(pattern):
    net = Net(4)
    s = net.submit(net.users[1])
    assert s.mode is Mode.Majority
    for u, d in zip(net.users, pattern):
        net.vote.cast_vote(u.address, s.session_id, d)
    net.ledger.advance_block(3600)
    against = pattern.count(Decision.Against)
    expected = Outcome.Rejected if against > 4 - against else Outcome.Accepted
    assert net.vote.close_session(s.session_id) is expected
    net.ledger.check_conservation()


def test_rejection_splits_deposit():
    net = Net(10, VotingConfig(s=7, t=10))
    s = net.submit(net.users[1])
    voters = net.users[2:9]
    before = {u.address: net.ledger.balance(u.address) for u in voters}
    for u in voters:
        net.vote.cast_vote(u.address, s.session_id, Decision.Against)
    treasury = net.ledger.treasury
    net.ledger.advance_block(3600)
    assert net.vote.close_session(s.session_id) is Outcome.Rejected
    assert all(net.ledger.balance(u.address) - before[u.address] == 142 - 89176 for u in voters)
    assert net.ledger.treasury - treasury == 6
    assert net.ledger.escrow[s.session_id].state is EscrowState.Distributed
    assert len(net.tracker.get_trail(net.docid)) == 1


def test_quorum_failure_refunds():
    net = Net(10, VotingConfig(s=7, t=10, max_restarts=2))
    s = net.submit(net.users[1])
    bal = net.ledger.balance(net.users[1].address)
    outcomes = []
    for _ in range(3):
        net.ledger.advance_block(3600)
        outcomes.append(net.vote.close_session(s.session_id))
    assert outcomes == [Outcome.Restarted, Outcome.Restarted, Outcome.QuorumFailed]
    assert s.state is State.QuorumFailed
    assert net.ledger.balance(net.users[1].address) == bal + 1000 - 2 * 731352 - 249812
    assert len(net.tracker.get_trail(net.docid)) == 1
    net.vote.check_invariants()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from([None, Decision.For, Decision.Against]), min_size=8, max_size=8))
def test_settlement_conserves_currency(votes):
    net = Net(8, VotingConfig(s=3, t=8))
    s = net.submit(net.users[1])
    for u, d in zip(net.users, votes):
        if d is not None:
            net.vote.cast_vote(u.address, s.session_id, d)
    while not s.settled:
        net.ledger.advance_block(3600)
        net.vote.close_session(s.session_id)
        net.ledger.check_conservation()
    net.vote.check_invariants()
    assert net.ledger.held_escrow() == 0
    assert net.ledger.balances.get(TREASURY) is None
