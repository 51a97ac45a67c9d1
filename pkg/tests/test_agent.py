import random

import pytest

from dataprov import documents
from dataprov.agent import Action, AgentProfile, Behavior
from dataprov.errors import NotAuthorized, NotSelected, ReplayRejected
from dataprov.scenario import BehaviorRule, DocumentConfig, ExternalAgent, ScenarioConfig, Simulation
from dataprov.voting import Mode, Outcome, State, VotingConfig


def make_sim(n=20, behaviors=(), externals=(), patients=40, voting=None):
    cfg = ScenarioConfig(
        name="unit", rng_seed=3, agent_count=n, behaviors=list(behaviors), externals=list(externals),
        documents=[DocumentConfig("trial", 0, "patient_set_preservation", "drug_trial", {"patients": patients})],
        voting=voting or VotingConfig(s=10, t=16),
    ).validate()
    sim = Simulation(cfg)
    sim.setup()
    return sim


def test_honest_agents_vote_by_verdict():
    sim = make_sim()
    docid = sim.docids["trial"]
    a = sim.agents[1]
    good = documents.monthly_update(sim._doc_plaintext(docid), random.Random(0), month=1)
    session = a.submit_change_workflow(docid, good, "update")
    assert session.mode is Mode.Threshold
    assert [t.fire_at for t in a.timers] == [session.opened_at + 3600]
    sim.drain()
    assert session.state is State.Accepted
    assert set(session.rounds[-1].voters) <= {x.address for x in sim.agents[2:]} | {sim.agents[0].address}
    assert session.rounds[-1].votes_against == 0

    sim.ledger.advance_block(15)
    bad = documents.drop_patients(sim._doc_plaintext(docid), random.Random(0), count=1)
    s2 = sim.agents[2].submit_change_workflow(docid, bad, "cleanup")
    sim.drain()
    assert s2.state is State.Rejected and s2.rounds[-1].votes_for == 0
    assert sim.store.pending(docid) is None


def test_out_of_turn_voter_is_refused():
    sim = make_sim(behaviors=[BehaviorRule(list(range(16, 20)), Behavior.OutOfTurnVoter)],
                   voting=VotingConfig(s=6, t=12))
    docid = sim.docids["trial"]
    good = documents.monthly_update(sim._doc_plaintext(docid), random.Random(0), month=1)
    session = sim.agents[1].submit_change_workflow(docid, good, "update")
    sim.drain()
    refused = [line for a in sim.agents[16:] for line in a.trace if "NotSelected" in line]
    ineligible = [a for a in sim.agents[16:] if a.address not in session.rounds[-1].voters]
    assert refused and len(refused) == len(ineligible)
    assert session.state is State.Accepted


def test_replay_and_unauthorized():
    sim = make_sim(behaviors=[BehaviorRule([5], Behavior.ReplayAttacker)],
                   externals=[ExternalAgent("mallory")])
    docid = sim.docids["trial"]
    good = documents.monthly_update(sim._doc_plaintext(docid), random.Random(0), month=1)
    sim.agents[1].submit_change_workflow(docid, good, "update")
    sim.drain()
    attacker = sim.agents[5]
    assert len(attacker.captured) == 1
    sim.ledger.advance_block(15)
    with pytest.raises(ReplayRejected):
        attacker.replay_captured()
    mallory = sim.by_name["mallory"]
    before = sim.ledger.treasury
    with pytest.raises(NotAuthorized):
        mallory.submit_unauthorized(docid)
    assert sim.ledger.treasury - before == 1000
    assert [a.disposition for a in sim.vote.attempts] == ["Refunded", "Withheld"]


def test_timer_restarts_then_settles_once():
    sim = make_sim(n=20, behaviors=[BehaviorRule(list(range(2, 20)), Behavior.Absent, p_f=1.0)],
                   voting=VotingConfig(s=10, t=16, max_restarts=1))
    docid = sim.docids["trial"]
    a = sim.agents[1]
    good = documents.monthly_update(sim._doc_plaintext(docid), random.Random(0), month=1)
    session = a.submit_change_workflow(docid, good, "update")
    sim.drain(until=session.closes_at + 1)
    assert session.restart_count == 1 and len(a.timers) == 2
    sim.drain()
    assert session.state is State.QuorumFailed
    assert a.on_timer_fire(a.timers[-1]) is None
    sim.final_checks()


def test_on_event_returns_actions_only():
    sim = make_sim()
    docid = sim.docids["trial"]
    good = documents.monthly_update(sim._doc_plaintext(docid), random.Random(0), month=1)
    sim.agents[1].submit_change_workflow(docid, good, "update")
    queued = [entry[-1] for entry in sim._queue]
    assert all(isinstance(x, Action) for x in queued)
    assert "Vote" not in sim.ledger.gas_tally  # nothing cast from inside a callback


def test_profile_validates_probability():
    from dataprov.crypto import TestCrypto

    with pytest.raises(ValueError):
        AgentProfile(TestCrypto().keypair_from_seed(b"x" * 32), p_f=1.5)
