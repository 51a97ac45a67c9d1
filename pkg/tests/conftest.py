from __future__ import annotations

import pytest

from dataprov.chain import Ledger
from dataprov.crypto import TestCrypto
from dataprov.tracker import ChangeBody, ChangeEvent, DocumentTracker, OpmTriple
from dataprov.voting import ChangeSubmission, VoteContract, VotingConfig

FUNDS = 10**12


class Net:
    """Ledger + both contracts + n funded users sharing one document."""

    def __init__(self, n=5, voting=None, with_doc=True):
        self.crypto = TestCrypto()
        self.ledger = Ledger()
        self.tracker = DocumentTracker(self.ledger, self.crypto)
        self.vote = VoteContract(self.ledger, self.tracker, voting or VotingConfig())
        self.users = [self.crypto.keypair_from_seed(self.crypto.hash(b"user-%d" % i).bytes) for i in range(n)]
        for u in self.users:
            self.ledger.register_key(u.address, u.public_key)
            self.ledger.fund(u.address, FUNDS)
        self.doc_key = self.crypto.keypair_from_seed(b"d" * 32)
        self.head = self.crypto.hash(b"v0")
        self.version = 0
        self.docid = None
        if with_doc:
            self.docid = self.tracker.add_document(self.owner.address, self.head, b"store://1/1")
            for u in self.users[1:]:
                self.tracker.grant_access(self.owner.address, self.docid, u.address)
            self.ledger.advance_block(15)

    @property
    def owner(self):
        return self.users[0]

    def event(self, who, prev=None, new=None, ts=None, docid=None):
        docid = docid or self.docid
        prev = prev or self.head
        new = new or self.crypto.hash(b"v%d" % (self.version + 1))
        ts = self.ledger.now if ts is None else ts
        body = ChangeBody(docid, prev, new, b"store://1/2", ts)
        ct = self.crypto.encrypt(self.doc_key.public_key, body.encode())
        sig = self.crypto.sign(who, ct.bytes)
        return ChangeEvent(docid, who.address, ct, OpmTriple(who.address, prev, new, "update"), sig), ts

    def submit(self, who, deposit=1000, **kw):
        ev, ts = self.event(who, **kw)
        return self.vote.initiate_change(who.address, ChangeSubmission(ev, deposit, ts))

    def eligible(self, session):
        return [u for u in self.users if _ks(self, session, u) < session.params.t]

    def ineligible(self, session):
        return [u for u in self.users if _ks(self, session, u) >= session.params.t]


def _ks(net, session, user):
    from dataprov.voting import selection_value

    return selection_value(net.vote.seed_for(session, user.address), session.params.n)


@pytest.fixture
def net():
    return Net()


@pytest.fixture
def make_net():
    return Net


# acceptance verdicts, echoed in the terminal summary so `pytest -v` output carries them
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
