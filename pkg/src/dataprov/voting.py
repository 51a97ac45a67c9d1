"""Vote contract: deposit-backed change submission, majority and randomized
threshold voting, sortition checks, restarts and settlement."""
from __future__ import annotations

import enum
import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .chain import BlockHeader, DistributeTo, Ledger, Refund, Topic, Transfer, Withhold
from .errors import (
    AlreadySettled,
    AlreadyVoted,
    BadSignature,
    ChainBreak,
    DegenerateParams,
    NotAuthorized,
    NotSelected,
    ReplayRejected,
    SessionClosed,
    SessionPending,
    WindowOpen,
)
from .tracker import ChangeEvent, DocumentTracker

VOTE_CONTRACT_ID = "VoteContract"

MAJORITY_MIN_USERS = 3
THRESHOLD_MIN_USERS = 5


class Mode(enum.IntEnum):
    AutoAccept = 0
    Majority = 1
    Threshold = 2


class Decision(enum.IntEnum):
    For = 1
    Against = 2


class State(enum.Enum):
    Open = "Open"
    Accepted = "Accepted"
    Rejected = "Rejected"
    QuorumFailed = "QuorumFailed"


class Outcome(enum.Enum):
    Accepted = "Accepted"
    Rejected = "Rejected"
    Restarted = "Restarted"
    QuorumFailed = "QuorumFailed"


class RejectReason(enum.IntEnum):
    Rejected = 1
    QuorumFailed = 2
    NotAuthorized = 3
    Replay = 4
    BadSignature = 5
    ChainBreak = 6


@dataclass(frozen=True)
class VotingParams:
    n: int
    s: int
    t: int
    t1: int = 3600
    max_restarts: int = 5

    def validate(self) -> "VotingParams":
        if not (0 < self.s < self.t <= self.n):
            raise DegenerateParams(f"need 0 < s < t <= n, got s={self.s} t={self.t} n={self.n}")
        if self.t1 <= 0 or self.max_restarts < 0:
            raise DegenerateParams("t1 must be positive and max_restarts non-negative")
        return self


@dataclass
class VotingConfig:
    """Contract-wide voting defaults; s and t scale with n unless pinned."""

    t1: int = 3600
    max_restarts: int = 5
    s: Optional[int] = None
    t: Optional[int] = None
    s_fraction: float = 0.60
    t_fraction: float = 0.72

    def params_for(self, n: int) -> VotingParams:
        if self.s is not None and self.t is not None and self.t <= n:
            s, t = self.s, self.t
        else:
            s = max(1, math.ceil(self.s_fraction * n - 1e-9))
            t = min(n, max(s + 1, math.ceil(self.t_fraction * n - 1e-9)))
            s = min(s, t - 1)
        return VotingParams(n, s, t, self.t1, self.max_restarts)


def select_mode(n: int) -> Mode:
    if n < MAJORITY_MIN_USERS:
        return Mode.AutoAccept
    if n < THRESHOLD_MIN_USERS:
        return Mode.Majority
    return Mode.Threshold


@dataclass(frozen=True)
class SelectionSeed:
    bno: int
    etxt: bytes
    diff: int
    glim: int
    addr: bytes

    def encode(self) -> bytes:
        return (
            struct.pack(">Q", self.bno)
            + self.etxt
            + struct.pack(">QQ", self.diff, self.glim)
            + self.addr
        )


def selection_value(seed: SelectionSeed, n: int) -> int:
    """Ks = H(bno || etxt || diff || glim || addr) mod n, big-endian."""
    if n < 1:
        raise DegenerateParams("selection needs n >= 1")
    return int.from_bytes(hashlib.sha256(seed.encode()).digest(), "big") % n


def is_eligible(seed: SelectionSeed, params: VotingParams) -> bool:
    return selection_value(seed, params.n) < params.t


@dataclass(frozen=True)
class ChangeSubmission:
    event: ChangeEvent
    deposit: int
    ts: int
    submitted_at: int = 0

    def encode(self, session_id: int) -> bytes:
        return struct.pack(">QQQ", session_id, self.ts, self.deposit) + self.event.encode()

    @classmethod
    def decode(cls, raw: bytes):
        session_id, ts, deposit = struct.unpack(">QQQ", raw[:24])
        return session_id, cls(ChangeEvent.decode(raw[24:]), deposit, ts)


@dataclass
class RoundSummary:
    round: int
    opened_at: int
    bno: int
    votes_for: int
    votes_against: int
    voters: List[bytes]


@dataclass
class VoteSession:
    session_id: int
    submission: ChangeSubmission
    mode: Mode
    params: VotingParams
    opened_at: int
    round_header: BlockHeader
    votes: Dict[bytes, Decision] = field(default_factory=dict)
    restart_count: int = 0
    state: State = State.Open
    rounds: List[RoundSummary] = field(default_factory=list)
    settled: bool = False
    disposition: Optional[str] = None

    @property
    def docid(self) -> int:
        return self.submission.event.docid

    @property
    def initiator(self) -> bytes:
        return self.submission.event.agent

    @property
    def closes_at(self) -> int:
        return self.opened_at + self.params.t1

    def tally(self):
        votes_for = sum(1 for d in self.votes.values() if d is Decision.For)
        return votes_for, len(self.votes) - votes_for


@dataclass(frozen=True)
class RoundInfo:
    """Decoded VoteOpened / VoteRestarted payload."""

    session_id: int
    docid: int
    mode: Mode
    n: int
    s: int
    t: int
    t1: int
    opened_at: int
    round: int
    bno: int
    diff: int
    glim: int

    _FMT = ">QQBIIIQQHQQQ"

    def encode(self) -> bytes:
        return struct.pack(
            self._FMT, self.session_id, self.docid, int(self.mode), self.n, self.s, self.t,
            self.t1, self.opened_at, self.round, self.bno, self.diff, self.glim,
        )

    @classmethod
    def decode(cls, raw: bytes) -> "RoundInfo":
        vals = list(struct.unpack(cls._FMT, raw))
        vals[2] = Mode(vals[2])
        return cls(*vals)

    def params(self) -> VotingParams:
        return VotingParams(self.n, self.s, self.t, self.t1)


@dataclass(frozen=True)
class VoteCastInfo:
    session_id: int
    round: int
    voter: bytes
    decision: Decision

    def encode(self):
        return struct.pack(">QH", self.session_id, self.round) + self.voter + bytes([self.decision])

    @classmethod
    def decode(cls, raw):
        sid, rnd = struct.unpack(">QH", raw[:10])
        return cls(sid, rnd, raw[10:30], Decision(raw[30]))


def encode_rejection(session_id: int, docid: int, reason: RejectReason) -> bytes:
    return struct.pack(">QQB", session_id, docid, int(reason))


def decode_rejection(raw: bytes):
    sid, docid, reason = struct.unpack(">QQB", raw)
    return sid, docid, RejectReason(reason)


@dataclass
class RejectedAttempt:
    session_id: int
    caller: bytes
    docid: int
    reason: RejectReason
    disposition: str


class VoteContract:
    def __init__(
        self,
        ledger: Ledger,
        tracker: DocumentTracker,
        config: Optional[VotingConfig] = None,
        contract_id: str = VOTE_CONTRACT_ID,
    ):
        self.ledger = ledger
        self.tracker = tracker
        self.config = config or VotingConfig()
        self.contract_id = contract_id
        tracker.register_vote_contract(contract_id)
        self.sessions: Dict[int, VoteSession] = {}
        self.open_by_doc: Dict[int, int] = {}
        self.attempts: List[RejectedAttempt] = []
        self._next_sid = 1

    # -- views ---------------------------------------------------------
    def get_session(self, session_id: int) -> VoteSession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise SessionClosed(f"no session {session_id}") from None

    def seed_for(self, session: VoteSession, voter: bytes) -> SelectionSeed:
        h = session.round_header
        return SelectionSeed(h.number, session.submission.event.ciphertext.bytes, h.difficulty, h.gas_limit, voter)

    def round_info(self, session: VoteSession) -> RoundInfo:
        p, h = session.params, session.round_header
        threshold = session.mode is Mode.Threshold
        return RoundInfo(
            session.session_id, session.docid, session.mode, p.n,
            p.s if threshold else 0, p.t if threshold else 0, p.t1, session.opened_at,
            session.restart_count, h.number, h.difficulty, h.gas_limit,
        )

    # -- submission ----------------------------------------------------
    def _reject_attempt(self, sid, caller, docid, reason, withhold: bool):
        self.ledger.settle_escrow(sid, Withhold() if withhold else Refund())
        self.attempts.append(
            RejectedAttempt(sid, caller, docid, reason, "Withheld" if withhold else "Refunded")
        )
        self.ledger.emit_event(self.contract_id, Topic.ChangeRejected, encode_rejection(sid, docid, reason))

    def initiate_change(self, caller: bytes, submission: ChangeSubmission) -> VoteSession:
        event = submission.event
        docid = event.docid
        rec = self.tracker._doc(docid)
        if docid in self.open_by_doc:
            raise SessionPending(f"document {docid} already has session {self.open_by_doc[docid]}")
        if submission.deposit <= 0:
            raise ValueError("deposit must be positive")
        self.ledger.require_funds(
            caller, self.ledger.gas_schedule.cost("InitiateChange") + submission.deposit
        )
        sid = self._next_sid
        self._next_sid += 1
        self.ledger.charge_gas(caller, "InitiateChange")
        self.ledger.escrow_deposit(caller, sid, submission.deposit)

        if submission.ts <= rec.latest_ts:
            self._reject_attempt(sid, caller, docid, RejectReason.Replay, withhold=False)
            raise ReplayRejected(f"timestamp {submission.ts} not after latest {rec.latest_ts}")
        if caller != event.agent or event.opm.agent != event.agent or not self.tracker.has_access(docid, caller):
            self._reject_attempt(sid, caller, docid, RejectReason.NotAuthorized, withhold=True)
            raise NotAuthorized("caller has no access to this document")
        if not self.tracker.check_signature(event):
            self._reject_attempt(sid, caller, docid, RejectReason.BadSignature, withhold=True)
            raise BadSignature("change signature does not verify")
        if event.opm.artifact_before != rec.head_hash:
            self._reject_attempt(sid, caller, docid, RejectReason.ChainBreak, withhold=False)
            raise ChainBreak("change does not extend the current head of the trail")

        n = self.tracker.user_count(docid)
        mode = select_mode(n)
        params = self.config.params_for(n) if n >= THRESHOLD_MIN_USERS else VotingParams(
            n, 0, n, self.config.t1, self.config.max_restarts
        )
        if mode is Mode.Threshold:
            params.validate()
        submission = ChangeSubmission(event, submission.deposit, submission.ts, self.ledger.head.number)
        session = VoteSession(sid, submission, mode, params, self.ledger.now, self.ledger.head)
        self.sessions[sid] = session
        self.ledger.emit_event(self.contract_id, Topic.ChangeProposed, submission.encode(sid))

        if mode is Mode.AutoAccept:
            session.rounds.append(RoundSummary(0, session.opened_at, session.round_header.number, 0, 0, []))
            self._settle(session, Outcome.Accepted, caller)
            return session
        self.open_by_doc[docid] = sid
        self.ledger.emit_event(self.contract_id, Topic.VoteOpened, self.round_info(session).encode())
        return session

    # -- voting --------------------------------------------------------
    def cast_vote(self, voter: bytes, session_id: int, decision: Decision) -> None:
        session = self.get_session(session_id)
        if session.state is not State.Open:
            raise SessionClosed(f"session {session_id} is {session.state.value}")
        now = self.ledger.now
        if not (session.opened_at <= now < session.closes_at):
            raise SessionClosed(f"voting window for session {session_id} has ended")
        if not self.tracker.has_access(session.docid, voter):
            raise NotAuthorized("voter has no access to this document")
        if voter in session.votes:
            raise AlreadyVoted(f"already voted in round {session.restart_count}")
        if session.mode is Mode.Threshold:
            if not is_eligible(self.seed_for(session, voter), session.params):
                self.ledger.charge_gas(voter, "RejectedVote")
                raise NotSelected("voter was not selected for this round")
        self.ledger.charge_gas(voter, "Vote")
        session.votes[voter] = Decision(decision)
        self.ledger.emit_event(
            self.contract_id, Topic.VoteCast,
            VoteCastInfo(session_id, session.restart_count, voter, Decision(decision)).encode(),
        )

    def close_session(self, session_id: int, caller: Optional[bytes] = None) -> Outcome:
        session = self.get_session(session_id)
        if session.state is not State.Open:
            raise SessionClosed(f"session {session_id} is {session.state.value}")
        if self.ledger.now < session.closes_at:
            raise WindowOpen(f"session {session_id} closes at {session.closes_at}")
        caller = caller or session.initiator
        votes_for, votes_against = session.tally()
        if session.mode is Mode.Threshold and votes_for + votes_against < session.params.s:
            if session.restart_count < session.params.max_restarts:
                self._restart(session, caller)
                return Outcome.Restarted
            outcome = Outcome.QuorumFailed
        else:
            # ties accept: rejection needs a strict majority against
            outcome = Outcome.Rejected if votes_against > votes_for else Outcome.Accepted
        self._settle(session, outcome, caller)
        return outcome

    def _summarize_round(self, session):
        f, a = session.tally()
        session.rounds.append(
            RoundSummary(session.restart_count, session.opened_at, session.round_header.number, f, a, list(session.votes))
        )

    def _restart(self, session: VoteSession, caller: bytes) -> None:
        self.ledger.charge_gas(caller, "RestartVote")
        self._summarize_round(session)
        session.restart_count += 1
        session.votes = {}
        session.opened_at = self.ledger.now
        session.round_header = self.ledger.head
        self.ledger.emit_event(self.contract_id, Topic.VoteRestarted, self.round_info(session).encode())

    # -- settlement ----------------------------------------------------
    def settle(self, session_id: int, outcome: Outcome, caller: Optional[bytes] = None) -> List[Transfer]:
        session = self.get_session(session_id)
        if session.settled:
            raise AlreadySettled(f"session {session_id} already settled")
        if outcome is Outcome.Restarted:
            raise ValueError("Restarted is not a terminal outcome")
        return self._settle(session, outcome, caller or session.initiator)

    def _settle(self, session: VoteSession, outcome: Outcome, caller: bytes) -> List[Transfer]:
        if session.settled:
            raise AlreadySettled(f"session {session.session_id} already settled")
        sid = session.session_id
        if outcome is Outcome.Accepted:
            self.tracker.record_change(self.contract_id, session.submission.event, session.submission.ts)
            transfers = self.ledger.settle_escrow(sid, Refund())
            session.state, session.disposition = State.Accepted, "Refunded"
        else:
            self.ledger.charge_gas(caller, "Terminate")
            if outcome is Outcome.Rejected:
                counted = list(session.votes)
                transfers = self.ledger.settle_escrow(sid, DistributeTo(counted))
                session.state = State.Rejected
                session.disposition = "Distributed" if counted else "Withheld"
                reason = RejectReason.Rejected
            elif outcome is Outcome.QuorumFailed:
                transfers = self.ledger.settle_escrow(sid, Refund())
                session.state, session.disposition = State.QuorumFailed, "Refunded"
                reason = RejectReason.QuorumFailed
            else:
                raise ValueError(f"not a terminal outcome: {outcome}")
            self.ledger.emit_event(self.contract_id, Topic.ChangeRejected, encode_rejection(sid, session.docid, reason))
        if session.mode is not Mode.AutoAccept:
            self._summarize_round(session)
        session.settled = True
        self.open_by_doc.pop(session.docid, None)
        return transfers

    def check_invariants(self) -> None:
        from .errors import InvariantViolation

        open_docs = [s.docid for s in self.sessions.values() if s.state is State.Open]
        if len(open_docs) != len(set(open_docs)):
            raise InvariantViolation("two open sessions share a document")
        for s in self.sessions.values():
            if s.settled == (s.state is State.Open):
                raise InvariantViolation(f"session {s.session_id} settlement/state mismatch")
            if s.restart_count > s.params.max_restarts:
                raise InvariantViolation(f"session {s.session_id} exceeded max restarts")
