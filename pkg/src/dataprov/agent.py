"""Off-chain participant: event watcher, self-selection, verification,
automatic voting and the voting-window timer.

Agents never touch the chain from inside an event callback. ``on_event``
only returns the action the agent wants to take; the simulation driver
schedules it on the logical clock.
"""
from __future__ import annotations

import enum
import functools
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from .chain import EventRecord, Ledger, Topic
from .crypto import CryptoProfile, Digest, KeyPair
from .errors import AlreadySettled, DataProvError, DecryptError, MalformedPayload, NotFound, SessionClosed
from .storage import ConstraintPlugin, DocumentStore, StorageLocator, Verifier, Verdict
from .tracker import ChangeBody, ChangeEvent, DocumentTracker, OpmTriple
from .voting import (
    ChangeSubmission,
    Decision,
    Mode,
    Outcome,
    RoundInfo,
    SelectionSeed,
    VoteContract,
    VoteSession,
    decode_rejection,
    selection_value,
)


# every agent decodes the same payloads; decoding once per payload is enough
_decode_submission = functools.lru_cache(maxsize=256)(ChangeSubmission.decode)
_decode_round = functools.lru_cache(maxsize=256)(RoundInfo.decode)
_decode_change = functools.lru_cache(maxsize=256)(ChangeEvent.decode)


class Behavior(enum.Enum):
    Honest = "honest"
    VoteFlipper = "vote_flipper"
    OutOfTurnVoter = "out_of_turn_voter"
    ReplayAttacker = "replay_attacker"
    UnauthorizedSubmitter = "unauthorized_submitter"
    Absent = "absent"


@dataclass
class AgentProfile:
    keys: KeyPair
    behavior: Behavior = Behavior.Honest
    p_f: float = 0.0
    # docid -> document key pair (the private half is the shared decryption key)
    tracked_docs: Dict[int, KeyPair] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.p_f <= 1.0:
            raise ValueError(f"absence probability must lie in [0, 1], got {self.p_f}")

    @property
    def address(self) -> bytes:
        return self.keys.address


@dataclass(frozen=True)
class PendingTimer:
    session_id: int
    fire_at: int


@dataclass(frozen=True)
class Action:
    at: int
    kind: str
    run: Callable[[], object]


@dataclass
class Deployment:
    """Everything an agent talks to."""

    ledger: Ledger
    tracker: DocumentTracker
    vote: VoteContract
    store: DocumentStore
    verifier: Verifier
    crypto: CryptoProfile
    plugins: Dict[int, ConstraintPlugin] = field(default_factory=dict)
    deposit: int = 1000


class ClientAgent:
    def __init__(self, name: str, profile: AgentProfile, deployment: Deployment, rng: random.Random):
        self.name = name
        self.profile = profile
        self.dep = deployment
        self.rng = rng
        self.trace: List[str] = []
        self.timers: List[PendingTimer] = []
        self.scheduler: Optional[Callable[[Action], None]] = None
        self.verdicts: Dict[tuple, Verdict] = {}
        self._proposals: Dict[int, ChangeSubmission] = {}
        self._pending: Dict[int, tuple] = {}  # docid -> (session_id, locator, new_hash)
        self.captured: List[ChangeSubmission] = []

    @property
    def address(self) -> bytes:
        return self.profile.address

    @property
    def behavior(self) -> Behavior:
        return self.profile.behavior

    def log(self, msg: str) -> None:
        self.trace.append(f"t={self.dep.ledger.now} {self.name}: {msg}")

    # -- event watcher -------------------------------------------------
    def on_event(self, record: EventRecord) -> Optional[Action]:
        topic = record.topic
        if topic is Topic.ChangeProposed:
            sid, sub = _decode_submission(record.payload)
            self._proposals[sid] = sub
            if self.behavior is Behavior.ReplayAttacker:
                self.captured.append(sub)
        elif topic in (Topic.VoteOpened, Topic.VoteRestarted):
            return self._consider_vote(_decode_round(record.payload))
        elif topic is Topic.ChangeRecorded:
            self._on_recorded(_decode_change(record.payload))
        elif topic is Topic.ChangeRejected:
            sid, docid, _ = decode_rejection(record.payload)
            pend = self._pending.get(docid)
            if pend and pend[0] == sid:
                self.dep.store.mark_rejected(pend[1])
                del self._pending[docid]
        return None

    def _on_recorded(self, event: ChangeEvent) -> None:
        pend = self._pending.get(event.docid)
        if pend and event.agent == self.address and event.opm.artifact_after == pend[2]:
            self.dep.store.mark_stable(pend[1])
            del self._pending[event.docid]

    def _consider_vote(self, info: RoundInfo) -> Optional[Action]:
        doc_key = self.profile.tracked_docs.get(info.docid)
        sub = self._proposals.get(info.session_id)
        if doc_key is None or sub is None:
            return None
        if sub.event.agent == self.address:
            return None  # initiators do not vote on their own change
        if info.mode is Mode.Threshold:
            seed = SelectionSeed(info.bno, sub.event.ciphertext.bytes, info.diff, info.glim, self.address)
            selected = selection_value(seed, info.n) < info.t
            if not selected and self.behavior is not Behavior.OutOfTurnVoter:
                return None
        if self.behavior is Behavior.Absent and self.rng.random() < self.profile.p_f:
            self.log(f"absent for session {info.session_id} round {info.round}")
            return None
        verdict = self._verify(sub, doc_key)
        valid = verdict is not None and verdict.valid
        decision = Decision.For if valid else Decision.Against
        if self.behavior in (Behavior.VoteFlipper, Behavior.OutOfTurnVoter):
            decision = Decision.Against if valid else Decision.For
        delay = max(1, math.ceil(verdict.elapsed)) if verdict else 1
        sid = info.session_id
        return Action(self.dep.ledger.now + delay, "vote", lambda: self.cast(sid, decision))

    def _verify(self, sub: ChangeSubmission, doc_key: KeyPair) -> Optional[Verdict]:
        event = sub.event
        try:
            body = ChangeBody.decode(self.dep.crypto.decrypt(doc_key.private_key, event.ciphertext))
        except (DecryptError, MalformedPayload) as exc:
            self.log(f"cannot read change for doc {event.docid}: {exc}")
            return None
        if body.docid != event.docid or not self.dep.tracker.check_signature(event):
            self.log(f"change for doc {event.docid} fails signature/docid check")
            return None
        try:
            prev = self.dep.store.latest_stable(event.docid)
            cand = StorageLocator.decode(body.link)
            verdict = self.dep.verifier.verify_change(
                prev, cand, body.prev_hash, body.new_hash,
                self.dep.plugins[event.docid], doc_key.private_key,
            )
        except (NotFound, DecryptError) as exc:
            self.log(f"verification failed for doc {event.docid}: {exc}")
            return None
        self.verdicts[(event.docid, body.ts)] = verdict
        return verdict

    def cast(self, session_id: int, decision: Decision) -> bool:
        try:
            self.dep.vote.cast_vote(self.address, session_id, decision)
        except DataProvError as exc:
            self.log(f"vote {decision.name} on session {session_id} refused: {type(exc).__name__}")
            return False
        self.log(f"voted {decision.name} on session {session_id}")
        return True

    # -- change submission ---------------------------------------------
    def submit_change_workflow(
        self,
        docid: int,
        new_plaintext: bytes,
        process_label: str,
        claimed_new_hash: Optional[Digest] = None,
    ) -> VoteSession:
        """Upload a new version, sign the change and open a vote on it.

        ``claimed_new_hash`` lets a dishonest client lie about the new
        version's digest.
        """
        dep = self.dep
        doc_key = self.profile.tracked_docs[docid]
        prev_loc = dep.store.latest_stable(docid)
        prev_plain = dep.crypto.decrypt(doc_key.private_key, dep.store.resolve(prev_loc).ciphertext)
        prev_hash = dep.crypto.hash(prev_plain)
        new_hash = dep.crypto.hash(new_plaintext)
        claimed = claimed_new_hash or new_hash
        loc = dep.store.put_version(docid, dep.crypto.encrypt(doc_key.public_key, new_plaintext), claimed)
        ts = dep.ledger.now
        body = ChangeBody(docid, prev_hash, claimed, loc.encode(), ts)
        event = self.build_event(docid, body, process_label, doc_key)
        try:
            session = dep.vote.initiate_change(self.address, ChangeSubmission(event, dep.deposit, ts))
        except DataProvError as exc:
            dep.store.mark_rejected(loc)
            self.log(f"change on doc {docid} refused: {type(exc).__name__}")
            raise
        self.log(f"opened session {session.session_id} ({session.mode.name}) on doc {docid}")
        if session.settled:
            dep.store.mark_stable(loc)
        else:
            self._pending[docid] = (session.session_id, loc, claimed)
            self.start_timer(session)
        return session

    def build_event(self, docid: int, body: ChangeBody, process_label: str, doc_key: KeyPair) -> ChangeEvent:
        crypto = self.dep.crypto
        ct = crypto.encrypt(doc_key.public_key, body.encode())
        sig = crypto.sign(self.profile.keys, ct.bytes)
        opm = OpmTriple(self.address, body.prev_hash, body.new_hash, process_label)
        return ChangeEvent(docid, self.address, ct, opm, sig)

    def replay_captured(self, index: int = -1) -> VoteSession:
        """Resubmit a change request seen earlier on the chain."""
        sub = self.captured[index]
        fresh = ChangeSubmission(sub.event, sub.deposit, sub.ts)
        try:
            return self.dep.vote.initiate_change(self.address, fresh)
        except DataProvError as exc:
            self.log(f"replay of ts={sub.ts} refused: {type(exc).__name__}")
            raise

    def submit_unauthorized(self, docid: int, process_label: str = "tamper") -> VoteSession:
        """External adversary: knows the docid, holds neither access nor key."""
        crypto = self.dep.crypto
        fake_prev = crypto.hash(b"guess-prev" + self.rng.randbytes(16))
        fake_new = crypto.hash(b"guess-new" + self.rng.randbytes(16))
        ts = self.dep.ledger.now
        body = ChangeBody(docid, fake_prev, fake_new, b"", ts)
        ct = crypto.encrypt(self.profile.keys.public_key, body.encode())
        sig = crypto.sign(self.profile.keys, ct.bytes)
        event = ChangeEvent(docid, self.address, ct, OpmTriple(self.address, fake_prev, fake_new, process_label), sig)
        try:
            return self.dep.vote.initiate_change(self.address, ChangeSubmission(event, self.dep.deposit, ts))
        except DataProvError as exc:
            self.log(f"unauthorized change on doc {docid} refused: {type(exc).__name__}")
            raise

    # -- timer ---------------------------------------------------------
    def start_timer(self, session: VoteSession) -> PendingTimer:
        timer = PendingTimer(session.session_id, session.closes_at)
        self.timers.append(timer)
        if self.scheduler is not None:
            self.scheduler(Action(timer.fire_at, "timer", lambda: self.on_timer_fire(timer)))
        return timer

    def on_timer_fire(self, timer: PendingTimer) -> Optional[Outcome]:
        try:
            outcome = self.dep.vote.close_session(timer.session_id, caller=self.address)
        except (SessionClosed, AlreadySettled):
            return None
        session = self.dep.vote.get_session(timer.session_id)
        self.log(f"closed round {session.restart_count} of session {timer.session_id}: {outcome.value}")
        if outcome is Outcome.Restarted:
            self.start_timer(session)
        return outcome
