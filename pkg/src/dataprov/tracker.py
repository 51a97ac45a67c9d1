"""Document Tracker contract: registration, owner-controlled access and
replay-protected, hash-chained provenance recording."""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set

from .chain import Ledger, Topic
from .crypto import ADDRESS_SIZE, DIGEST_SIZE, Ciphertext, CryptoProfile, Digest, Signature
from .errors import (
    BadSignature,
    CannotRevokeOwner,
    ChainBreak,
    MalformedPayload,
    NoSuchDocument,
    NotAuthorized,
    NotOwner,
    ReplayRejected,
    UnauthorizedCaller,
)

TRACKER_ID = "DocumentTracker"


class Relationship(enum.IntEnum):
    """Coded OPM edges."""

    wasControlledBy = 1  # agent -> process
    used = 2  # process -> artifact before
    wasGeneratedBy = 3  # process -> artifact after


DEFAULT_CODES = (Relationship.wasControlledBy, Relationship.used, Relationship.wasGeneratedBy)


@dataclass(frozen=True)
class OpmTriple:
    agent: bytes
    artifact_before: Digest
    artifact_after: Digest
    process: str
    relationship_codes: tuple = tuple(int(c) for c in DEFAULT_CODES)


@dataclass(frozen=True)
class ChangeBody:
    """Plaintext sealed inside a change event's ciphertext."""

    docid: int
    prev_hash: Digest
    new_hash: Digest
    link: bytes
    ts: int

    def encode(self) -> bytes:
        return (
            struct.pack(">Q", self.docid)
            + self.prev_hash.bytes
            + self.new_hash.bytes
            + struct.pack(">H", len(self.link))
            + self.link
            + struct.pack(">Q", self.ts)
        )

    @classmethod
    def decode(cls, raw: bytes) -> "ChangeBody":
        r = _Reader(raw)
        docid = r.u64()
        prev, new = Digest(r.take(DIGEST_SIZE)), Digest(r.take(DIGEST_SIZE))
        link = r.take(r.u16())
        ts = r.u64()
        r.done()
        return cls(docid, prev, new, link, ts)


@dataclass(frozen=True)
class ChangeEvent:
    docid: int
    agent: bytes
    ciphertext: Ciphertext
    opm: OpmTriple
    signature: Signature

    def encode(self) -> bytes:
        """Wire layout: docid u64 | agent 20B | u32-len ciphertext | OPM | u32-len signature."""
        proc = self.opm.process.encode("utf-8")
        if len(self.agent) != ADDRESS_SIZE or len(self.opm.agent) != ADDRESS_SIZE:
            raise MalformedPayload("addresses must be 20 bytes")
        return b"".join(
            [
                struct.pack(">Q", self.docid),
                self.agent,
                struct.pack(">I", len(self.ciphertext.bytes)),
                self.ciphertext.bytes,
                self.opm.agent,
                self.opm.artifact_before.bytes,
                self.opm.artifact_after.bytes,
                struct.pack(">H", len(proc)),
                proc,
                bytes(self.opm.relationship_codes),
                struct.pack(">I", len(self.signature.bytes)),
                self.signature.bytes,
            ]
        )

    @classmethod
    def decode(cls, raw: bytes) -> "ChangeEvent":
        r = _Reader(raw)
        docid = r.u64()
        agent = r.take(ADDRESS_SIZE)
        ct = Ciphertext(r.take(r.u32()))
        opm_agent = r.take(ADDRESS_SIZE)
        before, after = Digest(r.take(DIGEST_SIZE)), Digest(r.take(DIGEST_SIZE))
        try:
            process = r.take(r.u16()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedPayload("process label is not UTF-8") from exc
        codes = tuple(r.take(3))
        sig = Signature(r.take(r.u32()), agent)
        r.done()
        return cls(docid, agent, ct, OpmTriple(opm_agent, before, after, process, codes), sig)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = bytes(raw)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise MalformedPayload("payload truncated")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self):
        return struct.unpack(">H", self.take(2))[0]

    def u32(self):
        return struct.unpack(">I", self.take(4))[0]

    def u64(self):
        return struct.unpack(">Q", self.take(8))[0]

    def done(self):
        if self.pos != len(self.raw):
            raise MalformedPayload(f"{len(self.raw) - self.pos} trailing bytes")


@dataclass
class DocumentRecord:
    docid: int
    owner: bytes
    authorized_users: Set[bytes]
    latest_ts: int
    head_hash: Digest
    created_at: int
    trail_index: List[int] = field(default_factory=list)


class DocumentTracker:
    def __init__(self, ledger: Ledger, crypto: CryptoProfile, vote_contract_id: Optional[str] = None):
        self.ledger = ledger
        self.crypto = crypto
        self.vote_contract_id = vote_contract_id
        self.documents: Dict[int, DocumentRecord] = {}
        self._next_docid = 1

    def register_vote_contract(self, contract_id: str) -> None:
        self.vote_contract_id = contract_id

    def _doc(self, docid) -> DocumentRecord:
        try:
            return self.documents[docid]
        except KeyError:
            raise NoSuchDocument(f"no document {docid}") from None

    def _user_key(self, user: bytes) -> bytes:
        return self.crypto.hash(user).bytes

    def add_document(
        self,
        caller: bytes,
        initial_hash: Digest,
        link: bytes,
        signature: Optional[Signature] = None,
        process: str = "create",
    ) -> int:
        """Register a new document and log its genesis provenance event.

        ``link`` is the owner's already-encrypted storage locator; the
        tracker stores it opaquely as the genesis event's ciphertext.
        """
        self.ledger.charge_gas(caller, "AddDocument")
        docid = self._next_docid
        self._next_docid += 1
        rec = DocumentRecord(
            docid=docid,
            owner=caller,
            authorized_users={self._user_key(caller)},
            latest_ts=self.ledger.now,
            head_hash=initial_hash,
            created_at=self.ledger.head.number,
        )
        self.documents[docid] = rec
        genesis = ChangeEvent(
            docid=docid,
            agent=caller,
            ciphertext=Ciphertext(bytes(link)),
            opm=OpmTriple(caller, Digest.zero(), initial_hash, process),
            signature=signature or Signature(b"", caller),
        )
        self._append_trail(rec, genesis)
        return docid

    def _append_trail(self, rec, event):
        self.ledger.emit_event(TRACKER_ID, Topic.ChangeRecorded, event.encode())
        rec.trail_index.append(len(self.ledger.events) - 1)

    def grant_access(self, caller: bytes, docid: int, user: bytes) -> None:
        rec = self._doc(docid)
        if caller != rec.owner:
            raise NotOwner("only the owner may grant access")
        self.ledger.charge_gas(caller, "AddUser")
        rec.authorized_users.add(self._user_key(user))

    def revoke_access(self, caller: bytes, docid: int, user: bytes) -> None:
        rec = self._doc(docid)
        if caller != rec.owner:
            raise NotOwner("only the owner may revoke access")
        if user == rec.owner:
            raise CannotRevokeOwner("the owner's access cannot be revoked")
        self.ledger.charge_gas(caller, "RevokeUser")
        rec.authorized_users.discard(self._user_key(user))

    def set_owner(self, caller: bytes, docid: int, new_owner: bytes) -> None:
        rec = self._doc(docid)
        if caller != rec.owner:
            raise NotOwner("only the owner may transfer ownership")
        if new_owner == rec.owner:
            return
        self.ledger.charge_gas(caller, "SetOwner")
        # previous owner keeps ordinary access
        rec.owner = new_owner
        rec.authorized_users.add(self._user_key(new_owner))

    def has_access(self, docid: int, user: bytes) -> bool:
        return self._user_key(user) in self._doc(docid).authorized_users

    def user_count(self, docid: int) -> int:
        return len(self._doc(docid).authorized_users)

    def owner_of(self, docid: int) -> bytes:
        return self._doc(docid).owner

    def check_signature(self, event: ChangeEvent) -> bool:
        pub = self.ledger.public_key_of(event.agent)
        if pub is None or event.signature.signer_address != event.agent:
            return False
        return self.crypto.verify(pub, event.ciphertext.bytes, event.signature)

    def record_change(self, caller_role: str, event: ChangeEvent, ts: int):
        if self.vote_contract_id is None or caller_role != self.vote_contract_id:
            raise UnauthorizedCaller("record_change may only be called by the vote contract")
        rec = self._doc(event.docid)
        if not self.check_signature(event):
            raise BadSignature("change signature does not verify")
        if ts <= rec.latest_ts:
            raise ReplayRejected(f"timestamp {ts} not after latest {rec.latest_ts}")
        if event.opm.artifact_before != rec.head_hash:
            raise ChainBreak("change does not extend the current head of the trail")
        if not self.has_access(event.docid, event.agent):
            raise NotAuthorized("change agent lost access before recording")
        self.ledger.charge_gas(event.agent, "RecordChange")
        rec.head_hash = event.opm.artifact_after
        rec.latest_ts = ts
        self._append_trail(rec, event)
        return self.ledger.events[-1]

    def get_trail(self, docid: int) -> List[ChangeEvent]:
        rec = self._doc(docid)
        log = self.ledger.events
        return [ChangeEvent.decode(log[i].payload) for i in rec.trail_index]


def check_trail_continuity(trail: List[ChangeEvent]) -> bool:
    return all(
        nxt.opm.artifact_before == prev.opm.artifact_after for prev, nxt in zip(trail, trail[1:])
    )
