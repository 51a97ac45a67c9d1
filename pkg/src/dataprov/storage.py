"""Untrusted versioned document store and the change-verification engine.

The store only ever holds ciphertext. Verification decrypts with a key
supplied by the caller, re-derives both content hashes, then runs a
domain constraint plugin over the (previous, candidate) plaintexts.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from .crypto import Ciphertext, CryptoProfile, Digest
from .errors import NotFound, PendingVersion, WriteLocked


class VersionStatus(enum.Enum):
    Unconfirmed = "Unconfirmed"
    Stable = "Stable"
    Rejected = "Rejected"


class WriteAccess(enum.Enum):
    EveryoneWithAccess = "EveryoneWithAccess"
    OwnerOnly = "OwnerOnly"


@dataclass(frozen=True)
class StorageLocator:
    docid: int
    version: int

    _PATTERN = re.compile(r"^store://(\d+)/(\d+)$")

    def encode(self) -> bytes:
        return f"store://{self.docid}/{self.version}".encode()

    @classmethod
    def decode(cls, raw: bytes) -> "StorageLocator":
        m = cls._PATTERN.match(raw.decode("ascii", "replace"))
        if not m:
            raise NotFound(f"unresolvable locator {raw!r}")
        return cls(int(m.group(1)), int(m.group(2)))


@dataclass
class StoredVersion:
    docid: int
    version: int
    ciphertext: Ciphertext
    content_hash: Digest
    status: VersionStatus = VersionStatus.Unconfirmed
    writable_by: WriteAccess = WriteAccess.EveryoneWithAccess


class DocumentStore:
    """In-memory store, optionally mirrored to ``root/<docid>/<version>.bin``."""

    def __init__(self, root: Optional[Path] = None):
        self.root = Path(root) if root is not None else None
        self._versions: Dict[int, List[StoredVersion]] = {}
        self._owners: Dict[int, bytes] = {}

    def register(self, docid: int, owner: bytes) -> None:
        self._owners[docid] = owner
        self._versions.setdefault(docid, [])

    def set_owner(self, docid: int, owner: bytes) -> None:
        self._owners[docid] = owner

    def put_version(self, docid: int, ciphertext: Ciphertext, content_hash: Digest) -> StorageLocator:
        versions = self._versions.setdefault(docid, [])
        if any(v.status is VersionStatus.Unconfirmed for v in versions):
            raise PendingVersion(f"document {docid} has an unconfirmed version")
        sv = StoredVersion(docid, len(versions) + 1, ciphertext, content_hash)
        versions.append(sv)
        self._persist(sv)
        return StorageLocator(docid, sv.version)

    def resolve(self, loc: StorageLocator) -> StoredVersion:
        versions = self._versions.get(loc.docid, [])
        if not 1 <= loc.version <= len(versions):
            raise NotFound(f"no version {loc.version} of document {loc.docid}")
        return versions[loc.version - 1]

    def latest_stable(self, docid: int) -> StorageLocator:
        for v in reversed(self._versions.get(docid, [])):
            if v.status is VersionStatus.Stable:
                return StorageLocator(docid, v.version)
        raise NotFound(f"document {docid} has no stable version")

    def pending(self, docid: int) -> Optional[StorageLocator]:
        for v in self._versions.get(docid, []):
            if v.status is VersionStatus.Unconfirmed:
                return StorageLocator(docid, v.version)
        return None

    def _set_status(self, loc, status):
        sv = self.resolve(loc)
        if sv.status is not VersionStatus.Unconfirmed:
            if sv.status is status:
                return
            raise ValueError(f"version {loc} already {sv.status.value}")
        sv.status = status
        self._persist(sv)

    def mark_stable(self, loc: StorageLocator) -> None:
        self._set_status(loc, VersionStatus.Stable)

    def mark_rejected(self, loc: StorageLocator) -> None:
        self._set_status(loc, VersionStatus.Rejected)

    def lock(self, loc: StorageLocator) -> None:
        sv = self.resolve(loc)
        if sv.writable_by is not WriteAccess.OwnerOnly:
            sv.writable_by = WriteAccess.OwnerOnly
            self._persist(sv)

    def rewrite_version(self, loc: StorageLocator, writer: bytes, ciphertext: Ciphertext, content_hash: Digest):
        """Overwrite an unconfirmed version in place (stable versions are immutable)."""
        sv = self.resolve(loc)
        if sv.status is VersionStatus.Stable:
            raise WriteLocked("stable versions are immutable")
        if sv.writable_by is WriteAccess.OwnerOnly and writer != self._owners.get(loc.docid):
            raise WriteLocked("version is locked to the document owner")
        sv.ciphertext, sv.content_hash = ciphertext, content_hash
        self._persist(sv)

    def _persist(self, sv: StoredVersion) -> None:
        if self.root is None:
            return
        d = self.root / str(sv.docid)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{sv.version}.bin").write_bytes(sv.ciphertext.bytes)
        meta = {
            "content_hash": sv.content_hash.hex(),
            "status": sv.status.value,
            "writable_by": sv.writable_by.value,
        }
        (d / f"{sv.version}.json").write_text(json.dumps(meta, sort_keys=True))


# -- tabular records --------------------------------------------------------

class ParseFailure(ValueError):
    pass


def parse_table(raw: bytes, delimiter: str = ",") -> Tuple[List[str], Dict[str, List[str]]]:
    """Header row plus rows keyed by their first column."""
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseFailure("content is not UTF-8") from exc
    rows = [r for r in csv.reader(io.StringIO(text), delimiter=delimiter) if r]
    if not rows:
        raise ParseFailure("empty table")
    header, body = rows[0], rows[1:]
    keyed: Dict[str, List[str]] = {}
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseFailure(f"row {i} has {len(row)} fields, header has {len(header)}")
        if row[0] in keyed:
            raise ParseFailure(f"duplicate key {row[0]!r} on row {i}")
        keyed[row[0]] = row
    return header, keyed


def render_table(header: List[str], rows: List[List[str]], delimiter: str = ",") -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


# -- plugins ----------------------------------------------------------------

@dataclass(frozen=True)
class LatencyModel:
    """Modeled run time: ``base + per_unit * size`` seconds."""

    base: float
    per_unit: float
    unit: str = "rows"  # or "kb"

    @classmethod
    def through(cls, x0, y0, x1, y1, unit="rows") -> "LatencyModel":
        slope = (y1 - y0) / (x1 - x0)
        return cls(y0 - slope * x0, slope, unit)

    def elapsed(self, content: bytes) -> float:
        if self.unit == "kb":
            size = len(content) / 1000.0
        else:
            size = max(content.count(b"\n") - 1, 0)
        return self.base + self.per_unit * size


@dataclass(frozen=True)
class ConstraintPlugin:
    name: str
    check: Callable[[bytes, bytes], Tuple[bool, str]]
    latency: LatencyModel = LatencyModel(1.0, 0.0)


def patient_set_preservation(prev: bytes, cand: bytes) -> Tuple[bool, str]:
    _, before = parse_table(prev)
    _, after = parse_table(cand)
    missing = [pid for pid in before if pid not in after]
    if missing:
        return False, f"{len(missing)} patient ids removed, first {missing[0]!r}"
    return True, ""


def year_on_year_consistency(prev: bytes, cand: bytes) -> Tuple[bool, str]:
    head_prev, before = parse_table(prev)
    head_cand, after = parse_table(cand)
    cand_col = {name: i for i, name in enumerate(head_cand)}
    for name in head_prev:
        if name not in cand_col:
            return False, f"field {name!r} dropped"
    for period, row in before.items():
        if period not in after:
            return False, f"period {period!r} deleted"
        new_row = after[period]
        for name, value in zip(head_prev, row):
            if new_row[cand_col[name]] != value:
                return False, f"{period}/{name} changed from {value!r} to {new_row[cand_col[name]]!r}"
    return True, ""


def permissive(prev: bytes, cand: bytes) -> Tuple[bool, str]:
    return True, ""


PLUGINS: Dict[str, ConstraintPlugin] = {
    # 1000 patients -> 7 s, 5000 patients -> 31 s
    "patient_set_preservation": ConstraintPlugin(
        "patient_set_preservation", patient_set_preservation,
        LatencyModel.through(1000, 7.0, 5000, 31.0, "rows"),
    ),
    # 1 KB -> 10 s, 5 KB -> 45 s
    "year_on_year_consistency": ConstraintPlugin(
        "year_on_year_consistency", year_on_year_consistency,
        LatencyModel.through(1, 10.0, 5, 45.0, "kb"),
    ),
    "permissive": ConstraintPlugin("permissive", permissive),
}


def get_plugin(name: str) -> ConstraintPlugin:
    try:
        return PLUGINS[name]
    except KeyError:
        raise KeyError(f"unknown verification plugin {name!r}; known: {sorted(PLUGINS)}") from None


# -- verdicts -----------------------------------------------------------------

class Reason(enum.Enum):
    Ok = "Ok"
    HashMismatch = "HashMismatch"
    ConstraintViolated = "ConstraintViolated"


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: Reason
    elapsed: float
    constraint: str = ""
    detail: str = ""


@dataclass
class Verifier:
    """Runs verification against a store; results are memoized because the
    check is a pure function of its inputs."""

    store: DocumentStore
    crypto: CryptoProfile
    _cache: Dict[tuple, Verdict] = field(default_factory=dict, repr=False)

    def verify_change(
        self,
        prev: StorageLocator,
        cand: StorageLocator,
        submitted_prev_hash: Digest,
        submitted_new_hash: Digest,
        plugin: ConstraintPlugin,
        decrypt_key: bytes,
    ) -> Verdict:
        prev_sv, cand_sv = self.store.resolve(prev), self.store.resolve(cand)
        key = (
            prev, cand, prev_sv.ciphertext.bytes, cand_sv.ciphertext.bytes,
            submitted_prev_hash, submitted_new_hash, plugin.name, self.crypto.hash(decrypt_key),
        )
        verdict = self._cache.get(key)
        if verdict is None:
            verdict = self._verify(prev_sv, cand_sv, submitted_prev_hash, submitted_new_hash, plugin, decrypt_key)
            self._cache[key] = verdict
        if verdict.valid:
            self.store.lock(cand)
        return verdict

    def _verify(self, prev_sv, cand_sv, prev_hash, new_hash, plugin, decrypt_key) -> Verdict:
        old = self.crypto.decrypt(decrypt_key, prev_sv.ciphertext)
        new = self.crypto.decrypt(decrypt_key, cand_sv.ciphertext)
        elapsed = plugin.latency.elapsed(new)
        if self.crypto.hash(old) != prev_hash or self.crypto.hash(new) != new_hash:
            return Verdict(False, Reason.HashMismatch, elapsed)
        try:
            ok, detail = plugin.check(old, new)
        except ParseFailure as exc:
            ok, detail = False, f"ParseFailure: {exc}"
        if ok:
            return Verdict(True, Reason.Ok, elapsed)
        return Verdict(False, Reason.ConstraintViolated, elapsed, plugin.name, detail)
