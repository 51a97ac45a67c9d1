"""Deterministic single-chain ledger.

Blocks, an append-only event log, balances, deposit escrow and flat-cost
gas metering. Every mutating call is applied in submission order; there
is no mempool and no forking.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

from .errors import (
    AlreadySettled,
    InsufficientFunds,
    InvariantViolation,
    NonPositiveStep,
    UnknownOperation,
)

TREASURY = b"treasury".ljust(20, b"\x00")

# Average gas per operation measured on the public testnet deployment.
# InitiateChange is 731351.5 there, rounded to a whole gas unit.
DEFAULT_GAS = {
    "AddDocument": 139552,
    "AddUser": 90559,
    "RevokeUser": 90559,
    "SetOwner": 90559,
    "InitiateChange": 731352,
    "RestartVote": 731352,
    "Vote": 89176,
    "RejectedVote": 22294,  # 25% of Vote
    "RecordChange": 249812,
    "Terminate": 249812,
}

DEFAULT_BLOCK_INTERVAL = 15
DEFAULT_DIFFICULTY = 1
DEFAULT_GAS_LIMIT = 8_000_000


class Topic(enum.IntEnum):
    ChangeProposed = 1
    VoteOpened = 2
    VoteCast = 3
    ChangeRecorded = 4
    ChangeRejected = 5
    VoteRestarted = 6


class EscrowState(enum.Enum):
    Held = "Held"
    Refunded = "Refunded"
    Distributed = "Distributed"
    Withheld = "Withheld"


@dataclass(frozen=True)
class BlockHeader:
    number: int
    difficulty: int
    gas_limit: int
    timestamp: int


@dataclass(frozen=True)
class EventRecord:
    block_number: int
    emitter: str
    topic: Topic
    payload: bytes

    def log_line(self) -> str:
        return f"{self.block_number}\t{self.emitter}\t{self.topic.name}\t{self.payload.hex()}"


@dataclass
class GasSchedule:
    per_operation_gas: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_GAS))
    gas_price: int = 1

    def __post_init__(self):
        bad = {k: v for k, v in self.per_operation_gas.items() if int(v) <= 0}
        if bad or self.gas_price <= 0:
            raise ValueError(f"gas entries and price must be strictly positive: {bad or self.gas_price}")

    @classmethod
    def with_overrides(cls, overrides: Optional[dict] = None, gas_price: int = 1) -> "GasSchedule":
        table = dict(DEFAULT_GAS)
        unknown = sorted(set(overrides or {}) - set(table))
        if unknown:
            raise UnknownOperation(f"no such operation(s) in the gas schedule: {unknown}")
        table.update({k: int(v) for k, v in (overrides or {}).items()})
        return cls(table, gas_price)

    def gas(self, op_name: str) -> int:
        try:
            return self.per_operation_gas[op_name]
        except KeyError:
            raise UnknownOperation(op_name) from None

    def cost(self, op_name: str) -> int:
        return self.gas(op_name) * self.gas_price


@dataclass
class EscrowEntry:
    session_id: int
    depositor: bytes
    amount: int
    state: EscrowState = EscrowState.Held


@dataclass(frozen=True)
class Transfer:
    source: str
    to: bytes
    amount: int


class Refund:
    pass


class Withhold:
    pass


@dataclass(frozen=True)
class DistributeTo:
    addresses: Sequence[bytes]


Disposition = Union[Refund, Withhold, DistributeTo]


def _cycle(seq: Union[int, Iterable[int]]):
    if isinstance(seq, int):
        return itertools.repeat(seq)
    values = list(seq)
    if not values:
        raise ValueError("empty header sequence")
    return itertools.cycle(values)


class Ledger:
    """The simulated chain both contracts run on."""

    def __init__(
        self,
        gas_schedule: Optional[GasSchedule] = None,
        difficulty: Union[int, Iterable[int]] = DEFAULT_DIFFICULTY,
        gas_limit: Union[int, Iterable[int]] = DEFAULT_GAS_LIMIT,
    ):
        self.gas_schedule = gas_schedule or GasSchedule()
        self._difficulty = _cycle(difficulty)
        self._gas_limit = _cycle(gas_limit)
        self.blocks: List[BlockHeader] = [
            BlockHeader(0, next(self._difficulty), next(self._gas_limit), 0)
        ]
        self._events: List[EventRecord] = []
        self._subscribers: List[Callable[[EventRecord], None]] = []
        self.balances: Dict[bytes, int] = {}
        self.public_keys: Dict[bytes, bytes] = {}
        self.treasury = 0
        self.total_supply = 0
        self.burned = 0
        self.escrow: Dict[int, EscrowEntry] = {}
        self.gas_tally: Dict[str, List[int]] = {}
        # gas per op in invocation order, for cumulative plots
        self.gas_trace: List[tuple] = []

    # -- blocks --------------------------------------------------------
    @property
    def head(self) -> BlockHeader:
        return self.blocks[-1]

    @property
    def now(self) -> int:
        return self.head.timestamp

    def advance_block(self, dt: int = DEFAULT_BLOCK_INTERVAL) -> BlockHeader:
        if dt <= 0:
            raise NonPositiveStep(f"block step must be positive, got {dt}")
        h = self.head
        header = BlockHeader(
            h.number + 1, next(self._difficulty), next(self._gas_limit), h.timestamp + int(dt)
        )
        self.blocks.append(header)
        return header

    # -- event log -----------------------------------------------------
    @property
    def events(self) -> tuple:
        return tuple(self._events)

    def subscribe(self, callback: Callable[[EventRecord], None]) -> None:
        self._subscribers.append(callback)

    def emit_event(self, emitter: str, topic: Topic, payload: bytes) -> EventRecord:
        record = EventRecord(self.head.number, emitter, Topic(topic), bytes(payload))
        self._events.append(record)
        for cb in self._subscribers:
            cb(record)
        return record

    # -- accounts ------------------------------------------------------
    def fund(self, address: bytes, amount: int) -> None:
        """Mint ``amount`` into ``address``; the only way supply grows."""
        if amount < 0:
            raise ValueError("cannot fund a negative amount")
        self.balances[address] = self.balances.get(address, 0) + amount
        self.total_supply += amount

    def register_key(self, address: bytes, public_key: bytes) -> None:
        self.public_keys[address] = public_key
        self.balances.setdefault(address, 0)

    def public_key_of(self, address: bytes) -> Optional[bytes]:
        return self.public_keys.get(address)

    def balance(self, address: bytes) -> int:
        return self.balances.get(address, 0)

    def require_funds(self, payer: bytes, amount: int) -> None:
        if self.balance(payer) < amount:
            raise InsufficientFunds(
                f"{payer.hex()[:8]} holds {self.balance(payer)}, needs {amount}"
            )

    # -- gas -----------------------------------------------------------
    def charge_gas(self, payer: bytes, op_name: str) -> int:
        gas = self.gas_schedule.gas(op_name)
        cost = gas * self.gas_schedule.gas_price
        self.require_funds(payer, cost)
        self.balances[payer] -= cost
        self.burned += cost
        tally = self.gas_tally.setdefault(op_name, [0, 0])
        tally[0] += 1
        tally[1] += gas
        self.gas_trace.append((op_name, gas))
        return cost

    def gas_rows(self) -> List[tuple]:
        """(op_name, count, total_gas, mean_gas) in first-use order."""
        rows = []
        for op, (count, total) in self.gas_tally.items():
            mean = total // count if total % count == 0 else total / count
            rows.append((op, count, total, mean))
        return rows

    # -- escrow --------------------------------------------------------
    def escrow_deposit(self, depositor: bytes, session_id: int, amount: int) -> EscrowEntry:
        if amount <= 0:
            raise ValueError("deposit must be positive")
        if session_id in self.escrow:
            raise ValueError(f"escrow already exists for session {session_id}")
        self.require_funds(depositor, amount)
        self.balances[depositor] -= amount
        entry = EscrowEntry(session_id, depositor, amount)
        self.escrow[session_id] = entry
        return entry

    def settle_escrow(self, session_id: int, disposition: Disposition) -> List[Transfer]:
        entry = self.escrow[session_id]
        if entry.state is not EscrowState.Held:
            raise AlreadySettled(f"escrow for session {session_id} is {entry.state.value}")
        src = f"escrow:{session_id}"
        if isinstance(disposition, DistributeTo) and not disposition.addresses:
            disposition = Withhold()
        transfers: List[Transfer] = []
        if isinstance(disposition, Refund):
            transfers.append(Transfer(src, entry.depositor, entry.amount))
            entry.state = EscrowState.Refunded
        elif isinstance(disposition, Withhold):
            transfers.append(Transfer(src, TREASURY, entry.amount))
            entry.state = EscrowState.Withheld
        elif isinstance(disposition, DistributeTo):
            share, rem = divmod(entry.amount, len(disposition.addresses))
            transfers.extend(Transfer(src, a, share) for a in disposition.addresses)
            if rem:
                transfers.append(Transfer(src, TREASURY, rem))
            entry.state = EscrowState.Distributed
        else:
            raise TypeError(f"unknown disposition {disposition!r}")
        for tr in transfers:
            if tr.to == TREASURY:
                self.treasury += tr.amount
            else:
                self.balances[tr.to] = self.balances.get(tr.to, 0) + tr.amount
        return transfers

    def held_escrow(self) -> int:
        return sum(e.amount for e in self.escrow.values() if e.state is EscrowState.Held)

    # -- invariants ----------------------------------------------------
    def check_conservation(self) -> None:
        if any(b < 0 for b in self.balances.values()):
            raise InvariantViolation("negative balance")
        total = sum(self.balances.values()) + self.held_escrow() + self.treasury + self.burned
        if total != self.total_supply:
            raise InvariantViolation(
                f"currency not conserved: {total} != supply {self.total_supply}"
            )
