import pytest
from hypothesis import given, settings, strategies as st

from dataprov.chain import (
    DEFAULT_GAS, TREASURY, DistributeTo, EscrowState, GasSchedule, Ledger, Refund, Topic, Withhold,
)
from dataprov.errors import AlreadySettled, InsufficientFunds, InvariantViolation, NonPositiveStep, UnknownOperation

A, B, C, D = (bytes([i]) * 20 for i in range(1, 5))


def test_block_advance():
    led = Ledger()
    h = led.advance_block(15)
    assert (h.number, h.timestamp) == (1, 15)
    led.advance_block(15)
    assert led.now == 30
    with pytest.raises(NonPositiveStep):
        led.advance_block(0)
    with pytest.raises(NonPositiveStep):
        led.advance_block(-3)


def test_header_sequences_cycle():
    led = Ledger(difficulty=[5, 6], gas_limit=100)
    diffs = [led.head.difficulty] + [led.advance_block().difficulty for _ in range(3)]
    assert diffs == [5, 6, 5, 6]
    assert led.head.gas_limit == 100


def test_event_log_append_only():
    led = Ledger()
    seen = []
    led.subscribe(seen.append)
    r1 = led.emit_event("X", Topic.VoteCast, b"a")
    r2 = led.emit_event("X", Topic.VoteCast, b"b")
    assert led.events[-1] == r2 and len(led.events) == 2
    assert r1.block_number == r2.block_number
    assert seen == [r1, r2]
    assert isinstance(led.events, tuple)


def test_default_gas_matches_cost_table():
    led = Ledger()
    led.fund(A, 10**9)
    assert led.charge_gas(A, "AddDocument") == 139552
    assert led.charge_gas(A, "AddUser") == 90559
    assert led.gas_rows() == [("AddDocument", 1, 139552, 139552), ("AddUser", 1, 90559, 90559)]
    assert DEFAULT_GAS["RejectedVote"] == DEFAULT_GAS["Vote"] // 4


def test_gas_price_scales_charge():
    led = Ledger(GasSchedule.with_overrides({"Vote": 10}, gas_price=3))
    led.fund(A, 100)
    assert led.charge_gas(A, "Vote") == 30
    assert led.balance(A) == 70
    led.check_conservation()


def test_insufficient_funds_leaves_state_alone():
    led = Ledger()
    led.emit_event("X", Topic.VoteCast, b"")
    with pytest.raises(InsufficientFunds):
        led.charge_gas(A, "AddDocument")
    assert len(led.events) == 1 and led.gas_tally == {}


def test_unknown_operation():
    with pytest.raises(UnknownOperation):
        GasSchedule().gas("SelfDestruct")
    with pytest.raises(UnknownOperation):
        GasSchedule.with_overrides({"Bogus": 1})


def test_escrow_refund_withhold_distribute():
    led = Ledger()
    led.fund(A, 1000)
    led.escrow_deposit(A, 1, 100)
    assert led.balance(A) == 900
    led.settle_escrow(1, Refund())
    assert led.balance(A) == 1000

    led.escrow_deposit(A, 2, 100)
    led.settle_escrow(2, Withhold())
    assert led.treasury == 100

    led.escrow_deposit(A, 3, 100)
    out = led.settle_escrow(3, DistributeTo([B, C, D]))
    assert [led.balance(x) for x in (B, C, D)] == [33, 33, 33]
    assert led.treasury == 101
    assert sum(t.amount for t in out) == 100
    assert led.escrow[3].state is EscrowState.Distributed
    with pytest.raises(AlreadySettled):
        led.settle_escrow(3, Refund())
    led.check_conservation()


def test_distribute_to_nobody_withholds():
    led = Ledger()
    led.fund(A, 50)
    led.escrow_deposit(A, 1, 50)
    led.settle_escrow(1, DistributeTo([]))
    assert led.escrow[1].state is EscrowState.Withheld and led.treasury == 50


def test_conservation_detects_tampering():
    led = Ledger()
    led.fund(A, 10)
    led.balances[A] += 1
    with pytest.raises(InvariantViolation):
        led.check_conservation()


@settings(max_examples=100, deadline=None)
@given(
    amount=st.integers(1, 10**6),
    k=st.integers(1, 40),
    ops=st.lists(st.sampled_from(sorted(DEFAULT_GAS)), max_size=10),
)
def test_conservation_holds_under_any_sequence(amount, k, ops):
    led = Ledger()
    voters = [bytes([i + 10]) * 20 for i in range(k)]
    led.fund(A, 10**9)
    for op in ops:
        led.charge_gas(A, op)
    led.escrow_deposit(A, 1, amount)
    led.check_conservation()
    led.settle_escrow(1, DistributeTo(voters))
    led.check_conservation()
    share, rem = divmod(amount, k)
    assert all(led.balance(v) == share for v in voters)
    assert led.treasury == rem
    assert led.balances.get(TREASURY) is None
