"""Failure-probability and cost analysis for randomized threshold voting.

The quantities here:

* ``chernoff_failure_bound`` - Hoeffding-style upper bound on the chance a
  round collects fewer than ``s`` votes.
* ``exact_failure_prob`` - the same probability under independent
  Bernoulli(t/n - p_f) participation, by log-domain binomial summation.
* ``estimate_failure_rate`` - Monte Carlo over the contract's own
  hash-mod-n sortition, so the i.i.d. assumption above is measured.
* ``expected_voting_cost`` / ``optimal_t`` / ``fit_cost_model`` - the
  restart-until-quorum cost model.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateParams, DivergentCost, PoorFit
from .voting import SelectionSeed, selection_value


@dataclass(frozen=True)
class CostModel:
    c: float
    c1: float
    r2: float = 1.0
    residuals: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.c > 0:
            raise DegenerateParams(f"per-vote cost must be positive, got {self.c}")

    def round_cost(self, t: float) -> float:
        return self.c * t + self.c1


@dataclass
class FailureAnalysis:
    n: int
    s: int
    t: int
    p_f: float
    bound: float
    exact: float
    empirical: Optional[float] = None
    trials: int = 0
    flag: str = ""


@dataclass(frozen=True)
class ExpectedCost:
    expected: float
    upper_bound: float
    p_t: float


def _check_prob(p_f):
    if not 0.0 <= p_f <= 1.0:
        raise DegenerateParams(f"p_f must lie in [0, 1], got {p_f}")


def chernoff_failure_bound(n: int, s: int, t: int, p_f: float) -> float:
    """Upper bound on P[V < s]: exp(-2 (t - s - n p_f)^2 / n), or 1 when vacuous."""
    if n < 1 or not (0 <= s < t <= n):
        raise DegenerateParams(f"need n >= 1 and 0 <= s < t <= n, got n={n} s={s} t={t}")
    _check_prob(p_f)
    gap = t - s - n * p_f
    if gap <= 0:
        return 1.0
    return math.exp(-2.0 * gap * gap / n)


def _log_binom_pmf(n, k, logp, logq):
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1) + k * logp + (n - k) * logq


def binomial_cdf(n: int, p: float, k: int) -> float:
    """P[Binomial(n, p) <= k] by log-sum-exp over the pmf terms."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    logp, logq = math.log(p), math.log1p(-p)
    terms = [_log_binom_pmf(n, j, logp, logq) for j in range(k + 1)]
    top = max(terms)
    return min(1.0, math.exp(top) * math.fsum(math.exp(x - top) for x in terms))


def vote_probability(n: int, t: int, p_f: float) -> float:
    return t / n - p_f


def exact_failure_prob(n: int, s: int, t: int, p_f: float) -> float:
    """P[Binomial(n, t/n - p_f) <= s - 1]."""
    if n < 1 or s < 0 or not 0 <= t <= n:
        raise DegenerateParams(f"bad parameters n={n} s={s} t={t}")
    p = vote_probability(n, t, p_f)
    if not -1e-12 <= p <= 1.0 + 1e-12:
        raise DegenerateParams(f"per-user vote probability {p} outside [0, 1]")
    return binomial_cdf(n, min(max(p, 0.0), 1.0), s - 1)


# -- Monte Carlo over the real sortition ----------------------------------------

def _addresses(rng: random.Random, n: int) -> List[bytes]:
    return [rng.randbytes(20) for _ in range(n)]


def _selection_values(rng: random.Random, addresses: Sequence[bytes], etxt_len=96) -> List[int]:
    """One fresh block context and change ciphertext; Ks for every user."""
    n = len(addresses)
    bno = rng.randrange(1, 2**40)
    diff = rng.randrange(1, 2**32)
    glim = rng.randrange(1, 2**32)
    etxt = rng.randbytes(etxt_len)
    return [selection_value(SelectionSeed(bno, etxt, diff, glim, a), n) for a in addresses]


def failure_study(
    n: int,
    s: int,
    ts: Iterable[int],
    p_f: float,
    trials: int,
    rng_seed: int,
) -> Dict[int, int]:
    """Failure counts for every threshold in ``ts`` from the same trials.

    Each trial draws a fresh block context and evaluates every user's
    selection value once; all thresholds are then scored against those
    values, so the counts are monotone in t by construction.
    A selected user abstains with probability ``p_f * n / t`` so that the
    overall per-user vote probability is ``t/n - p_f``.
    """
    ts = sorted(set(ts))
    if trials < 1:
        raise DegenerateParams("need at least one trial")
    _check_prob(p_f)
    rng = random.Random(rng_seed)
    users = _addresses(rng, n)
    failures = {t: 0 for t in ts}
    for _ in range(trials):
        ks = _selection_values(rng, users)
        if p_f > 0:
            u = [rng.random() for _ in users]
        for t in ts:
            if p_f > 0:
                drop = min(1.0, p_f * n / t) if t > 0 else 1.0
                votes = sum(1 for k, x in zip(ks, u) if k < t and x >= drop)
            else:
                votes = sum(1 for k in ks if k < t)
            if votes < s:
                failures[t] += 1
    return failures


def estimate_failure_rate(n: int, s: int, t: int, p_f: float, trials: int, rng_seed: int) -> Tuple[float, int]:
    if n < 1:
        raise DegenerateParams("n must be positive")
    count = failure_study(n, s, [t], p_f, trials, rng_seed)[t]
    return count / trials, trials


def analyze_point(n, s, t, p_f, trials=0, rng_seed=0) -> FailureAnalysis:
    flag = ""
    try:
        bound = chernoff_failure_bound(n, s, t, p_f)
    except DegenerateParams as exc:
        bound, flag = 1.0, f"degenerate: {exc}"
    try:
        exact = exact_failure_prob(n, s, t, p_f)
    except DegenerateParams as exc:
        exact, flag = float("nan"), flag or f"degenerate: {exc}"
    row = FailureAnalysis(n, s, t, p_f, bound, exact, flag=flag)
    if trials and not math.isnan(exact):
        row.empirical, row.trials = estimate_failure_rate(n, s, t, p_f, trials, rng_seed)
    return row


def failure_table(n: int, s: int, ts: Sequence[int], p_f: float, trials: int, rng_seed: int) -> List[FailureAnalysis]:
    """Bound, exact and shared-trial empirical rates across a t sweep."""
    counts = failure_study(n, s, ts, p_f, trials, rng_seed) if trials else {}
    rows = []
    for t in ts:
        row = analyze_point(n, s, t, p_f)
        if trials:
            row.empirical, row.trials = counts[t] / trials, trials
        rows.append(row)
    return rows


# -- cost model ---------------------------------------------------------------

def expected_cost_from_pt(t: float, p_t: float, cost: CostModel) -> float:
    if p_t >= 1.0:
        raise DivergentCost("a round never reaches quorum; expected cost is unbounded")
    return cost.round_cost(t) / (1.0 - p_t)


def expected_voting_cost(t: int, s: int, n: int, p_f: float, cost: CostModel) -> ExpectedCost:
    """(c t + c1) / (1 - p_t) with the exact p_t, plus the Chernoff upper variant."""
    p_t = exact_failure_prob(n, s, t, p_f)
    expected = expected_cost_from_pt(t, p_t, cost)
    if t > s:
        pb = math.exp(-2.0 * (t - s) ** 2 / n)
        upper = cost.round_cost(t) / (1.0 - pb) if pb < 1.0 else math.inf
    else:
        upper = math.inf
    return ExpectedCost(expected, upper, p_t)


def optimal_t(s: int, n: int, p_f: float, cost: CostModel) -> int:
    """Integer t in (s + ceil(n p_f), n] minimizing expected cost; ties go low."""
    lo = s + math.ceil(n * p_f - 1e-12) + 1
    if s >= n or lo > n:
        raise DegenerateParams(f"no feasible t for s={s}, n={n}, p_f={p_f}")
    best_t, best = None, math.inf
    for t in range(lo, n + 1):
        try:
            value = expected_voting_cost(t, s, n, p_f, cost).expected
        except (DivergentCost, DegenerateParams):
            continue
        if value < best:
            best_t, best = t, value
    if best_t is None:
        raise DegenerateParams("expected cost diverges for every feasible t")
    return best_t


def fit_cost_model(rounds: Sequence[Tuple[float, float]], min_r2: float = 0.9) -> CostModel:
    """Least-squares line total_gas = c * t + c1 over (t, total_gas) rounds."""
    data = np.asarray(rounds, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2 or len(np.unique(data[:, 0])) < 2:
        raise DegenerateParams("need rounds at two or more distinct t values")
    x, y = data[:, 0], data[:, 1]
    A = np.column_stack([x, np.ones_like(x)])
    (c, c1), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (c * x + c1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    if r2 < min_r2:
        raise PoorFit(r2, min_r2)
    return CostModel(float(c), float(c1), r2, tuple(float(r) for r in resid))


# -- simulated voting sessions ----------------------------------------------------

@dataclass
class SessionCost:
    t: int
    rounds: List[Tuple[int, int]] = field(default_factory=list)  # (votes, round gas)

    @property
    def total_gas(self) -> int:
        return sum(g for _, g in self.rounds)


def simulate_voting_sessions(
    n: int,
    s: int,
    t: int,
    sessions: int,
    rng_seed: int,
    gas_overrides: Optional[dict] = None,
) -> List[SessionCost]:
    """Restart-until-quorum sessions on the real contracts with n always-online voters.

    Round gas counts the round's opening (InitiateChange or RestartVote)
    plus every accepted vote; recording the accepted change is excluded.
    """
    from .chain import GasSchedule, Ledger
    from .crypto import TestCrypto
    from .tracker import ChangeBody, ChangeEvent, DocumentTracker, OpmTriple
    from .voting import ChangeSubmission, Decision, Outcome, VoteContract, VotingConfig

    rng = random.Random(rng_seed)
    crypto = TestCrypto()
    ledger = Ledger(GasSchedule.with_overrides(gas_overrides))
    tracker = DocumentTracker(ledger, crypto)
    vote = VoteContract(ledger, tracker, VotingConfig(s=s, t=t, max_restarts=10**9))
    users = [crypto.generate_keypair(rng) for _ in range(n)]
    for u in users:
        ledger.register_key(u.address, u.public_key)
        ledger.fund(u.address, 10**15)
    owner = users[0]
    doc_key = crypto.generate_keypair(rng)
    head = crypto.hash(b"version-0")
    docid = tracker.add_document(owner.address, head, b"genesis")
    for u in users[1:]:
        tracker.grant_access(owner.address, docid, u.address)
    opening_ops = ("InitiateChange", "RestartVote")

    results = []
    for i in range(sessions):
        ledger.advance_block(15)
        initiator = users[1 + i % (n - 1)] if n > 1 else owner
        new = crypto.hash(b"version-%d" % (i + 1))
        ts = ledger.now
        body = ChangeBody(docid, head, new, b"store://1/%d" % (i + 2), ts)
        ct = crypto.encrypt(doc_key.public_key, body.encode())
        event = ChangeEvent(
            docid, initiator.address, ct, OpmTriple(initiator.address, head, new, "update"),
            crypto.sign(initiator, ct.bytes),
        )
        mark = len(ledger.gas_trace)
        session = vote.initiate_change(initiator.address, ChangeSubmission(event, 1000, ts))
        while True:
            ledger.advance_block(15)
            for u in users:
                if selection_value(vote.seed_for(session, u.address), n) < session.params.t:
                    vote.cast_vote(u.address, session.session_id, Decision.For)
            ledger.advance_block(session.params.t1)
            if vote.close_session(session.session_id) is not Outcome.Restarted:
                break
        record = SessionCost(t)
        for op, gas in ledger.gas_trace[mark:]:
            if op in opening_ops:
                record.rounds.append([0, gas])
            elif op == "Vote":
                record.rounds[-1][0] += 1
                record.rounds[-1][1] += gas
        record.rounds = [tuple(r) for r in record.rounds]
        head = new
        results.append(record)
    ledger.check_conservation()
    return results


def round_points(sessions: Iterable[SessionCost]) -> List[Tuple[int, int]]:
    return [(sc.t, gas) for sc in sessions for _, gas in sc.rounds]
