"""Scenario configuration and the discrete-event simulation driver."""
from __future__ import annotations

import hashlib
import heapq
import itertools
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from . import documents
from .agent import Action, AgentProfile, Behavior, ClientAgent, Deployment
from .chain import DEFAULT_BLOCK_INTERVAL, DEFAULT_GAS, DEFAULT_DIFFICULTY, DEFAULT_GAS_LIMIT, GasSchedule, Ledger
from .crypto import get_profile
from .errors import ConfigError, DataProvError, InvariantViolation
from .storage import DocumentStore, StorageLocator, Verifier, get_plugin, PLUGINS
from .tracker import ChangeEvent, DocumentTracker, check_trail_continuity
from .voting import Mode, State, VoteContract, VotingConfig

CHANGE_KINDS = ("benign", "malicious", "tamper_hash", "replay", "unauthorized")
FIXTURE_DIR = Path(__file__).parent / "scenarios"


@dataclass
class BehaviorRule:
    agents: List[int]
    behavior: Behavior
    p_f: float = 0.0


@dataclass
class ExternalAgent:
    name: str
    behavior: Behavior = Behavior.UnauthorizedSubmitter
    funding: Optional[int] = None


@dataclass
class DocumentConfig:
    name: str
    owner: int = 0
    plugin: str = "permissive"
    generator: str = "drug_trial"
    options: Dict[str, Any] = field(default_factory=dict)
    users: Union[str, List[int]] = "all"


@dataclass
class ChangeConfig:
    at: int
    agent: Union[int, str]
    document: str
    kind: str = "benign"
    edit: Dict[str, Any] = field(default_factory=dict)
    process: str = "update"


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    rng_seed: int = 0
    crypto_profile: str = "test"
    agent_count: int = 10
    funding: int = 10**12
    p_f: float = 0.0
    behaviors: List[BehaviorRule] = field(default_factory=list)
    externals: List[ExternalAgent] = field(default_factory=list)
    documents: List[DocumentConfig] = field(default_factory=list)
    changes: List[ChangeConfig] = field(default_factory=list)
    voting: VotingConfig = field(default_factory=VotingConfig)
    deposit: int = 1000
    gas_overrides: Dict[str, int] = field(default_factory=dict)
    gas_price: int = 1
    block_interval: int = DEFAULT_BLOCK_INTERVAL
    difficulty: Union[int, List[int]] = DEFAULT_DIFFICULTY
    gas_limit: Union[int, List[int]] = DEFAULT_GAS_LIMIT
    ether_per_gas: float = 2e-8
    usd_per_ether: float = 90.0
    op_latency_ms: Dict[str, int] = field(default_factory=dict)
    storage_backend: str = "memory"

    def validate(self) -> "ScenarioConfig":
        errors = []
        if self.agent_count < 1:
            errors.append("agents.count must be >= 1")
        if self.crypto_profile not in ("test", "real"):
            errors.append(f"unknown crypto profile {self.crypto_profile!r}")
        if self.deposit <= 0:
            errors.append("voting.deposit must be positive")
        if self.storage_backend not in ("memory", "directory"):
            errors.append(f"storage.backend must be memory or directory, got {self.storage_backend!r}")
        unknown_ops = sorted(set(self.gas_overrides) - set(DEFAULT_GAS))
        if unknown_ops:
            errors.append(f"gas_schedule names unknown operations {unknown_ops}")
        if any(v <= 0 for v in self.gas_overrides.values()) or self.gas_price <= 0:
            errors.append("gas entries and gas_price must be positive")
        names = [e.name for e in self.externals]
        if len(set(names)) != len(names):
            errors.append("external agent names must be unique")
        for rule in self.behaviors:
            bad = [a for a in rule.agents if not 0 <= a < self.agent_count]
            if bad:
                errors.append(f"behavior rule references unknown agents {bad}")
        docs = {}
        for d in self.documents:
            if d.name in docs:
                errors.append(f"duplicate document {d.name!r}")
            docs[d.name] = d
            if d.plugin not in PLUGINS:
                errors.append(f"document {d.name!r}: unknown plugin {d.plugin!r}")
            if d.generator not in documents.GENERATORS:
                errors.append(f"document {d.name!r}: unknown generator {d.generator!r}")
            if not 0 <= d.owner < self.agent_count:
                errors.append(f"document {d.name!r}: owner {d.owner} out of range")
        last_at: Dict[str, int] = {}
        for i, ch in enumerate(self.changes):
            where = f"changes[{i}]"
            if ch.kind not in CHANGE_KINDS:
                errors.append(f"{where}: unknown kind {ch.kind!r}")
            if ch.document not in docs:
                errors.append(f"{where}: unknown document {ch.document!r}")
            if isinstance(ch.agent, int):
                if not 0 <= ch.agent < self.agent_count:
                    errors.append(f"{where}: agent {ch.agent} out of range")
            elif ch.agent not in names:
                errors.append(f"{where}: unknown agent {ch.agent!r}")
            if ch.at <= 0:
                errors.append(f"{where}: 'at' must be positive")
            if ch.document in last_at and ch.at <= last_at[ch.document]:
                errors.append(f"{where}: timestamps must strictly increase per document")
            last_at[ch.document] = ch.at
            if ch.kind in ("benign", "malicious", "tamper_hash"):
                op = ch.edit.get("op")
                if op not in documents.EDITS:
                    errors.append(f"{where}: unknown edit op {op!r}")
        if errors:
            raise ConfigError("; ".join(errors))
        return self


def _behavior(name: str) -> Behavior:
    try:
        return Behavior(name)
    except ValueError:
        raise ConfigError(f"unknown behavior {name!r}; known: {[b.value for b in Behavior]}") from None


def _agent_list(sel) -> List[int]:
    if isinstance(sel, dict) and "range" in sel:
        lo, hi = sel["range"]
        return list(range(lo, hi))
    if isinstance(sel, list):
        return [int(a) for a in sel]
    return [int(sel)]


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig from parsed YAML."""
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must contain a mapping")
    try:
        agents = raw.get("agents", {})
        voting = dict(raw.get("voting", {}))
        deposit = voting.pop("deposit", 1000)
        pricing = raw.get("pricing", {})
        chain = raw.get("chain", {})
        cfg = ScenarioConfig(
            name=raw.get("name", "scenario"),
            rng_seed=int(raw.get("rng_seed", 0)),
            crypto_profile=raw.get("crypto_profile", "test"),
            agent_count=int(agents.get("count", 10)),
            funding=int(agents.get("funding", 10**12)),
            p_f=float(agents.get("p_f", 0.0)),
            behaviors=[
                BehaviorRule(_agent_list(r["agents"]), _behavior(r["behavior"]), float(r.get("p_f", agents.get("p_f", 0.0))))
                for r in agents.get("behaviors", [])
            ],
            externals=[
                ExternalAgent(e["name"], _behavior(e.get("behavior", "unauthorized_submitter")), e.get("funding"))
                for e in raw.get("externals", [])
            ],
            documents=[
                DocumentConfig(
                    d["name"], int(d.get("owner", 0)), d.get("plugin", "permissive"),
                    d.get("generator", "drug_trial"), dict(d.get("options", {})), d.get("users", "all"),
                )
                for d in raw.get("documents", [])
            ],
            changes=[
                ChangeConfig(
                    int(c["at"]), c["agent"], c["document"], c.get("kind", "benign"),
                    dict(c.get("edit", {})), c.get("process", "update"),
                )
                for c in raw.get("changes", [])
            ],
            voting=VotingConfig(**voting),
            deposit=int(deposit),
            gas_overrides={k: int(v) for k, v in raw.get("gas_schedule", {}).items()},
            gas_price=int(raw.get("gas_price", 1)),
            block_interval=int(chain.get("block_interval", DEFAULT_BLOCK_INTERVAL)),
            difficulty=chain.get("difficulty", DEFAULT_DIFFICULTY),
            gas_limit=chain.get("gas_limit", DEFAULT_GAS_LIMIT),
            ether_per_gas=float(pricing.get("ether_per_gas", 2e-8)),
            usd_per_ether=float(pricing.get("usd_per_ether", 90.0)),
            op_latency_ms=dict(raw.get("op_latency_ms", {})),
            storage_backend=raw.get("storage", {}).get("backend", "memory"),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenario: {exc!r}") from exc
    return cfg.validate()


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return config_from_dict(raw)


def fixture_path(name: str) -> Path:
    return FIXTURE_DIR / f"{name}.yaml"


def derive_seed(seed: int, *labels) -> bytes:
    return hashlib.sha256("/".join([str(seed), *map(str, labels)]).encode()).digest()


def derive_rng(seed: int, *labels) -> random.Random:
    return random.Random(int.from_bytes(derive_seed(seed, *labels)[:8], "big"))


# -- results ------------------------------------------------------------------

@dataclass
class ChangeResult:
    index: int
    kind: str
    agent: str
    document: str
    at: int
    session_id: Optional[int] = None
    error: str = ""


@dataclass
class RunReport:
    scenario: str
    seed: int
    gas_rows: List[tuple]
    gas_trace: List[tuple]
    sessions: List[dict]
    attempts: List[dict]
    escrow: List[dict]
    verdicts: List[dict]
    changes: List[ChangeResult]
    events: List[str]
    logical_duration: int
    blocks: int
    pricing: Dict[str, float]
    op_latency_ms: Dict[str, int]
    agent_traces: Dict[str, List[str]]
    notes: List[str] = field(default_factory=lambda: [
        "flat-cost model: per-operation gas is constant; testnet gas spikes are not modeled",
    ])


# -- simulation ---------------------------------------------------------------

_PRIORITY = {"change": 0, "vote": 1, "timer": 2}


class Simulation:
    def __init__(self, config: ScenarioConfig, store_root: Optional[Path] = None):
        self.config = config
        seed = config.rng_seed
        self.crypto = get_profile(config.crypto_profile)
        self.ledger = Ledger(
            GasSchedule.with_overrides(config.gas_overrides, config.gas_price),
            config.difficulty, config.gas_limit,
        )
        self.tracker = DocumentTracker(self.ledger, self.crypto)
        self.vote = VoteContract(self.ledger, self.tracker, config.voting)
        root = store_root if config.storage_backend == "directory" else None
        self.store = DocumentStore(root)
        self.verifier = Verifier(self.store, self.crypto)
        self.dep = Deployment(
            self.ledger, self.tracker, self.vote, self.store, self.verifier, self.crypto,
            deposit=config.deposit,
        )
        rules = {}
        for rule in config.behaviors:
            for a in rule.agents:
                rules[a] = rule
        self.agents: List[ClientAgent] = []
        for i in range(config.agent_count):
            rule = rules.get(i)
            keys = self.crypto.keypair_from_seed(derive_seed(seed, "agent", i))
            profile = AgentProfile(
                keys,
                rule.behavior if rule else Behavior.Honest,
                rule.p_f if rule else config.p_f,
            )
            self._add_agent(f"u{i:03d}", profile, config.funding)
        for ext in config.externals:
            keys = self.crypto.keypair_from_seed(derive_seed(seed, "external", ext.name))
            self._add_agent(ext.name, AgentProfile(keys, ext.behavior), ext.funding or config.funding)
        self.by_name = {a.name: a for a in self.agents}
        self.docids: Dict[str, int] = {}
        self.change_results: List[ChangeResult] = []
        self._queue: list = []
        self._seq = itertools.count()
        self._log_len = 0
        self.ledger.subscribe(self._deliver)

    def _add_agent(self, name, profile, funding):
        agent = ClientAgent(name, profile, self.dep, derive_rng(self.config.rng_seed, "agent-rng", name))
        idx = len(self.agents)
        agent.scheduler = lambda act, idx=idx: self._schedule(act, idx)
        self.agents.append(agent)
        self.ledger.register_key(profile.address, profile.keys.public_key)
        self.ledger.fund(profile.address, funding)

    def _schedule(self, action: Action, order: int) -> None:
        at = max(action.at, self.ledger.now)
        heapq.heappush(self._queue, (at, _PRIORITY.get(action.kind, 9), order, next(self._seq), action))

    def _deliver(self, record) -> None:
        for idx, agent in enumerate(self.agents):
            act = agent.on_event(record)
            if act is not None:
                self._schedule(act, idx)

    # -- setup ---------------------------------------------------------
    def setup(self) -> None:
        cfg = self.config
        for d in cfg.documents:
            owner = self.agents[d.owner]
            doc_key = self.crypto.keypair_from_seed(derive_seed(cfg.rng_seed, "doc", d.name))
            content = documents.GENERATORS[d.generator](derive_rng(cfg.rng_seed, "content", d.name), **d.options)
            digest = self.crypto.hash(content)
            docid_guess = len(self.tracker.documents) + 1
            self.store.register(docid_guess, owner.address)
            loc = self.store.put_version(docid_guess, self.crypto.encrypt(doc_key.public_key, content), digest)
            self.store.mark_stable(loc)
            link = self.crypto.encrypt(doc_key.public_key, loc.encode())
            sig = self.crypto.sign(owner.profile.keys, link.bytes)
            docid = self.tracker.add_document(owner.address, digest, link.bytes, sig)
            assert docid == docid_guess
            self.docids[d.name] = docid
            self.dep.plugins[docid] = get_plugin(d.plugin)
            members = range(cfg.agent_count) if d.users == "all" else [int(u) for u in d.users]
            for m in members:
                agent = self.agents[m]
                if agent.address != owner.address:
                    self.tracker.grant_access(owner.address, docid, agent.address)
                agent.profile.tracked_docs[docid] = doc_key
            owner.profile.tracked_docs[docid] = doc_key
        self.ledger.advance_block(cfg.block_interval)
        for i, ch in enumerate(cfg.changes):
            agent_idx = ch.agent if isinstance(ch.agent, int) else self.agents.index(self.by_name[ch.agent])
            self._schedule(Action(ch.at, "change", lambda i=i, ch=ch: self._apply_change(i, ch)), agent_idx)

    def _doc_plaintext(self, docid: int) -> bytes:
        doc_key = next(a.profile.tracked_docs[docid] for a in self.agents if docid in a.profile.tracked_docs)
        sv = self.store.resolve(self.store.latest_stable(docid))
        return self.crypto.decrypt(doc_key.private_key, sv.ciphertext)

    def _apply_change(self, index: int, ch: ChangeConfig) -> None:
        agent = self.agents[ch.agent] if isinstance(ch.agent, int) else self.by_name[ch.agent]
        docid = self.docids[ch.document]
        result = ChangeResult(index, ch.kind, agent.name, ch.document, self.ledger.now)
        self.change_results.append(result)
        try:
            if ch.kind == "replay":
                session = agent.replay_captured(int(ch.edit.get("capture", -1)))
            elif ch.kind == "unauthorized":
                session = agent.submit_unauthorized(docid, ch.process)
            else:
                opts = dict(ch.edit)
                edit = documents.EDITS[opts.pop("op")]
                rng = derive_rng(self.config.rng_seed, "edit", index)
                content = edit(self._doc_plaintext(docid), rng, **opts)
                claimed = None
                if ch.kind == "tamper_hash":
                    claimed = self.crypto.hash(b"not-the-upload" + content)
                session = agent.submit_change_workflow(docid, content, ch.process, claimed)
            result.session_id = session.session_id
        except DataProvError as exc:
            result.error = type(exc).__name__
        except IndexError:
            result.error = "NothingCaptured"

    # -- run -----------------------------------------------------------
    def check_invariants(self) -> None:
        self.ledger.check_conservation()
        self.vote.check_invariants()
        if len(self.ledger.events) < self._log_len:
            raise InvariantViolation("event log shrank")
        self._log_len = len(self.ledger.events)

    def final_checks(self) -> None:
        self.check_invariants()
        for name, docid in self.docids.items():
            trail = self.tracker.get_trail(docid)
            if not check_trail_continuity(trail):
                raise InvariantViolation(f"hash chain broken for document {name}")
        for sid, s in self.vote.sessions.items():
            if not s.settled:
                raise InvariantViolation(f"session {sid} never reached a terminal state")
            if self.ledger.escrow[sid].state.value == "Held":
                raise InvariantViolation(f"escrow for session {sid} still held")
        for sid, entry in self.ledger.escrow.items():
            if entry.state.value == "Held":
                raise InvariantViolation(f"escrow {sid} never settled")

    def drain(self, until: Optional[int] = None) -> None:
        """Run queued actions in order, optionally stopping before ``until``."""
        while self._queue and (until is None or self._queue[0][0] < until):
            at, _, _, _, action = heapq.heappop(self._queue)
            if at > self.ledger.now:
                self.ledger.advance_block(at - self.ledger.now)
            action.run()
            self.check_invariants()

    def run(self) -> RunReport:
        self.setup()
        self.check_invariants()
        self.drain()
        self.final_checks()
        return self.build_report()

    # -- reporting -----------------------------------------------------
    def agent_of(self, address: bytes) -> Optional[ClientAgent]:
        for a in self.agents:
            if a.address == address:
                return a
        return None

    def build_report(self) -> RunReport:
        names = {a.address: a for a in self.agents}
        kinds = {r.session_id: r for r in self.change_results if r.session_id is not None}
        sessions = []
        verdicts = []
        for sid, s in sorted(self.vote.sessions.items()):
            final = s.rounds[-1] if s.rounds else None
            voters = final.voters if final else []
            honest = sum(1 for v in voters if names[v].behavior in (Behavior.Honest, Behavior.Absent))
            change = kinds.get(sid)
            sessions.append({
                "session_id": sid,
                "docid": s.docid,
                "kind": change.kind if change else "",
                "initiator": names[s.initiator].name,
                "mode": s.mode.name,
                "rounds": len(s.rounds) if s.mode is not Mode.AutoAccept else 0,
                "votes_for": final.votes_for if final else 0,
                "votes_against": final.votes_against if final else 0,
                "honest_voters": honest,
                "quorum": s.params.s if s.mode is Mode.Threshold else 0,
                "outcome": s.state.value,
                "disposition": s.disposition or "",
            })
            for a in self.agents:
                v = a.verdicts.get((s.docid, s.submission.ts))
                if v is not None:
                    verdicts.append({
                        "session_id": sid, "valid": v.valid, "reason": v.reason.value,
                        "constraint": v.constraint, "detail": v.detail, "elapsed": round(v.elapsed, 3),
                    })
                    break
        attempts = [
            {"session_id": a.session_id, "caller": names[a.caller].name if a.caller in names else a.caller.hex(),
             "docid": a.docid, "reason": a.reason.name, "disposition": a.disposition}
            for a in self.vote.attempts
        ]
        escrow = [
            {"session_id": e.session_id, "depositor": names[e.depositor].name, "amount": e.amount,
             "state": e.state.value}
            for e in self.ledger.escrow.values()
        ]
        return RunReport(
            scenario=self.config.name,
            seed=self.config.rng_seed,
            gas_rows=self.ledger.gas_rows(),
            gas_trace=list(self.ledger.gas_trace),
            sessions=sessions,
            attempts=attempts,
            escrow=escrow,
            verdicts=verdicts,
            changes=list(self.change_results),
            events=[e.log_line() for e in self.ledger.events],
            logical_duration=self.ledger.now,
            blocks=self.ledger.head.number,
            pricing={"ether_per_gas": self.config.ether_per_gas, "usd_per_ether": self.config.usd_per_ether,
                     "gas_price": self.config.gas_price},
            op_latency_ms=dict(self.config.op_latency_ms),
            agent_traces={a.name: list(a.trace) for a in self.agents if a.trace},
        )


def run_scenario(config: ScenarioConfig, store_root: Optional[Path] = None) -> RunReport:
    return Simulation(config, store_root).run()


# -- analysis grids -----------------------------------------------------------

@dataclass
class GridPoint:
    n: int
    s: int
    t: int
    p_f: float = 0.0


@dataclass
class AnalysisGrid:
    points: List[GridPoint]
    trials: int = 100
    rng_seed: int = 0


def _ints(sel) -> List[int]:
    if isinstance(sel, dict):
        lo, hi = sel["from"], sel["to"]
        return list(range(int(lo), int(hi) + 1))
    if isinstance(sel, list):
        return [int(v) for v in sel]
    return [int(sel)]


def grid_from_dict(raw: dict) -> AnalysisGrid:
    """Each entry of ``sweeps`` expands the product of its n, s, t, p_f lists."""
    if not isinstance(raw, dict) or "sweeps" not in raw:
        raise ConfigError("grid file needs a 'sweeps' list")
    try:
        points = []
        for sweep in raw["sweeps"]:
            p_fs = sweep.get("p_f", 0.0)
            for n in _ints(sweep["n"]):
                for s in _ints(sweep["s"]):
                    for t in _ints(sweep["t"]):
                        for p_f in (p_fs if isinstance(p_fs, list) else [p_fs]):
                            points.append(GridPoint(n, s, t, float(p_f)))
        grid = AnalysisGrid(points, int(raw.get("trials", 100)), int(raw.get("rng_seed", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed grid: {exc!r}") from exc
    if not grid.points:
        raise ConfigError("grid is empty")
    if grid.trials < 0:
        raise ConfigError("trials must be non-negative")
    return grid


def load_grid(path: Union[str, Path]) -> AnalysisGrid:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read grid {path}: {exc}") from exc
    return grid_from_dict(raw)


def run_analysis(grid: AnalysisGrid):
    """FailureAnalysis rows for every grid point.

    Points sharing (n, s, p_f) share Monte Carlo trials across their t values.
    Degenerate points come back flagged rather than raising.
    """
    from .analysis import analyze_point, failure_study

    groups: Dict[tuple, List[int]] = {}
    for p in grid.points:
        groups.setdefault((p.n, p.s, p.p_f), []).append(p.t)
    counts: Dict[tuple, Dict[int, int]] = {}
    rows = []
    for p in grid.points:
        row = analyze_point(p.n, p.s, p.t, p.p_f)
        if grid.trials and not row.flag:
            key = (p.n, p.s, p.p_f)
            if key not in counts:
                ts = [t for t in groups[key] if analyze_point(p.n, p.s, t, p.p_f).flag == ""]
                counts[key] = failure_study(p.n, p.s, ts, p.p_f, grid.trials, grid.rng_seed)
            row.empirical, row.trials = counts[key][p.t] / grid.trials, grid.trials
        rows.append(row)
    return rows
