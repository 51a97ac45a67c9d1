"""Report files and figures for runs and analysis grids.

Everything written here is a pure function of the run, so two runs with the
same config and seed produce byte-identical directories.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict
from decimal import Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analysis import FailureAnalysis  # noqa: E402
from .scenario import RunReport  # noqa: E402

FLAT_COST_NOTE = "flat-cost model"
_PNG_META = {"Software": None}

GAS_COLUMNS = ["op_name", "count", "total_gas", "mean_gas"]
COST_COLUMNS = ["op_name", "count", "mean_gas", "usd"]
ANALYSIS_COLUMNS = ["n", "s", "t", "p_f", "bound", "exact", "empirical", "trials"]


def usd_per_call(gas: int, ether_per_gas, usd_per_ether, gas_price: int = 1) -> Decimal:
    """USD cost of one call. Decimal keeps 139552 gas at 0.2511936 exactly."""
    return Decimal(gas) * Decimal(gas_price) * Decimal(str(ether_per_gas)) * Decimal(str(usd_per_ether))


def _fmt_mean(total: int, count: int) -> str:
    q, r = divmod(total, count)
    return str(q) if r == 0 else f"{total / count:.3f}"


def report_costs(report: RunReport) -> List[dict]:
    """Per-op mean gas and USD. Ops never invoked are omitted."""
    p = report.pricing
    rows = []
    for op, count, total, mean in report.gas_rows:
        if count == 0:
            continue
        usd = usd_per_call(mean, p["ether_per_gas"], p["usd_per_ether"], int(p.get("gas_price", 1)))
        rows.append({"op_name": op, "count": count, "mean_gas": mean, "usd": usd})
    return rows


# -- delimited output ----------------------------------------------------------

def _csv(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _table(columns: Sequence[str], rows: Iterable[dict]) -> str:
    cells = [[str(c) for c in columns]] + [[str(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render(columns: Sequence[str], rows: Iterable[dict], fmt: str = "csv") -> str:
    if fmt == "table":
        return _table(columns, rows)
    if fmt == "csv":
        return _csv(columns, rows)
    raise ValueError(f"unknown format {fmt!r}")


def gas_table(report: RunReport) -> List[dict]:
    return [
        {"op_name": op, "count": count, "total_gas": total, "mean_gas": _fmt_mean(total, count)}
        for op, count, total, _ in report.gas_rows if count
    ]


def analysis_rows(rows: Sequence[FailureAnalysis]) -> List[dict]:
    out = []
    for r in rows:
        d = {k: v for k, v in asdict(r).items() if k in ANALYSIS_COLUMNS}
        d["bound"] = repr(r.bound)
        d["exact"] = repr(r.exact)
        d["empirical"] = "" if r.empirical is None else repr(r.empirical)
        out.append(d)
    return out


# -- run directory -------------------------------------------------------------

def _summary(report: RunReport) -> dict:
    outcomes: Dict[str, int] = {}
    for s in report.sessions:
        outcomes[s["outcome"]] = outcomes.get(s["outcome"], 0) + 1
    return {
        "scenario": report.scenario,
        "seed": report.seed,
        "logical_duration": report.logical_duration,
        "blocks": report.blocks,
        "events": len(report.events),
        "sessions": len(report.sessions),
        "outcomes": dict(sorted(outcomes.items())),
        "rejected_attempts": len(report.attempts),
        "changes": [
            {"index": c.index, "kind": c.kind, "agent": c.agent, "document": c.document,
             "at": c.at, "session_id": c.session_id, "error": c.error}
            for c in report.changes
        ],
        "pricing": report.pricing,
        "op_latency_ms": report.op_latency_ms,
        "notes": report.notes,
    }


def write_run(report: RunReport, out: Path, figures: bool = True) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "events.log").write_text("".join(line + "\n" for line in report.events))
    (out / "gas.csv").write_text(render(GAS_COLUMNS, gas_table(report)))
    trace = [{"seq": i, "op_name": op, "gas": g} for i, (op, g) in enumerate(report.gas_trace)]
    (out / "gas_trace.csv").write_text(render(["seq", "op_name", "gas"], trace))
    (out / "costs.csv").write_text(render(COST_COLUMNS, report_costs(report)))
    session_cols = list(report.sessions[0]) if report.sessions else ["session_id"]
    (out / "sessions.csv").write_text(render(session_cols, report.sessions))
    (out / "escrow.csv").write_text(render(["session_id", "depositor", "amount", "state"], report.escrow))
    (out / "attempts.csv").write_text(
        render(["session_id", "caller", "docid", "reason", "disposition"], report.attempts)
    )
    (out / "verdicts.csv").write_text(
        render(["session_id", "valid", "reason", "constraint", "detail", "elapsed"], report.verdicts)
    )
    (out / "agents.log").write_text(
        "".join(line + "\n" for name in sorted(report.agent_traces) for line in report.agent_traces[name])
    )
    (out / "summary.json").write_text(json.dumps(_summary(report), indent=2, sort_keys=True) + "\n")
    if figures:
        plot_gas(report, out)
    return out


def read_gas_rows(run_dir: Path) -> List[tuple]:
    with open(Path(run_dir) / "gas.csv", newline="") as fh:
        rows = [(r["op_name"], int(r["count"]), int(r["total_gas"])) for r in csv.DictReader(fh)]
    return [(op, c, t, t // c if t % c == 0 else t / c) for op, c, t in rows]


def read_gas_trace(run_dir: Path) -> List[tuple]:
    with open(Path(run_dir) / "gas_trace.csv", newline="") as fh:
        return [(r["op_name"], int(r["gas"])) for r in csv.DictReader(fh)]


def load_run(run_dir: Path) -> RunReport:
    """Rebuild enough of a RunReport from a run directory to re-render costs and figures."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    with open(run_dir / "sessions.csv", newline="") as fh:
        sessions = list(csv.DictReader(fh))
    return RunReport(
        scenario=summary["scenario"], seed=summary["seed"],
        gas_rows=read_gas_rows(run_dir), gas_trace=read_gas_trace(run_dir),
        sessions=sessions, attempts=[], escrow=[], verdicts=[], changes=[],
        events=(run_dir / "events.log").read_text().splitlines(),
        logical_duration=summary["logical_duration"], blocks=summary["blocks"],
        pricing=summary["pricing"], op_latency_ms=summary.get("op_latency_ms", {}),
        agent_traces={}, notes=summary.get("notes", []),
    )


# -- figures -------------------------------------------------------------------

def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_gas(report: RunReport, out: Path) -> None:
    cumulative: Dict[str, List[int]] = {}
    for op, gas in report.gas_trace:
        series = cumulative.setdefault(op, [])
        series.append((series[-1] if series else 0) + gas)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for op in sorted(cumulative):
        ys = cumulative[op]
        ax.plot(range(1, len(ys) + 1), ys, marker=".", label=op)
    ax.set_xlabel("invocation")
    ax.set_ylabel("cumulative gas")
    ax.set_title(f"{report.scenario}: cumulative gas ({FLAT_COST_NOTE})")
    if cumulative:
        ax.legend(fontsize="small")
    _save(fig, Path(out) / "gas_cumulative.png")

    rows = [r for r in report.gas_rows if r[1]]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar([r[0] for r in rows], [r[2] / r[1] for r in rows])
    ax.set_ylabel("mean gas per call")
    ax.set_title(f"{report.scenario}: gas per operation ({FLAT_COST_NOTE})")
    ax.tick_params(axis="x", labelrotation=45)
    fig.tight_layout()
    _save(fig, Path(out) / "gas_per_op.png")


def plot_failure(rows: Sequence[FailureAnalysis], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ts = [r.t for r in rows]
    ax.semilogy(ts, [max(r.bound, 1e-300) for r in rows], "o-", label="Chernoff bound")
    ax.semilogy(ts, [max(r.exact, 1e-300) for r in rows], "s--", label="exact binomial")
    emp = [(r.t, r.empirical) for r in rows if r.empirical]
    if emp:
        ax.semilogy([e[0] for e in emp], [e[1] for e in emp], "^", label="empirical (nonzero)")
    ax.set_xlabel("t")
    ax.set_ylabel("P(failure)")
    if rows:
        ax.set_title(f"failure probability, n={rows[0].n} s={rows[0].s} p_f={rows[0].p_f}")
    ax.legend()
    _save(fig, Path(path))


def write_analysis(rows: Sequence[FailureAnalysis], out: Optional[Path], fmt: str = "csv") -> str:
    text = render(ANALYSIS_COLUMNS + ["flag"], analysis_rows_flagged(rows), fmt)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "analysis.csv").write_text(render(ANALYSIS_COLUMNS + ["flag"], analysis_rows_flagged(rows), "csv"))
        plot_failure(rows, out / "failure_probability.png")
    return text


def analysis_rows_flagged(rows: Sequence[FailureAnalysis]) -> List[dict]:
    out = analysis_rows(rows)
    for d, r in zip(out, rows):
        d["flag"] = r.flag
    return out
