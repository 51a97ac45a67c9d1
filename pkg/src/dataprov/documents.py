"""Synthetic document content for the bundled scenarios.

Drug-trial tables carry one row per patient; wheat tables carry one row
per quarter. Edits are pure functions of (content, rng, options).
"""
from __future__ import annotations

import random

from .storage import parse_table, render_table

DRUG_HEADER = ["patient_id", "dosage_mg", "month", "adverse_event"]
WHEAT_HEADER = ["period", "total_production", "total_disappearance", "imports"]


def drug_trial(rng: random.Random, patients: int = 1000) -> bytes:
    rows = [
        [f"P{i:05d}", str(rng.choice((10, 20, 40))), "0", "0"]
        for i in range(1, patients + 1)
    ]
    return render_table(DRUG_HEADER, rows)


def _rows(content):
    header, keyed = parse_table(content)
    return header, [list(r) for r in keyed.values()]


def monthly_update(content: bytes, rng: random.Random, month: int = 1, new_patients: int = 10,
                   adverse_rate: float = 0.02) -> bytes:
    """Record a month of observations and enrol new patients."""
    header, rows = _rows(content)
    for row in rows:
        row[2] = str(month)
        if row[3] == "0" and rng.random() < adverse_rate:
            row[3] = "1"
    start = max((int(r[0][1:]) for r in rows), default=0) + 1
    for i in range(start, start + new_patients):
        rows.append([f"P{i:05d}", str(rng.choice((10, 20, 40))), str(month), "0"])
    return render_table(header, rows)


def drop_patients(content: bytes, rng: random.Random, count: int = 5, month: int = None) -> bytes:
    """Remove patients, adverse reactions first. Used for fraudulent edits."""
    header, rows = _rows(content)
    adverse = [r for r in rows if r[3] == "1"]
    others = [r for r in rows if r[3] != "1"]
    victims = adverse[:count]
    if len(victims) < count:
        victims += rng.sample(others, min(count - len(victims), len(others)))
    gone = {r[0] for r in victims}
    kept = [r for r in rows if r[0] not in gone]
    if month is not None:
        for r in kept:
            r[2] = str(month)
    return render_table(header, kept)


def _quarter(year, q):
    return f"{year}Q{q}"


def _next_quarter(period: str) -> str:
    year, q = int(period[:4]), int(period[-1])
    return _quarter(year + (q == 4), q % 4 + 1)


def wheat(rng: random.Random, start_year: int = 2010, quarters: int = 16) -> bytes:
    rows = []
    period = _quarter(start_year, 1)
    for _ in range(quarters):
        rows.append(_wheat_row(rng, period))
        period = _next_quarter(period)
    return render_table(WHEAT_HEADER, rows)


def _wheat_row(rng, period):
    production = rng.randint(400, 900)
    return [period, str(production), str(production - rng.randint(0, 80)), str(rng.randint(20, 60))]


def append_quarter(content: bytes, rng: random.Random) -> bytes:
    header, rows = _rows(content)
    rows.append(_wheat_row(rng, _next_quarter(rows[-1][0])))
    return render_table(header, rows)


def revise_quarter(content: bytes, rng: random.Random, index: int = 0,
                   field: str = "total_production", delta: int = 50) -> bytes:
    """Rewrite an already-verified quarter and append the new one."""
    header, rows = _rows(content)
    col = header.index(field)
    rows[index][col] = str(int(rows[index][col]) + delta)
    rows.append(_wheat_row(rng, _next_quarter(rows[-1][0])))
    return render_table(header, rows)


GENERATORS = {"drug_trial": drug_trial, "wheat": wheat}

EDITS = {
    "monthly_update": monthly_update,
    "drop_patients": drop_patients,
    "append_quarter": append_quarter,
    "revise_quarter": revise_quarter,
}
