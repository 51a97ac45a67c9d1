import dataclasses
from decimal import Decimal

import pytest
import yaml

from dataprov import cli
from dataprov.chain import DEFAULT_GAS
from dataprov.errors import ConfigError, InvariantViolation
from dataprov.report import report_costs, write_analysis, write_run
from dataprov.scenario import (
    config_from_dict, fixture_path, grid_from_dict, load_config, run_analysis, run_scenario,
)


def base_raw(**over):
    raw = {
        "name": "t", "rng_seed": 1,
        "agents": {"count": 6},
        "documents": [{"name": "d", "owner": 0, "plugin": "patient_set_preservation",
                       "generator": "drug_trial", "options": {"patients": 30}}],
        "changes": [],
    }
    raw.update(over)
    return raw


@pytest.mark.parametrize("patch,needle", [
    ({"changes": [{"at": 10, "agent": 9, "document": "d", "edit": {"op": "monthly_update"}}]}, "out of range"),
    ({"changes": [{"at": 10, "agent": "ghost", "document": "d", "kind": "unauthorized"}]}, "unknown agent"),
    ({"changes": [{"at": 10, "agent": 1, "document": "nope", "edit": {"op": "monthly_update"}}]}, "unknown document"),
    ({"changes": [{"at": 20, "agent": 1, "document": "d", "edit": {"op": "monthly_update"}},
                  {"at": 20, "agent": 2, "document": "d", "edit": {"op": "monthly_update"}}]}, "strictly increase"),
    ({"changes": [{"at": 10, "agent": 1, "document": "d", "kind": "weird"}]}, "unknown kind"),
    ({"gas_schedule": {"Mine": 5}}, "unknown operations"),
    ({"crypto_profile": "rot13"}, "crypto profile"),
    ({"agents": {"count": 6, "behaviors": [{"agents": [1], "behavior": "sneaky"}]}}, "unknown behavior"),
])
def test_config_errors(patch, needle):
    with pytest.raises(ConfigError, match=needle):
        config_from_dict(base_raw(**patch))


def test_config_errors_are_collected_together():
    raw = base_raw(changes=[{"at": 0, "agent": 99, "document": "x", "kind": "benign", "edit": {"op": "?"}}])
    with pytest.raises(ConfigError) as info:
        config_from_dict(raw)
    assert str(info.value).count(";") >= 3


def test_empty_schedule_costs_only_setup():
    report = run_scenario(config_from_dict(base_raw()))
    assert [r[0] for r in report.gas_rows] == ["AddDocument", "AddUser"]
    assert report.sessions == [] and report.attempts == []


def test_drug_fixture_outcomes():
    report = run_scenario(load_config(fixture_path("drug_trial")))
    benign = [s for s in report.sessions if s["kind"] == "benign"]
    (malicious,) = [s for s in report.sessions if s["kind"] == "malicious"]
    assert len(benign) == 12 and all(s["outcome"] == "Accepted" for s in benign)
    assert (malicious["outcome"], malicious["disposition"]) == ("Rejected", "Distributed")
    assert sorted(a["reason"] for a in report.attempts) == ["NotAuthorized", "Replay"]
    assert {e["state"] for e in report.escrow} <= {"Refunded", "Withheld", "Distributed"}


def test_wheat_out_of_turn_votes_change_nothing():
    cfg = load_config(fixture_path("wheat"))
    report = run_scenario(cfg)
    clean = run_scenario(dataclasses.replace(cfg, behaviors=[]))
    assert [s["outcome"] for s in report.sessions] == [s["outcome"] for s in clean.sessions]
    refused = [l for name, lines in report.agent_traces.items() for l in lines if "NotSelected" in l]
    rejected_votes = dict((r[0], r[1]) for r in report.gas_rows).get("RejectedVote", 0)
    assert refused and len(refused) == rejected_votes
    assert all(name in {f"u{i:03d}" for i in range(80, 90)}
               for name, lines in report.agent_traces.items() for l in lines if "NotSelected" in l)


def test_cost_table_defaults():
    report = run_scenario(load_config(fixture_path("drug_trial")))
    rows = {r["op_name"]: r for r in report_costs(report)}
    assert rows["AddDocument"]["mean_gas"] == 139552
    assert rows["AddDocument"]["usd"] == Decimal("0.2511936")
    assert "RestartVote" not in rows and "RejectedVote" not in rows


def test_custom_schedule():
    cfg = config_from_dict(base_raw(gas_schedule={"AddUser": 1000}, gas_price=2))
    report = run_scenario(cfg)
    rows = {r["op_name"]: r for r in report_costs(report)}
    assert rows["AddUser"]["mean_gas"] == 1000
    assert rows["AddDocument"]["mean_gas"] == DEFAULT_GAS["AddDocument"]


def test_grid_rows():
    grid = grid_from_dict(yaml.safe_load(fixture_path("grid_default").read_text()))
    rows = run_analysis(grid)
    assert len(rows) == 19 and all(r.empirical <= r.bound for r in rows)
    single = run_analysis(grid_from_dict({"trials": 10, "sweeps": [{"n": 100, "s": 60, "t": 70}]}))
    assert len(single) == 1
    vacuous = run_analysis(grid_from_dict({"trials": 10, "sweeps": [{"n": 100, "s": 60, "t": [55, 60, 70]}]}))
    assert [r.bound for r in vacuous[:2]] == [1.0, 1.0] and all(r.flag for r in vacuous[:2])
    assert vacuous[2].flag == "" and vacuous[2].trials == 10
    with pytest.raises(ConfigError):
        grid_from_dict({"sweeps": []})


def test_analysis_output(tmp_path):
    rows = run_analysis(grid_from_dict({"trials": 5, "sweeps": [{"n": 20, "s": 10, "t": [12, 14]}]}))
    text = write_analysis(rows, tmp_path, "csv")
    assert text.splitlines()[0] == "n,s,t,p_f,bound,exact,empirical,trials,flag"
    assert (tmp_path / "failure_probability.png").exists()


def test_run_directory_is_deterministic(tmp_path):
    cfg = load_config(fixture_path("wheat"))
    a = write_run(run_scenario(cfg), tmp_path / "a")
    b = write_run(run_scenario(cfg), tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    assert "gas_cumulative.png" in names and "summary.json" in names
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert "flat-cost model" in (a / "summary.json").read_text()


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    out = tmp_path / "run"
    assert cli.main(["run", "drug_trial", "--out", str(out), "--seed", "5", "--no-figures"]) == 0
    assert capsys.readouterr().out.startswith("op_name,count,mean_gas,usd")
    assert cli.main(["report", str(out), "--format", "table"]) == 0
    assert "AddDocument" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text("agents: {count: 0}\n")
    assert cli.main(["run", str(bad)]) == 1
    assert cli.main(["report", str(tmp_path)]) == 1
    assert cli.main(["analyze", "grid_default", "--seed", "3", "--format", "table"]) == 0

    def boom(*a, **k):
        raise InvariantViolation("currency not conserved")

    monkeypatch.setattr("dataprov.scenario.run_scenario", boom)
    assert cli.main(["run", "drug_trial", "--out", str(tmp_path / "x")]) == 2
