import csv
import json

import pytest

from distb.cli import main

SMALL = """
[scenario]
seed = 3
duration_s = 20
window_s = 5
fast_crypto = true

[nodes]
sensors = 8

[attack]
tamper_prob = 0.05
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def test_run_emits_csv_and_svg(cfg, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out-dir", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert {r["variant"] for r in rows} == {"core", "distb"}
    assert len(rows) == 8
    for name in ("throughput.svg", "security_rate.svg", "node_failure.svg"):
        assert (out / name).read_text().startswith("<?xml")


def test_run_twice_identical(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out-dir", str(a)]) == 0
    assert main(["run", str(cfg), "--out-dir", str(b)]) == 0
    for name in ("metrics.csv", "throughput.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_flag_changes_output(cfg, tmp_path):
    main(["run", str(cfg), "--out-dir", str(tmp_path / "a")])
    main(["run", str(cfg), "--out-dir", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


def test_env_out_dir(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("DISTB_OUT_DIR", str(tmp_path / "env"))
    assert main(["run", str(cfg), "--variant", "core"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "env" / "metrics.csv")))
    assert {r["variant"] for r in rows} == {"core"}


def test_trace_flag(cfg, tmp_path):
    out = tmp_path / "t"
    assert main(["run", str(cfg), "--out-dir", str(out), "--trace", "--variant", "core"]) == 0
    first = (out / "trace_core.tsv").read_text().splitlines()[0].split("\t")
    assert len(first) == 4 and first[3] in {"PacketSend", "MobilityStep", "MetricWindow"}


def test_unwritable_dir_exit_4(cfg, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    assert main(["run", str(cfg), "--out-dir", str(blocker / "sub")]) == 4


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[ledger]\ntau = 0.9\n")
    assert main(["run", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["validate", str(tmp_path / "missing.cfg")]) == 2
    bad.write_text("[traffic]\npacket_size = 512\n")
    assert main(["validate", str(bad)]) == 2
    assert main(["validate", str(bad), "--allow-nonpaper"]) == 0


def test_validate_prints_effective_config(cfg, capsys):
    assert main(["validate", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "duration_s = 20.0" in out and "tau = 0.66" in out
    assert main(["validate", "--schema"]) == 0
    assert "[attack]" in capsys.readouterr().out


def test_shipped_name_resolution(capsys):
    assert main(["validate", "fig7"]) == 0
    assert "compromise_success_distb" in capsys.readouterr().out


def test_sweep_nodes(cfg, tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", str(cfg), "--param", "nodes", "--values", "10,20,30,40,50",
                 "--out-dir", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert [r["value"] for r in rows] == ["10", "20", "30", "40", "50"]
    assert (out / "nodes=30" / "metrics.csv").exists()
    assert (out / "sweep_nodes_node_failure_pct.svg").exists()


def test_sweep_isolation_under_reordering(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["sweep", str(cfg), "--param", "tamper_prob", "--values", "0.01,0.1", "--out-dir", str(a)])
    main(["sweep", str(cfg), "--param", "tamper_prob", "--values", "0.1,0.01", "--out-dir", str(b)])
    for v in ("0.01", "0.1"):
        name = f"tamper_prob={v}"
        assert (a / name / "metrics.csv").read_bytes() == (b / name / "metrics.csv").read_bytes()


def test_sweep_tau_moves_forged_boundary(tmp_path):
    # 6 miners, 4 of them colluding: quorum is 4 at 0.60 and 5 at 0.70 / 0.80
    p = tmp_path / "forge.cfg"
    p.write_text(SMALL + "forge_block_rate = 0.5\ncompromised_miners = 4\n")
    out = tmp_path / "tau"
    assert main(["sweep", str(p), "--param", "tau", "--values", "0.60,0.70,0.80",
                 "--out-dir", str(out), "--variant", "distb"]) == 0
    rows = {r["value"]: r for r in csv.DictReader(open(out / "summary.csv"))}
    assert [rows[t]["quorum_needed"] for t in ("0.60", "0.70", "0.80")] == ["4", "5", "5"]
    assert int(rows["0.60"]["forged_attempts"]) > 0
    assert int(rows["0.60"]["forged_admitted"]) > 0
    assert rows["0.70"]["forged_admitted"] == rows["0.80"]["forged_admitted"] == "0"


def test_sweep_errors(cfg, tmp_path):
    assert main(["sweep", str(cfg), "--param", "tau", "--values", "", "--out-dir", str(tmp_path)]) == 2
    assert main(["sweep", str(cfg), "--param", "label", "--values", "x", "--out-dir", str(tmp_path)]) == 2
    assert main(["sweep", str(cfg), "--param", "tau", "--values", "0.95", "--out-dir", str(tmp_path)]) == 2


def test_inspect_outputs_json(cfg, capsys):
    assert main(["inspect", str(cfg), "--at", "5"]) == 0
    snap = json.loads(capsys.readouterr().out)
    assert snap["now_ms"] == 5000 and snap["mode"] == "distb"
    assert snap["counters"]["packet_ins"] >= 1 and "ledger" in snap


def test_export_chain(cfg, tmp_path):
    path = tmp_path / "chain.ndjson"
    assert main(["export-chain", str(cfg), "--out", str(path)]) == 0
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert recs[0]["height"] == 0 and len(recs) > 5
    for prev, cur in zip(recs, recs[1:]):
        assert cur["prev_hash"] == prev["hash"] and cur["height"] == prev["height"] + 1
