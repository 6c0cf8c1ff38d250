import json

import pytest
from click.testing import CliRunner

from qkdcorr.cli import main

TABLE_RUN = {
    "protocol": {"xi": 1},
    "channel": {"eta_det": 1.0, "dark_count": 1e-6, "misalignment": 0.01, "loss_db": "0:20:10"},
    "epsilons": {"floor": 1e-6},
    "tables": {"dir": "bundled"},
}


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)


def test_skr_writes_csv_and_manifest(runner, tmp_path):
    out = tmp_path / "ideal.csv"
    res = invoke(runner, "skr", "--preset", "ideal-250", "--loss", "0:10:5", "--threads", 1, "--out", out)
    assert res.exit_code == 0, res.output
    lines = out.read_text().splitlines()
    assert lines[0].split(",")[0] == "loss_db"
    assert len(lines) == 4
    manifest = json.loads(out.with_suffix(".manifest.json").read_text())
    for key in ("engine_version", "config_hash", "table_hashes", "mode", "wall_time_s", "warnings"):
        assert key in manifest
    assert manifest["warnings"] == []
    assert manifest["flagged_sequences"] == 0


def test_threads_do_not_change_output(runner, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(TABLE_RUN))
    one, eight = tmp_path / "one.csv", tmp_path / "eight.csv"
    assert invoke(runner, "skr", "--config", cfg, "--threads", 1, "--out", one).exit_code == 0
    assert invoke(runner, "skr", "--config", cfg, "--threads", 8, "--out", eight).exit_code == 0
    assert one.read_bytes() == eight.read_bytes()


def test_compare(runner, tmp_path):
    a = tmp_path / "a.csv"
    invoke(runner, "skr", "--preset", "ideal-250", "--loss", "0:10:5", "--threads", 1, "--out", a)
    res = invoke(runner, "compare", a, a)
    assert res.exit_code == 0
    assert "ratio at 10 dB: 1\n" in res.output

    header = "loss_db,skr_per_pulse,skr_bps\n"
    z = tmp_path / "z.csv"
    z.write_text(header + "0,1e-3,1e5\n10,0,0\n")
    zz = tmp_path / "zz.csv"
    zz.write_text(header + "0,0,0\n10,0,0\n")
    res = invoke(runner, "compare", z, zz)
    assert res.exit_code == 0
    assert "0,1e5,0,inf" in res.output
    assert "10,0,0,undefined" in res.output

    short = tmp_path / "short.csv"
    short.write_text(header + "0,1e-3,1e5\n")
    res = invoke(runner, "compare", z, short)
    assert res.exit_code == 2
    assert "10 dB" in res.output


def test_characterize(runner, tmp_path):
    out = tmp_path / "eps.json"
    res = invoke(runner, "characterize", "--tables", "bundled", "--out", out, "--floor", 1e-6)
    assert res.exit_code == 0, res.output
    doc = json.loads(out.read_text())
    assert doc["format"] == "qkdcorr-epsilons"
    assert "max_deviation_by_setting" in doc["summary"]
    assert "worst history" in res.output


def test_dump_lp(runner, tmp_path):
    res = invoke(runner, "dump-lp", "--preset", "ideal-250", "--loss", 5, "--bound", "T1")
    assert res.exit_code == 0
    lines = res.output.splitlines()
    assert lines[0].startswith("# T1")
    assert sum(1 for ln in lines if not ln.startswith("#")) == 138


def test_input_errors(runner, tmp_path):
    res = invoke(runner, "skr", "--preset", "ideal-250", "--mode", "fine", "--mode", "coarse")
    assert res.exit_code == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"epsilons": {"floor": 0.0}, "tables": {"dir": "nowhere"}}))
    res = invoke(runner, "skr", "--config", bad, "--threads", 1)
    assert res.exit_code == 2
    assert "not found" in res.output
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"protocol": {"xi": -1, "f_ec": 0.5}}))
    res = invoke(runner, "skr", "--config", cfg)
    assert res.exit_code == 2
    assert "xi" in res.output and "f_ec" in res.output


def test_flagged_run_exits_three(runner, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"channel": {"eta_det": 0.0, "dark_count": 0.0, "loss_db": [0]}}))
    res = invoke(runner, "skr", "--config", cfg, "--threads", 1, "--out", tmp_path / "o.csv")
    assert res.exit_code == 3
