import csv
import json

import pytest

from byzagg import __version__
from byzagg.cli import CSV_HEADER, ConfigError, build_config, main, run_id, snapshot_config

MINIMAL = """
[experiment]
m = 12
n = 4
d = 3
T = 5
epsilon = 0.25
seed = 7

[estimator]
kind = filtering

[attack]
kind = ima
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(MINIMAL)
    return path


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_run_writes_csv_and_manifest(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    metrics = capsys.readouterr().out.strip()
    rows = _rows(metrics)
    assert tuple(rows[0]) == CSV_HEADER
    assert len(rows) == 1 + 5
    assert [r[1] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
    assert {r[16] for r in rows[1:]} == {"7"}
    assert {r[2] for r in rows[1:]} == {"filtering"}
    raw = open(metrics, "rb").read()
    assert b"\r" not in raw
    manifest = json.loads((out / rows[1][0] / "manifest.json").read_text())
    assert manifest["run_id"] == rows[1][0] and manifest["rounds"] == 5
    assert manifest["version"] == __version__


def test_rerun_is_byte_identical(config, tmp_path, capsys):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(config), "--out", str(out_a)])
    first = capsys.readouterr().out.strip()
    main(["run", "--config", str(config), "--out", str(out_b)])
    second = capsys.readouterr().out.strip()
    assert open(first, "rb").read() == open(second, "rb").read()


def test_seed_override_changes_run_id(config, tmp_path, capsys):
    main(["run", "--config", str(config), "--out", str(tmp_path), "--seed", "99"])
    rows = _rows(capsys.readouterr().out.strip())
    assert {r[16] for r in rows[1:]} == {"99"}
    snap = snapshot_config(MINIMAL)
    assert rows[1][0] == run_id(snap, 99) != run_id(snap, 7)


def test_out_from_environment(config, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BYZAGG_OUT", str(tmp_path / "env"))
    assert main(["run", "--config", str(config)]) == 0
    assert capsys.readouterr().out.startswith(str(tmp_path / "env"))
    assert sorted(p.name for p in tmp_path.iterdir()) == ["env", "exp.ini"]


def test_missing_key_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(MINIMAL.replace("m = 12\n", ""))
    assert main(["run", "--config", str(path), "--out", str(tmp_path)]) == 2
    assert "'m'" in capsys.readouterr().err


@pytest.mark.parametrize("edit", [
    ("kind = filtering", "kind = median"),
    ("kind = ima", "kind = teleport"),
    ("T = 5", "T = five"),
    ("[attack]", "[attacker]"),
    ("seed = 7", "seed = 7\ncolour = red"),
])
def test_bad_config_exit_2(tmp_path, edit):
    path = tmp_path / "bad.ini"
    path.write_text(MINIMAL.replace(*edit))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_missing_file_exit_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "nope.ini")]) == 2


def test_sweep_layout(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["sweep", "--config", str(config), "--axis", "n", "--values", "4,8", "--seeds", "2", "--out", str(out)]) == 0
    sweep_csv = capsys.readouterr().out.strip()
    sweep_dir = out / sweep_csv.split("/")[-2]
    runs = [p for p in sweep_dir.iterdir() if p.is_dir()]
    assert len(runs) == 4
    rows = _rows(sweep_csv)
    assert rows[0] == ["axis", "value", "seeds", "plateau_median", "plateau_min", "plateau_max", "run_ids"]
    assert [r[1] for r in rows[1:]] == ["4", "8"]
    for r in rows[1:]:
        assert float(r[4]) <= float(r[3]) <= float(r[5])
        assert all((sweep_dir / rid / "metrics.csv").exists() for rid in r[6].split(";"))


def test_sweep_d_two_rows(config, tmp_path, capsys):
    assert main(["sweep", "--config", str(config), "--axis", "d", "--values", "16,256", "--seeds", "1",
                 "--out", str(tmp_path)]) == 0
    assert len(_rows(capsys.readouterr().out.strip())) == 3


def test_sweep_errors(config, tmp_path):
    base = ["sweep", "--config", str(config), "--axis", "n", "--out", str(tmp_path)]
    assert main(base + ["--values", ""]) == 2
    assert main(base + ["--values", "4,x"]) == 2
    assert main(base + ["--values", "4", "--seeds", "0"]) == 2
    assert main(["sweep", "--config", str(config), "--axis", "H", "--values", "1"]) == 2


def test_accept(capsys):
    assert main(["accept", "--suite", "A4"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("A4 PASS")
    assert main(["accept", "--suite", "A11"]) == 2


def test_print_defaults_round_trips(capsys):
    assert main(["--print-defaults"]) == 0
    text = capsys.readouterr().out
    assert "[experiment]" in text and "m = <required>" in text
    filled = text.replace("m = <required>", "m = 10").replace("n = <required>", "n = 2")
    filled = filled.replace("d = <required>", "d = 2").replace("T = <required>", "T = 1")
    cfg = build_config(snapshot_config(filled))
    assert (cfg.m, cfg.n, cfg.d, cfg.T) == (10, 2, 2, 1)


def test_build_config_reports_section():
    with pytest.raises(ConfigError, match=r"\[experiment\] schedule"):
        build_config(snapshot_config(MINIMAL.replace("seed = 7", "seed = 7\nschedule = cosine")))
