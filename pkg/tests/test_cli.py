import json

import pytest

from layered_cran import __version__
from layered_cran.cli import (CSV_HEADER, PRESETS, ConfigDiagnostic, main, parse_config,
                              read_csv)

SMALL = """\
name = small
strategies = layered_cap, conv_cbp
axis = n_el
values = 1, 2
n_ru = 1
n_ms = 2
n_az = 2
fronthaul_bits = 2
power_db = 0
coherence = 10
n_blocks = 3
max_outer = 2
seed = 5
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def test_validate_ok(small, capsys):
    assert main(["validate", str(small)]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_negative_power(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(SMALL.replace("power_db = 0\n", "").replace("n_ms = 2", "n_ms = 2\npower = -1"))
    assert main(["validate", str(path)]) == 1
    err = capsys.readouterr().err
    assert "power" in err and "line" in err


def test_unknown_strategy_lists_valid_names(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(SMALL.replace("layered_cap, conv_cbp", "layered_cap, magic"))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "magic" in err and "layered_cbp" in err
    assert not (tmp_path / "o").exists()


def test_parse_config_collects_all_diagnostics():
    text = SMALL.replace("n_ru = 1", "n_ru = 0").replace("axis = n_el", "axis = color")
    with pytest.raises(ConfigDiagnostic) as exc:
        parse_config(text)
    joined = "\n".join(exc.value.diagnostics)
    assert "n_ru" in joined and "axis" in joined


def test_run_and_replay_are_byte_identical(small, tmp_path):
    out = tmp_path / "run"
    assert main(["run", str(small), "--out", str(out)]) == 0
    for name in ("layered_cap.csv", "conv_cbp.csv", "run.json", "timing.json"):
        assert (out / name).exists()
    csv = (out / "layered_cap.csv").read_text()
    assert csv.splitlines()[0] == CSV_HEADER
    rows = read_csv(out / "layered_cap.csv")
    assert [r["axis_value"] for r in rows] == [1.0, 2.0]
    assert all(r["n_blocks"] == 3 and r["seed"] == 5 for r in rows)
    assert all(r["sum_rate"] == pytest.approx(sum(r["per_ms_rates"])) for r in rows)

    assert main(["replay", str(out / "run.json")]) == 0
    for name in ("layered_cap.csv", "conv_cbp.csv", "run.json"):
        assert (out / "replay" / name).read_bytes() == (out / name).read_bytes()

    # a different seed in the sidecar changes the numbers
    side = json.loads((out / "run.json").read_text())
    side["config"]["seed"] = 6
    edited = tmp_path / "edited.json"
    edited.write_text(json.dumps(side))
    assert main(["replay", str(edited), "--out", str(tmp_path / "e")]) == 0
    assert (tmp_path / "e" / "layered_cap.csv").read_text() != csv


def test_replay_refuses_version_mismatch(small, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", str(small), "--out", str(out), "--blocks", "1"]) == 0
    side = json.loads((out / "run.json").read_text())
    assert side["version"] == __version__
    side["version"] = "0.0.0-other"
    (out / "run.json").write_text(json.dumps(side))
    assert main(["replay", str(out / "run.json")]) == 2
    assert "version" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg")]) == 4


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_parse(name):
    cfg = parse_config(PRESETS[name])
    assert cfg.name == name
    assert len(cfg.strategies) == 4
    assert len(cfg.values) >= 3


def test_replay_with_edited_tolerance_runs(small, tmp_path):
    out = tmp_path / "run"
    assert main(["run", str(small), "--out", str(out), "--blocks", "1"]) == 0
    side = json.loads((out / "run.json").read_text())
    side["config"]["solver"]["dc_tol"] = 1e-3
    edited = tmp_path / "edited.json"
    edited.write_text(json.dumps(side))
    assert main(["replay", str(edited), "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "run.json").read_text())["config"]["solver"]["dc_tol"] == 1e-3
