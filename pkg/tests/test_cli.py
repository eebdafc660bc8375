import csv
import json
import subprocess
import sys

import pytest
import yaml

from hybridsc.cases import bundled_path
from hybridsc.cli import EXIT_CODES, fmt, main

N_CONTROLS = 90
ROWS_PER_CONTROL = 18 * 3 + 8  # every AC node/phase plus every DC node


def _csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _edited_case(tmp_path, edit):
    doc = yaml.safe_load(bundled_path().read_text())
    edit(doc)
    path = tmp_path / "case.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture(scope="module")
def sc_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sc")
    assert main(["sc", "--grid", "bundled", "--out", str(out)]) == 0
    return out


def test_number_format():
    assert fmt(1.0) == "1.00000000000e+00"
    assert fmt(-0.0) == "0.00000000000e+00"
    assert len(fmt(1 / 3).split("e")[0].replace(".", "")) == 12


def test_pf_writes_voltage_table(tmp_path, capsys):
    assert main(["pf", "--grid", "bundled", "--out", str(tmp_path)]) == 0
    msg = capsys.readouterr().out
    assert msg.startswith("converged in")
    assert float(msg.rsplit(" ", 1)[1]) <= 1e-8
    rows = _csv(tmp_path / "voltages.csv")
    assert rows[0] == ["node", "phase", "re", "im", "magnitude", "angle_deg", "p", "q"]
    assert len(rows) - 1 == 18 * 3 + 8
    slack = rows[1]
    assert float(slack[4]) == pytest.approx(1.05)


def test_sc_row_counts(sc_dir):
    v = _csv(sc_dir / "voltage_sc.csv")
    i = _csv(sc_dir / "current_sc.csv")
    assert v[0] == ["control", "node", "phase", "d|E|/dx", "dangle/dx", "dE'/dx", "dE''/dx"]
    assert len(v) - 1 == N_CONTROLS * ROWS_PER_CONTROL == 5580
    assert len(i) - 1 == N_CONTROLS * (17 * 3 + 7)
    assert len({row[0] for row in v[1:]}) == N_CONTROLS


def test_sc_slack_rows_are_zero(sc_dir):
    for row in _csv(sc_dir / "voltage_sc.csv")[1:]:
        if row[1] == "B01":
            assert all(float(v) == 0.0 for v in row[3:])


def test_outputs_are_byte_identical(tmp_path, sc_dir):
    assert main(["sc", "--grid", "bundled", "--out", str(tmp_path), "--parallel"]) == 0
    for name in ("voltage_sc.csv", "current_sc.csv"):
        assert (tmp_path / name).read_bytes() == (sc_dir / name).read_bytes()


def test_sc_from_saved_operating_point(tmp_path, sc_dir):
    assert main(["pf", "--grid", "bundled", "--out", str(tmp_path), "--format", "json"]) == 0
    doc = json.loads((tmp_path / "operating_point.json").read_text())
    assert doc["grid"] == "cigre-lv-hybrid"
    out = tmp_path / "sc"
    assert main(["sc", "--grid", "bundled", "--op", str(tmp_path / "operating_point.json"), "--out", str(out)]) == 0
    assert (out / "voltage_sc.csv").read_bytes() == (sc_dir / "voltage_sc.csv").read_bytes()


def test_sc_json_matches_csv(tmp_path, sc_dir):
    assert main(["sc", "--grid", "bundled", "--out", str(tmp_path), "--format", "json"]) == 0
    doc = json.loads((tmp_path / "sensitivities.json").read_text())
    assert doc["angle_unit"] == "rad"
    rows = _csv(sc_dir / "voltage_sc.csv")[1:]
    assert len(doc["voltage"]["rows"]) == len(rows)
    for a, b in zip(doc["voltage"]["rows"][:200], rows[:200]):
        assert a[:3] == b[:3] and a[3:] == [float(v) for v in b[3:]]


def test_validate_summary(tmp_path, capsys):
    assert main(["validate", "--grid", "bundled", "--out", str(tmp_path)]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].split()[:3] == ["Class", "Network", "Bus"]
    assert len(table) - 1 >= 6
    summary = _csv(tmp_path / "validation_summary.csv")
    kinds = {row[0] for row in summary[1:]}
    assert {"ac_p", "ac_q", "dc_p", "ic_p", "ic_q", "ic_vdc"} <= kinds
    errors = _csv(tmp_path / "validation_errors.csv")
    assert len(errors) - 1 == N_CONTROLS * (17 * 6 + 8)


def test_validate_json_central(tmp_path):
    args = ["validate", "--grid", "bundled", "--out", str(tmp_path), "--format", "json", "--central",
            "--delta-p", "0.002", "--delta-v", "0.002"]
    assert main(args) == 0
    doc = json.loads((tmp_path / "validation.json").read_text())
    assert doc["mode"] == "central" and doc["delta_p"] == 0.002
    assert max(s["max_abs"] for s in doc["summary"]) < 1e-3


@pytest.mark.parametrize(
    "argv",
    [
        ["pf", "--grid", "bundled", "--out", "x", "--bogus"],
        ["pf", "--grid", "bundled", "--out", "x", "--tol", "1e-3"],
        ["pf", "--grid", "bundled", "--out", "x", "--tol", "1e-13"],
        ["pf", "--grid", "bundled", "--out", "x", "--max-iter", "0"],
        ["pf", "--grid", "bundled", "--out", "x", "--format", "xml"],
        ["pf", "--grid", "bundled", "--out", "x", "--central"],  # validate-only flag
        ["sc", "--grid", "bundled", "--out", "x", "--delta-p", "0.01"],
        ["validate", "--grid", "bundled", "--out", "x", "--delta-p", "-1"],
        ["frobnicate"],
    ],
)
def test_bad_arguments_rejected(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert not (tmp_path / "x").exists()


def test_missing_file(tmp_path, capsys):
    code = main(["pf", "--grid", str(tmp_path / "none.yaml"), "--out", str(tmp_path / "o")])
    assert code == EXIT_CODES["file"] == 3
    assert capsys.readouterr().err.startswith("error: file:")


def test_malformed_file(tmp_path):
    path = _edited_case(tmp_path, lambda d: d["ac_nodes"][1].update(colour="red"))
    assert main(["pf", "--grid", str(path), "--out", str(tmp_path / "o")]) == 3


def test_invalid_grid(tmp_path, capsys):
    path = _edited_case(tmp_path, lambda d: d["ac_nodes"][1].update(role="slack"))
    assert main(["pf", "--grid", str(path), "--out", str(tmp_path / "o")]) == 4
    assert capsys.readouterr().err.startswith("error: invalid-grid:")


def test_non_convergence_leaves_no_files(tmp_path, capsys):
    out = tmp_path / "o"
    out.mkdir()
    assert main(["sc", "--grid", "bundled", "--out", str(out), "--max-iter", "2"]) == 5
    assert capsys.readouterr().err.startswith("error: non-convergence:")
    assert list(out.iterdir()) == []


def test_bad_operating_point_file(tmp_path):
    bad = tmp_path / "op.json"
    bad.write_text('{"e_ac": [[1, 2]]}')
    assert main(["sc", "--grid", "bundled", "--op", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert not (tmp_path / "o" / "voltage_sc.csv").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "hybridsc.cli", "pf", "--grid", "bundled", "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "voltages.csv").exists()
