import csv
import io
import json

import pytest

from pathfbsde.cli import main
from pathfbsde.pathcore import DiscretePath


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_csv(capsys):
    code, out, _ = run(capsys, "simulate", "--problem", "bm-terminal", "--n", "4",
                       "--samples", "3", "--seed", "7")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["sample", "t_i", "x0", "seed"]
    assert len(rows) == 1 + 3 * 5
    assert rows[1][1:3] == ["0.0", "0.0"] and rows[1][3] == "7"
    _, again, _ = run(capsys, "simulate", "--problem", "bm-terminal", "--n", "4",
                      "--samples", "3", "--seed", "7")
    assert again == out


def test_simulate_summary_with_history(capsys, tmp_path):
    h = DiscretePath.from_breakpoints([0.0, 0.2], [[0.0], [1.5]], end=0.5)
    path = tmp_path / "hist.json"
    path.write_text(json.dumps(h.to_json()))
    code, out, _ = run(capsys, "simulate", "--problem", "bm-terminal", "--n", "4",
                       "--samples", "10", "--history", str(path), "--summary")
    assert code == 0
    s = json.loads(out)
    assert s["t"][0] == 0.5 and s["mean"][0] == [1.5]


def test_solve_json(capsys):
    code, out, _ = run(capsys, "solve", "--problem", "discounted-terminal", "--param", "r=0.1",
                       "--n", "8", "--m", "2", "--samples", "2000", "--seed", "3")
    assert code == 0
    res = json.loads(out)
    assert {"Y0", "Y0_stderr", "Z0", "Z0_stderr", "trace", "wall_ms", "config"} <= set(res)
    assert len(res["trace"]) == 3
    assert res["config"]["params"] == {"r": 0.1} and res["config"]["seed"] == 3
    code, out, _ = run(capsys, "solve", "--problem", "discounted-terminal", "--n", "8",
                       "--samples", "2000", "--implicit")
    assert code == 0 and json.loads(out)["config"]["implicit"] is True


def test_solve_refuses_deep_nested(capsys):
    code, _, err = run(capsys, "solve", "--problem", "bm-terminal", "--n", "32",
                       "--samples", "10", "--estimator", "nested")
    assert code == 1 and "nested" in err


def test_bad_arguments(capsys):
    capsys.readouterr()
    with pytest.raises(SystemExit):
        main(["solve", "--problem", "no-such", "--n", "4", "--samples", "10"])
    with pytest.raises(SystemExit):
        main(["simulate", "--problem", "bm-terminal", "--n", "4", "--samples", "2",
              "--seed", "-1"])
    capsys.readouterr()
    code, _, err = run(capsys, "simulate", "--problem", "bm-terminal", "--n", "4",
                       "--samples", "2", "--history", "/nonexistent.json")
    assert code == 1 and err.startswith("error")


def test_sweep_and_fit(capsys, tmp_path):
    spec = {"problem": "discounted-terminal", "n_values": [4, 8, 16], "m_values": [1, 2, 3],
            "N": 2000, "seed": 2}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    out_dir = tmp_path / "out"
    code, _, _ = run(capsys, "sweep", "--spec", str(tmp_path / "spec.json"),
                     "--out", str(out_dir))
    assert code == 0
    assert (out_dir / "records.csv").exists() and (out_dir / "manifest.json").exists()
    code, out, _ = run(capsys, "fit", "--records", str(out_dir / "records.csv"),
                       "--axis", "mesh")
    assert code == 0
    fit = json.loads(out)
    assert fit["axis"] == "mesh" and len(fit["x"]) == 3


def test_sweep_exit_code_on_failure(capsys, tmp_path):
    spec = {"problem": "bm-terminal", "n_values": [4, 32], "m_values": [1], "N": 20,
            "estimator": "nested", "n_inner": 4}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    code, _, err = run(capsys, "sweep", "--spec", str(tmp_path / "spec.json"),
                       "--out", str(tmp_path / "o"))
    assert code == 2 and "n=32" in err


def test_oracle_file_spec(capsys, tmp_path):
    (tmp_path / "oracle.json").write_text(json.dumps({"ref": 0.0}))
    spec = {"problem": "bm-terminal", "n_values": [4], "m_values": [1], "N": 200,
            "reference": "oracle", "oracle_file": "oracle.json"}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    code, _, _ = run(capsys, "sweep", "--spec", str(tmp_path / "spec.json"),
                     "--out", str(tmp_path / "o"))
    assert code == 0
    row = list(csv.DictReader(open(tmp_path / "o" / "records.csv")))[0]
    assert float(row["ref"]) == 0.0
