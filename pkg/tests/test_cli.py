import json

import numpy as np
import pytest

from gsplab import cli
from gsplab import recsys as rs
from gsplab.numerics import Rng


def _write_config(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def _write_ratings_file(directory, seed=7):
    table = rs.synthetic_ratings(Rng(seed), user_count=40, item_count=12, density=0.6)
    path = directory / "u.data"
    with open(path, "w") as fh:
        for k in range(len(table)):
            fh.write(f"{table.users[k] + 1}\t{table.items[k] + 1}"
                     f"\t{int(table.ratings[k])}\t88000{k:04d}\n")
    return table


def test_selftest_passes(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["selftest", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["ok"] is True
    assert manifest["command"] == "selftest"
    assert set(manifest["assertions"]) == {
        "eigensolver_round_trip", "fourier_parseval", "equivariance", "gradient_check",
    }
    report = json.loads((out / "selftest.json").read_text())
    assert all(report["suites"].values())
    assert (out / "resolved_config.json").exists()


def test_equivariance_command_and_artifacts(tmp_path):
    out = tmp_path / "eq"
    cfg = _write_config(tmp_path, {"seed": 5, "params": {"trials": 6, "n": 10}})
    assert cli.main(["equivariance", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "equivariance.csv").read_text().strip().splitlines()
    assert lines[0] == ",".join(cli.EQUIVARIANCE_CSV_COLUMNS)
    assert len(lines) == 7
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["ok"] and len(manifest["config_hash"]) == 64
    assert str(out / "equivariance.csv") in manifest["files"]
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["seed"] == 5 and resolved["params"]["trials"] == 6
    assert resolved["params"]["degree"] == 4  # defaults are materialized


def test_equivariance_sweep_thread_count_is_immaterial():
    serial = cli.equivariance_sweep(8, 10, (1, 3, 1), 3, Rng(2), threads=1)
    threaded = cli.equivariance_sweep(8, 10, (1, 3, 1), 3, Rng(2), threads=3)
    assert serial == threaded


def test_stability_command_writes_all_csvs(tmp_path):
    out = tmp_path / "stab"
    cfg = _write_config(tmp_path, {"params": {"trials": 3, "contrast_trials": 2}})
    assert cli.main(["stability", "--config", cfg, "--out", str(out), "--seed", "1"]) == 0
    from gsplab import stability as st
    for name in ("stability_filter.csv", "stability_gnn.csv"):
        header = (out / name).read_text().splitlines()[0]
        assert header == ",".join(st.STABILITY_CSV_COLUMNS)
    header = (out / "contrast.csv").read_text().splitlines()[0]
    assert header == ",".join(st.CONTRAST_CSV_COLUMNS)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["assertions"]["dilation_within_bounds"] is True


def test_graphon_transfer_threads_byte_identical(tmp_path):
    cfg = _write_config(tmp_path, {"params": {"sizes": [8, 16], "ref_resolution": 32}})
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["graphon-transfer", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["graphon-transfer", "--config", cfg, "--out", str(out2),
                     "--threads", "2"]) == 0
    for name in ("transfer_filter.csv", "transfer_gnn.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_usage_errors_exit_2(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("GSPLAB_DATA_DIR", raising=False)
    bad_param = _write_config(tmp_path, {"params": {"bogus": 1}})
    assert cli.main(["stability", "--config", bad_param]) == 2
    assert "bogus" in capsys.readouterr().err

    bad_top = _write_config(tmp_path, {"not_a_field": 1}, "top.json")
    assert cli.main(["stability", "--config", bad_top]) == 2

    mismatched = _write_config(tmp_path, {"command": "selftest"}, "mis.json")
    assert cli.main(["stability", "--config", mismatched]) == 2

    broken = tmp_path / "broken.json"
    broken.write_text("{nope")
    assert cli.main(["stability", "--config", str(broken)]) == 2
    assert cli.main(["stability", "--config", str(tmp_path / "absent.json")]) == 2

    # movielens without any dataset location names the env var fallback
    assert cli.main(["movielens", "--out", str(tmp_path / "ml")]) == 2
    assert "GSPLAB_DATA_DIR" in capsys.readouterr().err
    # with a location but no file, the message names the missing path
    assert cli.main(["movielens", "--out", str(tmp_path / "ml"),
                     "--data-dir", str(tmp_path)]) == 2
    assert "u.data" in capsys.readouterr().err


def test_movielens_commands_on_synthetic_file(tmp_path, monkeypatch):
    _write_ratings_file(tmp_path)
    monkeypatch.setenv("GSPLAB_DATA_DIR", str(tmp_path))
    cfg = _write_config(tmp_path, {
        "seed": 3,
        "params": {"target_count": 2, "n_splits": 2, "epochs": 2, "models": ["linear"]},
    })
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert cli.main(["movielens", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["movielens", "--config", cfg, "--out", str(out2)]) == 0
    body = (out1 / "movielens_results.csv").read_bytes()
    assert body == (out2 / "movielens_results.csv").read_bytes()
    assert body.decode().splitlines()[0] == ",".join(rs.RESULTS_CSV_COLUMNS)
    assert len(body.decode().strip().splitlines()) == 3  # header + 1 model x 2 splits

    tcfg = _write_config(tmp_path, {
        "seed": 3, "params": {"sizes": [6, 12], "n_splits": 2, "epochs": 2},
    }, "tcfg.json")
    out3 = tmp_path / "t1"
    assert cli.main(["movielens-transfer", "--config", tcfg, "--out", str(out3)]) == 0
    lines = (out3 / "movielens_transfer.csv").read_text().strip().splitlines()
    assert lines[0] == ",".join(rs.TRANSFER_CSV_COLUMNS)
    # n = item_count row transfers exactly
    assert lines[-1].startswith("12,") and lines[-1].endswith(",0.0")


def test_failed_assertion_exits_1(tmp_path, monkeypatch):
    def always_red(params, seed, out_dir, args):
        return [], {"demo_assertion": False}

    monkeypatch.setitem(cli._HANDLERS, "equivariance", always_red)
    out = tmp_path / "red"
    assert cli.main(["equivariance", "--out", str(out)]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["ok"] is False and manifest["assertions"] == {"demo_assertion": False}


def test_crashed_run_exits_1_with_report(tmp_path, monkeypatch):
    def explode(params, seed, out_dir, args):
        raise RuntimeError("numerical meltdown")

    monkeypatch.setitem(cli._HANDLERS, "equivariance", explode)
    out = tmp_path / "crash"
    assert cli.main(["equivariance", "--out", str(out)]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert "numerical meltdown" in manifest["error"]
    assert manifest["ok"] is False
