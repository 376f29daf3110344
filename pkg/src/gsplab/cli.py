"""Command-line entry point: experiments from JSON configs to CSV results.

Subcommands map one-to-one onto the experiment modules (equivariance
checks, stability sweeps, graphon transfer sweeps, the two recommendation
experiments, and a quick numerical selftest). Every run writes its resolved
configuration and a manifest (config hash, timestamps, produced files,
assertion outcomes) next to the result CSVs; the manifest is written
atomically so an interrupted run never leaves a truncated one. Exit codes:
0 all built-in assertions passed, 1 an assertion or the run itself failed,
2 usage/config errors.
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import filters as fl
from . import gnn
from . import graphon as gw
from . import recsys as rs
from . import stability as st
from .graph import gft, igft, normalize_shift, permute_shift, permute_signal
from .graph import Permutation, weighted_erdos_renyi
from .numerics import Rng, sym_eig

__all__ = [
    "COMMANDS",
    "EQUIVARIANCE_CSV_COLUMNS",
    "ConfigError",
    "equivariance_sweep",
    "write_equivariance_csv",
    "selftest_report",
    "main",
]

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
EQUIVARIANCE_CSV_COLUMNS = ["trial", "n", "filter_dev", "gnn_dev"]
COMMANDS = ("equivariance", "stability", "graphon-transfer",
            "movielens", "movielens-transfer", "selftest")


class ConfigError(Exception):
    """A malformed config or command line; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Equivariance sweep (relabeling identities for filters and GNNs)
# ---------------------------------------------------------------------------

def _equivariance_trial(trial, n, features, degree, rng: Rng):
    """Relative deviation of the filter and GNN relabeling identities."""
    trial_rng = rng.spawn(trial)
    shift = normalize_shift(weighted_erdos_renyi(n, 0.4, trial_rng))
    taps = trial_rng.uniform(-1.0, 1.0, size=degree + 1)
    arch = gnn.GnnArchitecture(tuple(features), (degree,) * (len(features) - 1))
    params = gnn.init_parameters(arch, trial_rng)
    x = trial_rng.normal(n)
    perm = Permutation.random(n, trial_rng)

    relabeled_shift = permute_shift(shift, perm)
    relabeled_x = permute_signal(x, perm)

    def deviation(a, b):
        # a relu GNN can output exactly zero; the identity then holds as 0 == 0
        scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-30)
        return float(np.linalg.norm(a - b) / scale)

    y = fl.filter_apply(shift, taps, x)
    swapped = fl.filter_apply(relabeled_shift, taps, relabeled_x)
    filter_dev = deviation(permute_signal(y, perm), swapped)

    out = gnn.gnn_forward(arch, params, shift, x[:, None])
    swapped = gnn.gnn_forward(arch, params, relabeled_shift, relabeled_x[:, None])
    gnn_dev = deviation(permute_signal(out, perm), swapped)
    return {"trial": trial, "n": n, "filter_dev": filter_dev, "gnn_dev": gnn_dev}


def equivariance_sweep(trials, n, features, degree, rng: Rng, threads=1):
    """Relabeling-identity deviations over random graphs, one row per trial."""
    return _parallel_map(
        lambda t: _equivariance_trial(t, n, features, degree, rng),
        range(trials), threads,
    )


def write_equivariance_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EQUIVARIANCE_CSV_COLUMNS)
        for row in rows:
            writer.writerow([row["trial"], row["n"],
                             repr(row["filter_dev"]), repr(row["gnn_dev"])])


# ---------------------------------------------------------------------------
# Selftest: quick numerical health checks with no configuration surface
# ---------------------------------------------------------------------------

def _selftest_eigensolver(rng):
    m = rng.normal((24, 24))
    m = 0.5 * (m + m.T)
    eig = sym_eig(m)
    recon = eig.vectors @ np.diag(eig.values) @ eig.vectors.T
    ortho = eig.vectors.T @ eig.vectors - np.eye(24)
    scale = np.linalg.norm(m)
    return bool(np.linalg.norm(recon - m) <= 1e-10 * scale
                and np.abs(ortho).max() <= 1e-12)


def _selftest_fourier(rng):
    s = rng.normal((16, 16))
    s = 0.5 * (s + s.T)
    x = rng.normal(16)
    xt = gft(s, x)
    parseval = abs(np.linalg.norm(xt) - np.linalg.norm(x)) <= 1e-10 * np.linalg.norm(x)
    round_trip = np.linalg.norm(igft(s, xt) - x) <= 1e-10 * np.linalg.norm(x)
    return bool(parseval and round_trip)


def _selftest_equivariance(rng):
    rows = equivariance_sweep(10, 12, (1, 4, 1), 4, rng)
    worst = max(max(r["filter_dev"], r["gnn_dev"]) for r in rows)
    return bool(worst <= 1e-10)


def _selftest_gradients(rng):
    arch = gnn.GnnArchitecture((1, 3, 1), (2, 2))
    shift = normalize_shift(weighted_erdos_renyi(8, 0.5, rng))
    params = gnn.init_parameters(arch, rng)
    x = rng.normal(8)[:, None]
    node, target = 3, 2.0

    def loss_now():
        out = gnn.gnn_forward(arch, params, shift, x)
        return gnn.loss_and_grad(out, node, target, gnn.LossKind.MSE_READOUT)[0]

    out, tape = gnn.gnn_forward(arch, params, shift, x, with_tape=True)
    _, dout = gnn.loss_and_grad(out, node, target, gnn.LossKind.MSE_READOUT)
    grads = gnn.gnn_backward(arch, params, shift, tape, dout)
    analytic = np.concatenate([g.ravel() for g in grads.banks] + [grads.readout.ravel()])
    arrays = list(params.banks) + [params.readout]
    numeric = np.zeros_like(analytic)
    pos, step = 0, 1e-6
    for arr in arrays:
        flat = arr.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_now()
            flat[i] = keep - step
            down = loss_now()
            flat[i] = keep
            numeric[pos] = (up - down) / (2 * step)
            pos += 1
    scale = np.maximum(np.abs(numeric), 1e-8)
    return bool(np.max(np.abs(analytic - numeric) / scale) <= 1e-5)


def selftest_report(seed):
    rng = Rng(seed)
    return {
        "eigensolver_round_trip": _selftest_eigensolver(rng.spawn(0)),
        "fourier_parseval": _selftest_fourier(rng.spawn(1)),
        "equivariance": _selftest_equivariance(rng.spawn(2)),
        "gradient_check": _selftest_gradients(rng.spawn(3)),
    }


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def _parallel_map(fn, items, threads):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))  # order-preserving merge


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None


def _take_params(params, defaults, command):
    """Overlay user params on the command's defaults, rejecting unknown keys."""
    if not isinstance(params, dict):
        raise ConfigError("'params' must be a JSON object")
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigError(
            f"unknown parameter(s) for {command!r}: {sorted(unknown)}; "
            f"known: {sorted(defaults)}"
        )
    resolved = dict(defaults)
    resolved.update(params)
    return resolved


_PARAM_DEFAULTS = {
    "equivariance": {
        "trials": 100, "n": 16, "degree": 4, "features": [1, 4, 1],
    },
    "stability": {
        "trials": 50, "n": 30, "alpha": 0.01, "edge_probability": 0.3,
        "models": list(st.PERTURBATION_MODELS), "filter_degree": 20,
        "gnn_features": [1, 2, 1], "structural_drop": 0.05,
        "contrast": True, "contrast_trials": 20,
    },
    "graphon-transfer": {
        "mode": "both", "sizes": [64, 128, 256, 512], "ref_resolution": 1024,
        "c": 0.35, "beta": 5.0, "layers": 2, "degree": 8,
        "inside_level": 0.3, "grid_size": 4096,
    },
    "movielens": {
        "target_count": 6, "max_items": None, "min_common": 3,
        "graph_from": "train", "n_splits": 10, "split_seed": 0,
        "epochs": 40, "batch_size": 5, "learning_rate": 5e-3,
        "models": None, "data_dir": None, "data_file": "u.data",
    },
    "movielens-transfer": {
        "sizes": [118, 203, 338, 603, 1682], "target_item": None,
        "min_common": 3, "graph_from": "train", "n_splits": 10,
        "split_seed": 0, "epochs": 40, "batch_size": 5,
        "learning_rate": 5e-3, "data_dir": None, "data_file": "u.data",
    },
    "selftest": {},
}


def _resolve(args):
    """Merge config file and flags into (seed, out_dir, params)."""
    config = _load_json(args.config) if args.config else {}
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    allowed = {"command", "seed", "output_dir", "params"}
    unknown = set(config) - allowed
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}; known: {sorted(allowed)}")
    if config.get("command") is not None and config["command"] != args.command:
        raise ConfigError(
            f"config is for command {config['command']!r}, invoked as {args.command!r}"
        )
    seed = args.seed if args.seed is not None else int(config.get("seed", 20240817))
    out_dir = args.out or config.get("output_dir") or "results"
    params = _take_params(config.get("params", {}),
                          _PARAM_DEFAULTS[args.command], args.command)
    return seed, out_dir, params


def _resolve_dataset(params, args):
    data_dir = args.data_dir or params.get("data_dir") or os.environ.get("GSPLAB_DATA_DIR")
    if not data_dir:
        raise ConfigError(
            "no dataset location: pass --data-dir, set params.data_dir, "
            "or set the GSPLAB_DATA_DIR environment variable"
        )
    path = os.path.join(data_dir, params.get("data_file") or "u.data")
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}")
    return path


def _write_json_atomic(path, payload):
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finite(rows, keys):
    return all(math.isfinite(float(r[k])) for r in rows for k in keys)


# ---------------------------------------------------------------------------
# Command handlers: each returns (files, assertions)
# ---------------------------------------------------------------------------

def _run_equivariance(params, seed, out_dir, args):
    rows = equivariance_sweep(params["trials"], params["n"], params["features"],
                              params["degree"], Rng(seed), threads=args.threads)
    path = os.path.join(out_dir, "equivariance.csv")
    write_equivariance_csv(path, rows)
    worst = max(max(r["filter_dev"], r["gnn_dev"]) for r in rows)
    return [path], {"relabeling_identities_within_1e-10": worst <= 1e-10}


def _run_stability(params, seed, out_dir, args):
    cfg = st.StabilitySweepConfig(
        trials=params["trials"], n=params["n"], alpha=params["alpha"],
        edge_probability=params["edge_probability"],
        models=tuple(params["models"]), filter_degree=params["filter_degree"],
        gnn_features=tuple(params["gnn_features"]),
        structural_drop=params["structural_drop"],
    )
    rng = Rng(seed)
    chunks = _parallel_map(lambda t: st.stability_sweep(cfg, rng, trial_indices=[t]),
                           range(cfg.trials), args.threads)
    rows = [row for chunk in chunks for row in chunk]
    files = []
    for subject in ("filter", "gnn"):
        path = os.path.join(out_dir, f"stability_{subject}.csv")
        st.write_stability_csv(path, rows, subject=subject)
        files.append(path)

    dilation_ok = True
    for row in rows:
        if row["model"] != "dilation":
            continue
        bound = row["bound_thm1"] if row["subject"] == "filter" else row["bound_thm2"]
        dilation_ok &= row["empirical"] <= 1.1 * bound and row["delta"] <= 1e-8
    assertions = {
        "rows_finite": _finite(rows, ["epsilon", "delta", "empirical",
                                      "bound_thm1", "bound_thm2"]),
        "dilation_within_bounds": bool(dilation_ok),
    }
    if params["contrast"]:
        contrast_rows = st.contrast_sweep(params["contrast_trials"], cfg.n,
                                          cfg.alpha, Rng(seed).spawn(1 << 20))
        path = os.path.join(out_dir, "contrast.csv")
        st.write_contrast_csv(path, contrast_rows)
        files.append(path)
        assertions["sharp_vs_smooth_gap_at_least_10x"] = all(
            r["ratio"] >= 10.0 for r in contrast_rows
        )
    return files, assertions


def _run_graphon_transfer(params, seed, out_dir, args):
    if params["mode"] not in ("filter", "gnn", "both"):
        raise ConfigError("mode must be 'filter', 'gnn', or 'both'")
    modes = ("filter", "gnn") if params["mode"] == "both" else (params["mode"],)
    kernel = gw.exponential_graphon(params["beta"])
    ref_grid = gw.GraphonGrid.from_kernel(kernel, params["ref_resolution"])

    def sweep(mode):
        cfg = gw.TransferSweepConfig(
            sizes=tuple(params["sizes"]), ref_resolution=params["ref_resolution"],
            c=params["c"], beta=params["beta"], mode=mode, layers=params["layers"],
            degree=params["degree"], inside_level=params["inside_level"],
            grid_size=params["grid_size"],
        )
        return mode, gw.transfer_sweep(cfg, kernel=kernel, ref_grid=ref_grid)

    files, assertions = [], {}
    for mode, rows in _parallel_map(sweep, modes, args.threads):
        path = os.path.join(out_dir, f"transfer_{mode}.csv")
        gw.write_transfer_csv(path, rows)
        files.append(path)
        dists = [r["dist_to_ref"] for r in rows]
        assertions[f"{mode}_distance_strictly_decreasing"] = all(
            a > b for a, b in zip(dists, dists[1:])
        )
        assertions[f"{mode}_bounds_dominate"] = all(
            r["dist_to_ref"] <= r["bound_thm4or6"]
            and (math.isnan(r["dist_consecutive"])
                 or r["dist_consecutive"] <= r["bound_thm5or7"])
            for r in rows
        )
    return files, assertions


def _movielens_common(params, args):
    path = _resolve_dataset(params, args)
    table = rs.load_movielens(path)
    spec = rs.SplitSpec(n_splits=params["n_splits"], seed=params["split_seed"])
    train_cfg = gnn.TrainConfig(epochs=params["epochs"],
                                batch_size=params["batch_size"],
                                learning_rate=params["learning_rate"])
    return table, spec, train_cfg


def _run_movielens(params, seed, out_dir, args):
    table, spec, train_cfg = _movielens_common(params, args)
    cfg = rs.RmseExperimentConfig(
        target_count=params["target_count"], max_items=params["max_items"],
        min_common=params["min_common"], graph_from=params["graph_from"],
        splits=spec, train=train_cfg,
        models=tuple(params["models"]) if params["models"] else None,
    )
    rows = rs.run_rmse_experiment(table, cfg, Rng(seed))
    path = os.path.join(out_dir, "movielens_results.csv")
    rs.write_results_csv(path, rows)
    expected = len(cfg.models or rs.MODEL_NAMES) * spec.n_splits
    return [path], {
        "all_rmse_finite": _finite(rows, ["rmse_val", "rmse_test"]),
        "one_row_per_model_and_split": len(rows) == expected,
    }


def _run_movielens_transfer(params, seed, out_dir, args):
    table, spec, train_cfg = _movielens_common(params, args)
    cfg = rs.TransferExperimentConfig(
        sizes=tuple(params["sizes"]), target_item=params["target_item"],
        min_common=params["min_common"], graph_from=params["graph_from"],
        splits=spec, train=train_cfg,
    )
    rows = rs.run_transfer_experiment(table, cfg, Rng(seed))
    path = os.path.join(out_dir, "movielens_transfer.csv")
    rs.write_transfer_csv(path, rows)
    return [path], {
        "all_rmse_finite": _finite(rows, ["rmse_n", "rmse_full", "rel_diff"]),
        "one_row_per_size": len(rows) == len(cfg.sizes),
    }


def _run_selftest(params, seed, out_dir, args):
    suites = selftest_report(seed)
    path = os.path.join(out_dir, "selftest.json")
    _write_json_atomic(path, {"seed": seed, "suites": suites})
    return [path], suites


_HANDLERS = {
    "equivariance": _run_equivariance,
    "stability": _run_stability,
    "graphon-transfer": _run_graphon_transfer,
    "movielens": _run_movielens,
    "movielens-transfer": _run_movielens_transfer,
    "selftest": _run_selftest,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="gsplab",
        description="Graph signal processing laboratory: experiments to CSV results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        cmd = sub.add_parser(command)
        cmd.add_argument("--config", help="JSON config file")
        cmd.add_argument("--seed", type=int, help="overrides the config seed")
        cmd.add_argument("--out", help="output directory (default: results)")
        cmd.add_argument("--data-dir", help="dataset directory (or $GSPLAB_DATA_DIR)")
        cmd.add_argument("--threads", type=int, default=1,
                         help="worker threads for trial fan-out")
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        seed, out_dir, params = _resolve(args)
    except ConfigError as exc:
        print(f"gsplab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE

    os.makedirs(out_dir, exist_ok=True)
    resolved = {"command": args.command, "seed": seed,
                "output_dir": out_dir, "params": params}
    config_path = os.path.join(out_dir, "resolved_config.json")
    _write_json_atomic(config_path, resolved)
    config_hash = hashlib.sha256(
        json.dumps(resolved, sort_keys=True).encode()
    ).hexdigest()

    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    manifest = {
        "command": args.command,
        "config_hash": config_hash,
        "started": started,
        "finished": None,
        "files": [config_path],
        "assertions": {},
        "ok": False,
    }
    try:
        files, assertions = _HANDLERS[args.command](params, seed, out_dir, args)
    except ConfigError as exc:
        print(f"gsplab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report, then fail the run
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        _write_json_atomic(os.path.join(out_dir, "manifest.json"), manifest)
        print(f"gsplab {args.command}: run failed: {manifest['error']}", file=sys.stderr)
        return EXIT_FAILURE

    manifest["files"] += files
    manifest["assertions"] = assertions
    manifest["ok"] = all(assertions.values())
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    _write_json_atomic(os.path.join(out_dir, "manifest.json"), manifest)

    for name, passed in assertions.items():
        print(f"[{'pass' if passed else 'FAIL'}] {args.command}: {name}")
    if not manifest["ok"]:
        print(f"gsplab {args.command}: {sum(not v for v in assertions.values())} "
              f"assertion(s) failed; see manifest.json", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
