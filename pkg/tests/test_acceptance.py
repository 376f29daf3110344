"""Acceptance gate: one test per release criterion, at the stated tolerance.

Each test prints a single pass/fail line (visible with -s; pytest -v shows
one PASSED/FAILED line per criterion regardless). Criteria 7 and 8 need the
MovieLens-100k ratings file and skip with an explicit message when
GSPLAB_DATA_DIR does not point at it.
"""

import math
import os
import time

import numpy as np
import pytest

from gsplab import cli
from gsplab import filters as fl
from gsplab import gnn
from gsplab import graphon as gw
from gsplab import recsys as rs
from gsplab import stability as st
from gsplab.graph import normalize_shift, weighted_erdos_renyi
from gsplab.numerics import Rng, sym_eig


def _report(criterion, ok, detail):
    print(f"criterion {criterion}: {'pass' if ok else 'FAIL'} — {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def _dataset_path():
    data_dir = os.environ.get("GSPLAB_DATA_DIR")
    if not data_dir:
        return None
    path = os.path.join(data_dir, "u.data")
    return path if os.path.exists(path) else None


def test_criterion_1_permutation_equivariance():
    start = time.perf_counter()
    rows = cli.equivariance_sweep(trials=100, n=16, features=(1, 4, 1),
                                  degree=4, rng=Rng(20260817))
    elapsed = time.perf_counter() - start
    worst = max(max(r["filter_dev"], r["gnn_dev"]) for r in rows)
    ok = worst <= 1e-10 and elapsed < 10.0
    _report(1, ok, f"max relabeling deviation {worst:.2e} (tol 1e-10) "
                   f"over 100 trials in {elapsed:.1f}s (limit 10s)")


def test_criterion_2_gradient_correctness():
    start = time.perf_counter()
    rng = Rng(424242)
    worst = 0.0
    for trial in range(20):
        trial_rng = rng.spawn(trial)
        width_a = 2 + trial % 4
        width_b = 2 + (trial // 4) % 3
        layers = 1 + trial % 2
        features = (1, width_a) if layers == 1 else (1, width_a, width_b)
        degrees = (1 + trial % 3,) * layers
        # a smooth nonlinearity keeps the finite-difference oracle well-posed;
        # the readout head makes output[node] scalar, as the node-level loss expects
        arch = gnn.GnnArchitecture(features, degrees, nonlinearity="tanh",
                                   readout=True)
        assert gnn.param_count(arch) <= 500
        n = 8 + trial % 5
        shift = normalize_shift(weighted_erdos_renyi(n, 0.5, trial_rng))
        params = gnn.init_parameters(arch, trial_rng)
        x = trial_rng.normal(n)[:, None]
        node = int(trial_rng.below(n))
        target = 1.0 + trial_rng.uniform()

        def loss_now():
            out = gnn.gnn_forward(arch, params, shift, x)
            value, _ = gnn.loss_and_grad(out, node, target, gnn.LossKind.MSE_READOUT)
            return value

        out, tape = gnn.gnn_forward(arch, params, shift, x, with_tape=True)
        _, dout = gnn.loss_and_grad(out, node, target, gnn.LossKind.MSE_READOUT)
        grads = gnn.gnn_backward(arch, params, shift, tape, dout)
        arrays = list(params.banks) + ([params.readout] if params.readout is not None else [])
        grad_arrays = list(grads.banks) + ([grads.readout] if grads.readout is not None else [])
        step = 1e-6
        for arr, grad in zip(arrays, grad_arrays):
            flat, gflat = arr.ravel(), grad.ravel()
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + step
                up = loss_now()
                flat[i] = keep - step
                down = loss_now()
                flat[i] = keep
                numeric = (up - down) / (2 * step)
                err = abs(gflat[i] - numeric) / max(abs(numeric), 1e-8)
                worst = max(worst, err)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 30.0
    _report(2, ok, f"max relative gradient error {worst:.2e} (tol 1e-5) "
                   f"over 20 GNNs in {elapsed:.1f}s (limit 30s)")


def test_criterion_3_first_order_oracles():
    start = time.perf_counter()
    rng = Rng(31337)
    epsilons = np.array([1e-2, 1e-3, 1e-4])
    worst_slope = math.inf
    for trial in range(10):
        trial_rng = rng.spawn(trial)
        n = 10 + trial % 4
        s = trial_rng.normal((n, n))
        s = 0.5 * (s + s.T)
        s /= np.linalg.norm(s, 2)
        e = trial_rng.normal((n, n))
        e = 0.5 * (e + e.T)
        e /= np.linalg.norm(e, 2)
        taps = trial_rng.uniform(-1.0, 1.0, size=6)
        base = fl.filter_matrix(s, taps)
        for convention in ("absolute", "relative"):
            remainders = []
            for eps in epsilons:
                scaled = eps * e
                if convention == "absolute":
                    s_hat = s + scaled
                    first = fl.first_order_delta_absolute(s, scaled, taps)
                else:
                    s_hat = s + 0.5 * (scaled @ s + s @ scaled)
                    first = fl.first_order_delta_relative(s, scaled, taps)
                gap = fl.filter_matrix(s_hat, taps) - base - first
                remainders.append(np.linalg.norm(gap, 2))
            slope = np.polyfit(np.log(epsilons), np.log(remainders), 1)[0]
            worst_slope = min(worst_slope, float(slope))
    elapsed = time.perf_counter() - start
    ok = worst_slope >= 1.9 and elapsed < 20.0
    _report(3, ok, f"min remainder log-log slope {worst_slope:.3f} (need >= 1.9) "
                   f"over 10 instances x 2 conventions in {elapsed:.1f}s (limit 20s)")


def test_criterion_4_dilation_bound_dominance():
    start = time.perf_counter()
    cfg = st.StabilitySweepConfig(trials=50, n=30, alpha=0.01, models=("dilation",))
    rows = st.stability_sweep(cfg, Rng(20260817))
    elapsed = time.perf_counter() - start
    assert len(rows) == 100  # 50 trials x {filter, gnn}
    worst_ratio, worst_delta = 0.0, 0.0
    for row in rows:
        bound = row["bound_thm1"] if row["subject"] == "filter" else row["bound_thm2"]
        worst_ratio = max(worst_ratio, row["empirical"] / bound)
        worst_delta = max(worst_delta, row["delta"])
    ok = worst_ratio <= 1.1 and worst_delta <= 1e-8 and elapsed < 60.0
    _report(4, ok, f"max empirical/bound {worst_ratio:.4f} (limit 1.1), "
                   f"max dilation delta {worst_delta:.1e} (tol 1e-8), "
                   f"50 trials in {elapsed:.1f}s (limit 60s)")


def test_criterion_5_discriminability_tradeoff():
    rows = st.contrast_sweep(trials=20, n=30, alpha=0.01, rng=Rng(90210))
    min_ratio = min(r["ratio"] for r in rows)
    matched = all(
        abs(r["C_L_sharp"] - r["C_L_smooth"]) <= 0.02 * r["C_L_sharp"] for r in rows
    )
    ok = min_ratio >= 10.0 and matched
    _report(5, ok, f"sharp/integral-Lipschitz gap ratio min {min_ratio:.1f} "
                   f"(need >= 10) at matched Lipschitz constant across 20 trials")


def test_criterion_6_graphon_bridge():
    start = time.perf_counter()
    kernel = gw.exponential_graphon(5.0)
    rng = Rng(65536)

    worst_equiv = 0.0
    worst_bridge = 0.0
    for n in (8, 32, 128):
        s = gw.sample_deterministic(kernel, n)
        taps = rng.uniform(-1.0, 1.0, size=4)
        x = rng.normal(n)
        graph_out = fl.filter_apply(s / n, taps, x)
        grid = gw.induce_graphon(s)
        graphon_out = gw.graphon_filter_apply(grid, taps, gw.induce_signal(x))
        worst_equiv = max(worst_equiv, gw.step_l2_distance(
            graphon_out, gw.induce_signal(graph_out)))
        bridge = np.max(np.abs(grid.spectrum().values - sym_eig(s).values / n))
        worst_bridge = max(worst_bridge, float(bridge))

    ref_grid = gw.GraphonGrid.from_kernel(kernel, 1024)
    sweep_ok = True
    details = []
    for mode in ("filter", "gnn"):
        cfg = gw.TransferSweepConfig(sizes=(64, 128, 256, 512), ref_resolution=1024,
                                     mode=mode)
        rows = gw.transfer_sweep(cfg, kernel=kernel, ref_grid=ref_grid)
        dists = [r["dist_to_ref"] for r in rows]
        decreasing = all(a > b for a, b in zip(dists, dists[1:]))
        dominated = all(
            math.isnan(r["dist_consecutive"]) or r["dist_consecutive"] <= r["bound_thm5or7"]
            for r in rows
        ) and all(r["dist_to_ref"] <= r["bound_thm4or6"] for r in rows)
        sweep_ok &= decreasing and dominated
        details.append(f"{mode} dist {dists[0]:.4f}->{dists[-1]:.4f}")
    elapsed = time.perf_counter() - start
    ok = (worst_equiv <= 1e-10 and worst_bridge <= 1e-10
          and sweep_ok and elapsed < 300.0)
    _report(6, ok, f"induced equivalence {worst_equiv:.1e}, spectrum bridge "
                   f"{worst_bridge:.1e} (tol 1e-10); {'; '.join(details)} "
                   f"decreasing under bounds; {elapsed:.0f}s (limit 300s)")


def test_criterion_7_movielens_rmse_table():
    path = _dataset_path()
    if path is None:
        pytest.skip("MovieLens-100k not available: set GSPLAB_DATA_DIR to a "
                    "directory containing u.data to run criterion 7")
    table = rs.load_movielens(path)
    cfg = rs.RmseExperimentConfig(
        target_count=6,
        max_items=250,  # desk scale: the 250 most-rated movies
        splits=rs.SplitSpec(n_splits=10),
    )
    start = time.perf_counter()
    rows = rs.run_rmse_experiment(table, cfg, Rng(20260817))
    elapsed = time.perf_counter() - start

    reference = {"linear": 1.967, "graph_filter": 1.054, "fcnn": 1.116,
                 "graph_perceptron": 1.079, "gnn_2layer_single": 1.076,
                 "gnn_1layer": 1.050, "gnn_2layer": 0.964}
    by_model = {}
    for row in rows:
        by_model.setdefault(row["model"], []).append(row["rmse_test"])
    means = {name: float(np.mean(vals)) for name, vals in by_model.items()}
    for name, mean in means.items():
        inside = abs(mean - reference[name]) <= 0.15
        print(f"  criterion 7 soft window: {name} rmse {mean:.3f} vs {reference[name]:.3f} "
              f"{'(inside +/-0.15)' if inside else '(outside +/-0.15; desk scale)'}")
    ordered_splits = sum(
        1 for split in range(10)
        if (by_model["gnn_2layer"][split] < by_model["graph_filter"][split]
            < by_model["linear"][split])
    )
    ok = ordered_splits >= 8
    _report(7, ok, f"GNN(L=2) < graph filter < linear in {ordered_splits}/10 splits "
                   f"(need >= 8); desk-scale run {elapsed / 60:.0f} min")


def test_criterion_8_movielens_transferability():
    path = _dataset_path()
    if path is None:
        pytest.skip("MovieLens-100k not available: set GSPLAB_DATA_DIR to a "
                    "directory containing u.data to run criterion 8")
    table = rs.load_movielens(path)
    cfg = rs.TransferExperimentConfig(
        sizes=(118, 203, 338, 603, 1682),
        splits=rs.SplitSpec(n_splits=2),
        train=gnn.TrainConfig(epochs=15),
    )
    rows = rs.run_transfer_experiment(table, cfg, Rng(20260817))
    diffs = [r["rel_diff"] for r in rows]
    inversions = sum(1 for a, b in zip(diffs, diffs[1:]) if b > a)
    ends_at_zero = rows[-1]["rel_diff"] == 0.0
    ok = inversions <= 1 and ends_at_zero
    _report(8, ok, "rel_diff " + " -> ".join(f"{d:.3f}" for d in diffs)
                   + f"; {inversions} inversion(s) (allow 1), final row exactly 0: "
                   + str(ends_at_zero))


def test_criterion_9_dataset_free_gate():
    # the synthetic-fixture recommendation pipeline stands in for criteria 7-8
    table = rs.synthetic_ratings(Rng(7), user_count=60, item_count=24, density=0.5)
    cfg = rs.RmseExperimentConfig(
        target_count=3,
        splits=rs.SplitSpec(n_splits=2),
        train=gnn.TrainConfig(epochs=150),
        models=("gnn_2layer",),
    )
    rows = rs.run_rmse_experiment(table, cfg, Rng(99))
    model_rmse = float(np.mean([r["rmse_test"] for r in rows]))
    graph = rs.build_similarity_graph(table, min_common=3)
    samples = rs.build_samples(table, graph, rs.top_rated_items(table, 3))
    baseline = []
    for split in range(2):
        train_set, _, test_set = rs.split_samples(samples, cfg.splits, split)
        mean = float(np.mean([s.target_value for s in train_set]))
        baseline.append(rs.rmse([mean] * len(test_set),
                                [s.target_value for s in test_set]))
    baseline_rmse = float(np.mean(baseline))

    suites = cli.selftest_report(20260817)
    ok = model_rmse < 0.9 * baseline_rmse and all(suites.values())
    _report(9, ok, f"synthetic fixture: GNN rmse {model_rmse:.3f} vs mean-rating "
                   f"baseline {baseline_rmse:.3f}; selftest suites "
                   f"{sum(suites.values())}/4 green")
