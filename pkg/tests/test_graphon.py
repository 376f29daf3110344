import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gsplab import filters as fl
from gsplab import graphon as gw
from gsplab.numerics import Rng, sym_eig


def test_sample_deterministic_constant_kernel():
    s = gw.sample_deterministic(gw.constant_graphon(0.4), 5)
    assert_allclose(s, np.full((5, 5), 0.4), atol=0)
    # rank one: eigenvalues {c n, 0 x (n-1)}
    lam = sym_eig(s).values
    assert_allclose(lam[-1], 0.4 * 5, rtol=1e-12)
    assert_allclose(lam[:-1], np.zeros(4), atol=1e-12)


def test_sample_deterministic_exponential_properties():
    s = gw.sample_deterministic(gw.exponential_graphon(10.0), 64)
    assert_allclose(s, s.T, atol=0)
    assert np.all(s > 0.0) and np.all(s <= 1.0)
    assert_allclose(np.diag(s), np.ones(64), atol=0)
    with pytest.raises(ValueError):
        gw.sample_deterministic(gw.exponential_graphon(1.0), 0)
    with pytest.raises(ValueError):
        gw.sample_deterministic(lambda u, v: np.asarray(u) - np.asarray(v), 8)  # asymmetric


def test_sample_signal_values():
    assert_allclose(gw.sample_signal(lambda u: np.asarray(u) * 0.0 + 2.5, 3), [2.5] * 3, atol=0)
    assert_allclose(gw.sample_signal(lambda u: np.asarray(u), 4), [0.0, 0.25, 0.5, 0.75], atol=0)


def test_sample_signal_step_approximation_rate():
    # left-point steps of a Lipschitz signal: L2 error within A3/(sqrt(3) sqrt(n))
    # and, for this smooth signal, halving with each doubling of n
    signal = lambda u: np.cos(np.pi * np.asarray(u))
    a3 = gw.signal_lipschitz_constant(signal, 4096)
    fine = gw.induce_signal(gw.sample_signal(signal, 4096))
    dists = {}
    for n in (16, 32, 64):
        step = gw.induce_signal(gw.sample_signal(signal, n))
        dists[n] = gw.step_l2_distance(step, fine)
        assert dists[n] <= a3 / (math.sqrt(3.0) * math.sqrt(n))
    assert 1.9 <= dists[16] / dists[32] <= 2.1
    assert 1.9 <= dists[32] / dists[64] <= 2.1


def test_induced_objects_round_trip(rng):
    s = gw.sample_deterministic(gw.exponential_graphon(3.0), 12)
    grid = gw.induce_graphon(s)
    assert_allclose(gw.sample_deterministic(grid, 12), s, atol=0)
    x = rng.normal(12)
    signal = gw.induce_signal(x)
    assert_allclose(signal.l2_norm(), np.linalg.norm(x) / math.sqrt(12), rtol=1e-14)


def test_induce_graphon_validates_range():
    with pytest.raises(ValueError):
        gw.induce_graphon(np.array([[0.2, 1.4], [1.4, 0.1]]))


def test_spectrum_bridge_exact():
    # eigenvalues of the induced step graphon's operator are exactly eig(S_n)/n
    s = gw.sample_deterministic(gw.exponential_graphon(5.0), 32)
    lam_graph = sym_eig(s).values
    lam_graphon = gw.induce_graphon(s).spectrum().values
    assert_allclose(lam_graphon, lam_graph / 32, atol=1e-12)


def test_spectrum_constant_kernel_and_orthonormal_samples():
    spec = gw.graphon_spectrum(gw.constant_graphon(0.7), 16)
    assert_allclose(spec.values[-1], 0.7, rtol=1e-12)
    assert_allclose(spec.values[:-1], np.zeros(15), atol=1e-12)
    # eigenfunction samples are orthonormal in L2[0,1]: sum phi_i phi_j / m = delta_ij
    gram = spec.function_samples.T @ spec.function_samples / 16
    assert_allclose(gram, np.eye(16), atol=1e-10)


def test_spectrum_grid_refinement_cauchy():
    # top eigenvalues stabilize as the grid refines
    coarse = gw.graphon_spectrum(gw.exponential_graphon(5.0), 128).values
    fine = gw.graphon_spectrum(gw.exponential_graphon(5.0), 256).values
    top_coarse = np.sort(np.abs(coarse))[-5:]
    top_fine = np.sort(np.abs(fine))[-5:]
    assert np.max(np.abs(top_coarse - top_fine)) <= 2.0 / 128


def test_graphon_filter_identity_and_rank_one(rng):
    grid = gw.GraphonGrid.from_kernel(gw.constant_graphon(0.6), 10)
    x = gw.GraphonSignal(rng.normal(10))
    assert_allclose(gw.graphon_filter_apply(grid, [1.0], x).values, x.values, atol=0)
    # T X = c mean(X) for the constant kernel
    out = gw.graphon_filter_apply(grid, [0.0, 1.0], x)
    assert_allclose(out.values, np.full(10, 0.6 * np.mean(x.values)), rtol=1e-12)
    with pytest.raises(ValueError):
        gw.graphon_filter_apply(grid, [1.0], gw.GraphonSignal(np.ones(11)))


def test_induced_filtering_equivalence(rng):
    # filtering induced objects == inducing the graph filter output (shift S_n/n)
    taps = rng.uniform(-1.0, 1.0, size=4)
    for n in (8, 32):
        s = gw.sample_deterministic(gw.exponential_graphon(5.0), n)
        x = rng.normal(n)
        graph_out = fl.filter_apply(s / n, taps, x)
        graphon_out = gw.graphon_filter_apply(
            gw.induce_graphon(s), taps, gw.induce_signal(x)
        )
        assert gw.step_l2_distance(graphon_out, gw.induce_signal(graph_out)) <= 1e-10


def test_step_l2_distance_hand_cases():
    a = gw.GraphonSignal([0.0, 1.0])
    b = gw.GraphonSignal([0.5])
    assert_allclose(gw.step_l2_distance(a, b), 0.5, rtol=1e-14)
    assert gw.step_l2_distance(a, a) == 0.0
    # same resolution reduces to a scaled vector norm
    c = gw.GraphonSignal([1.0, 3.0])
    assert_allclose(gw.step_l2_distance(a, c), np.linalg.norm([1.0, 2.0]) / math.sqrt(2), rtol=1e-14)


def test_lipschitz_constant_estimates():
    # analytic max slope of exp(-5 d^2) is 2*5*d*exp(-5 d^2) at d = 1/sqrt(10)
    a1 = gw.kernel_lipschitz_constant(gw.exponential_graphon(5.0), 1024)
    d = 1.0 / math.sqrt(10.0)
    assert abs(a1 - 10.0 * d * math.exp(-5.0 * d * d)) <= 0.05
    a3 = gw.signal_lipschitz_constant(lambda u: np.cos(np.pi * np.asarray(u)), 1024)
    assert abs(a3 - math.pi) <= 0.01 * math.pi


def test_transfer_quantities_cases():
    ref = np.array([-0.5, 0.1, 0.4, 0.9])
    empty = gw.transfer_quantities(ref, ref, c=0.95)
    assert empty.band_count == 0 and empty.margin == math.inf
    same = gw.transfer_quantities(ref, ref, c=0.05)
    assert same.band_count == 4
    assert_allclose(same.margin, 0.3, rtol=1e-12)  # the reference's min gap
    # |lambda| >= c is inclusive: c = 0.5 keeps both -0.5 and 0.9
    two = gw.transfer_quantities(ref, ref, c=0.5)
    assert two.band_count == 2
    assert_allclose(two.margin, 0.5, rtol=1e-12)  # |0.9 - 0.4|, self-match excluded
    single = gw.transfer_quantities(ref, ref, c=0.6)
    assert single.band_count == 1
    with pytest.raises(ValueError):
        gw.transfer_quantities(ref, ref, c=0.0)


def test_transfer_quantities_signed_index_matching():
    eigs_n = np.array([0.9, -0.8])
    ref = np.array([0.85, -0.75, 0.1])
    tq = gw.transfer_quantities(eigs_n, ref, c=0.5)
    assert tq.band_count == 2
    # 0.9 is matched to 0.85 (both index +1), so its margin candidates are
    # {-0.75, 0.1}; -0.8 matches -0.75, candidates {0.85, 0.1}
    assert_allclose(tq.margin, 0.8, rtol=1e-12)


def test_transfer_bounds_algebra():
    args = dict(a1=1.9, a2=1.7, a3=math.pi, band_count=1, margin=0.33, norm_x=0.7)
    b1 = gw.transfer_bound_filter(n1=64, n2=64, **args)
    b2 = gw.transfer_bound_filter(n1=256, n2=256, **args)
    assert_allclose(b1 / b2, 2.0, rtol=1e-12)  # quadrupling both sizes halves it
    # strict monotone decay when both sizes increase
    assert gw.transfer_bound_filter(n1=128, n2=128, **args) < b1
    assert gw.transfer_bound_gnn(2, n1=128, n2=128, **args) < gw.transfer_bound_gnn(2, n1=64, n2=64, **args)
    # at L=1 and A3=0 the GNN bound coincides with the filter bound
    no_sig = dict(args, a3=0.0)
    assert_allclose(
        gw.transfer_bound_gnn(1, n1=64, n2=128, **no_sig),
        gw.transfer_bound_filter(n1=64, n2=128, **no_sig),
        rtol=1e-15,
    )
    # and the first term scales linearly in the layer count
    assert_allclose(
        gw.transfer_bound_gnn(4, n1=64, **no_sig),
        2.0 * gw.transfer_bound_gnn(2, n1=64, **no_sig),
        rtol=1e-15,
    )
    assert gw.transfer_bound_filter(n1=64, **dict(args, a3=0.0, norm_x=0.0)) == 0.0
    # an empty band contributes no spectral term (margin is inf)
    finite = gw.transfer_bound_filter(1.0, 1.0, 1.0, 0, math.inf, 64, norm_x=1.0)
    assert np.isfinite(finite)
    with pytest.raises(ValueError):
        gw.transfer_bound_gnn(0, n1=64, **args)


def test_fit_band_constant_taps_quality():
    fit = gw.fit_band_constant_taps(0.35, degree=8)
    assert fit.taps.shape == (9,)
    assert fit.fit_residual <= 0.02
    assert fit.max_gain <= 1.05
    assert abs(fit.inside_level - 0.3) <= 0.05
    # the response really is flat inside the band relative to outside
    lam_in = np.linspace(-0.3, 0.3, 101)
    spread_in = np.ptp(fl.freq_response(fit.taps, lam_in))
    assert spread_in <= 0.05
    with pytest.raises(ValueError):
        gw.fit_band_constant_taps(0.0)
    with pytest.raises(ValueError):
        gw.fit_band_constant_taps(1.0)


def test_transfer_sweep_rows_and_convergence():
    cfg = gw.TransferSweepConfig(sizes=(16, 32, 64), ref_resolution=128)
    rows = gw.transfer_sweep(cfg)
    assert [r["n"] for r in rows] == [16, 32, 64]
    assert all(set(gw.TRANSFER_CSV_COLUMNS) <= set(r) for r in rows)
    dists = [r["dist_to_ref"] for r in rows]
    assert dists[0] > dists[1] > dists[2]
    for row in rows:
        assert row["B_nc"] == 1  # c = 0.35 splits the exponential spectrum cleanly
        assert row["dist_to_ref"] <= row["bound_thm4or6"]
        if not math.isnan(row["dist_consecutive"]):
            assert row["dist_consecutive"] <= row["bound_thm5or7"]
    assert math.isnan(rows[0]["dist_consecutive"]) and math.isnan(rows[0]["bound_thm5or7"])
    # fully deterministic: a second run reproduces the rows exactly
    again = gw.transfer_sweep(cfg, ref_grid=None)
    for r1, r2 in zip(rows, again):
        for key in gw.TRANSFER_CSV_COLUMNS:
            assert (r1[key] == r2[key]) or (math.isnan(r1[key]) and math.isnan(r2[key]))


def test_transfer_sweep_gnn_mode_and_fixed_point():
    cfg = gw.TransferSweepConfig(sizes=(16, 32), ref_resolution=64, mode="gnn", layers=2)
    rows = gw.transfer_sweep(cfg)
    assert rows[0]["dist_to_ref"] > rows[1]["dist_to_ref"]
    for row in rows:
        assert row["dist_to_ref"] <= row["bound_thm4or6"]
    # constant kernel + constant signal is an exact fixed point across sizes
    flat_cfg = gw.TransferSweepConfig(sizes=(8, 16), ref_resolution=32)
    flat = gw.transfer_sweep(flat_cfg, kernel=gw.constant_graphon(0.5),
                             signal=lambda u: np.asarray(u) * 0.0 + 1.0)
    assert all(r["dist_to_ref"] <= 1e-12 for r in flat)
    with pytest.raises(ValueError):
        gw.transfer_sweep(gw.TransferSweepConfig(mode="wavelet"))


def test_transfer_csv_format(tmp_path):
    cfg = gw.TransferSweepConfig(sizes=(8, 16), ref_resolution=32)
    rows = gw.transfer_sweep(cfg)
    path = tmp_path / "transfer.csv"
    gw.write_transfer_csv(path, rows)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(gw.TRANSFER_CSV_COLUMNS)
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "8" and first[2] == "1"
    assert first[5] == "nan"  # no consecutive distance on the first row
