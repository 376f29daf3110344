import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gsplab import graph as gr
from gsplab.numerics import Rng, sym_eig
from conftest import random_symmetric


def test_permutation_gather_matches_matrix_form(rng):
    n = 7
    perm = gr.Permutation.random(n, rng)
    x = rng.normal(n)
    s = random_symmetric(rng, n)
    p = perm.as_matrix()
    assert_allclose(gr.permute_signal(x, perm), p.T @ x, atol=0)
    assert_allclose(gr.permute_shift(s, perm), p.T @ s @ p, atol=0)


def test_permutation_identity_inverse_compose(rng):
    n = 9
    perm = gr.Permutation.random(n, rng)
    x = rng.normal(n)
    assert_allclose(gr.permute_signal(x, gr.Permutation.identity(n)), x, atol=0)
    back = gr.permute_signal(gr.permute_signal(x, perm), perm.inverse())
    assert_allclose(back, x, atol=0)
    other = gr.Permutation.random(n, rng)
    both = perm.compose(other)
    via_two = gr.permute_signal(gr.permute_signal(x, other), perm)
    assert_allclose(gr.permute_signal(x, both), via_two, atol=0)


def test_permutation_validation():
    with pytest.raises(ValueError):
        gr.Permutation(np.array([0, 0, 1]))
    with pytest.raises(ValueError):
        gr.Permutation(np.array([[0, 1]]))


def test_permute_signal_matrix_rows(rng):
    x = rng.normal((5, 3))
    perm = gr.Permutation.random(5, rng)
    out = gr.permute_signal(x, perm)
    assert out.shape == (5, 3)
    assert_allclose(out, x[perm.order], atol=0)


@given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=2**31))
@settings(max_examples=30, deadline=None)
def test_permuted_shift_has_same_spectrum(n, seed):
    rng = Rng(seed)
    s = random_symmetric(rng, n)
    perm = gr.Permutation.random(n, rng)
    assert_allclose(
        sym_eig(gr.permute_shift(s, perm)).values, sym_eig(s).values, atol=1e-10
    )


def test_shift_operator_caches_eig(rng):
    op = gr.ShiftOperator(random_symmetric(rng, 6))
    assert op.eig() is op.eig()
    assert op.n == 6
    with pytest.raises(ValueError):
        gr.ShiftOperator(np.array([[0.0, 1.0], [0.5, 0.0]]))


def test_gft_igft_roundtrip_and_diagonalization(rng):
    s = random_symmetric(rng, 8)
    op = gr.ShiftOperator(s)
    x = rng.normal(8)
    assert_allclose(gr.igft(op, gr.gft(op, x)), x, atol=1e-12)
    # shifting in the vertex domain is multiplication by eigenvalues in frequency
    assert_allclose(gr.gft(op, op.apply(x)), op.eig().values * gr.gft(op, x), atol=1e-10)


def test_normalize_shift_unit_radius(rng):
    s = random_symmetric(rng, 10)
    norm = gr.normalize_shift(s)
    assert gr.ShiftOperator(norm).spectral_radius() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        gr.normalize_shift(np.zeros((3, 3)))


def test_laplacian_combinatorial_and_normalized():
    a = gr.ring_lattice(5, weight=2.0)
    lap = gr.laplacian(a)
    assert_allclose(lap.sum(axis=1), np.zeros(5), atol=1e-14)
    assert_allclose(np.diag(lap), np.full(5, 4.0), atol=0)
    ln = gr.laplacian(a, kind="normalized")
    vals = sym_eig(ln).values
    assert vals[0] == pytest.approx(0.0, abs=1e-12)
    assert np.all(vals <= 2.0 + 1e-12)
    with pytest.raises(ValueError):
        gr.laplacian(-a)
    with pytest.raises(ValueError):
        gr.laplacian(a, kind="bogus")


def test_weighted_erdos_renyi_properties(rng):
    a = gr.weighted_erdos_renyi(20, 0.4, rng, low=0.5, high=1.0)
    assert_allclose(a, a.T, atol=0)
    assert np.all(np.diag(a) == 0.0)
    nz = a[a != 0.0]
    assert np.all((nz >= 0.5) & (nz <= 1.0))
    # top eigenvalue of a nonnegative adjacency is the spectral radius
    e = sym_eig(a)
    assert float(e.values[-1]) == pytest.approx(float(np.max(np.abs(e.values))), rel=1e-12)


def test_ring_lattice_spectrum():
    vals = sym_eig(gr.ring_lattice(6)).values
    want = np.sort(2.0 * np.cos(2.0 * np.pi * np.arange(6) / 6))
    assert_allclose(vals, want, atol=1e-12)


def test_edge_csv_roundtrip(tmp_path, rng):
    a = gr.weighted_erdos_renyi(12, 0.5, rng)
    a[3, 3] = 0.7  # diagonal entries survive the trip
    path = tmp_path / "graph.csv"
    gr.save_edge_csv(path, a)
    assert_allclose(gr.load_edge_csv(path, n=12), a, atol=0)
    # n inferred from the file when the last node has an edge
    lap = gr.laplacian(gr.ring_lattice(7))
    gr.save_edge_csv(path, lap)
    assert_allclose(gr.load_edge_csv(path), lap, atol=0)
    with pytest.raises(ValueError):
        gr.load_edge_csv(path, n=3)


def test_edge_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n0,1,2.0\n")
    with pytest.raises(ValueError):
        gr.load_edge_csv(path)


def test_dense_csv_roundtrip(tmp_path, rng):
    m = rng.normal((6, 4))
    path = tmp_path / "dense.csv"
    gr.save_dense_csv(path, m)
    assert_allclose(gr.load_dense_csv(path), m, atol=0)
