"""Polynomial graph convolutional filters.

A filter is a tap vector h of length K+1 acting as sum_k h_k S^k x, applied
through the diffusion recursion z_k = S z_{k-1} (S^k is never materialized
on the apply path). A filter bank couples F input features to G output
features with one F x G tap matrix per power of S.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from numpy.polynomial import polynomial as _poly

from .graph import Permutation, ShiftOperator
from .numerics import as_matrix, spectral_norm

__all__ = [
    "as_bank",
    "filter_apply",
    "bank_apply",
    "diffusion_stack",
    "filter_matrix",
    "freq_response",
    "derivative_taps",
    "FilterConstants",
    "filter_constants",
    "frame_bounds",
    "bank_response_bound",
    "first_order_delta_absolute",
    "first_order_delta_relative",
    "filter_operator_distance",
    "chebyshev_taps",
    "save_taps_csv",
    "load_taps_csv",
]


def _shift_matrix(s):
    if isinstance(s, ShiftOperator):
        return s.matrix
    return as_matrix(s, "shift")


def as_bank(taps):
    """Promote taps to bank form (K+1, F, G); single filters become F=G=1."""
    arr = np.asarray(taps, dtype=np.float64)
    if arr.ndim == 1:
        return arr.reshape(-1, 1, 1)
    if arr.ndim == 3:
        return arr
    raise ValueError(f"taps must have 1 or 3 dimensions, got shape {arr.shape}")


def _check_taps_vector(taps):
    arr = np.asarray(taps, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("taps must be a nonempty 1-D array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("taps contain non-finite entries")
    return arr


def filter_apply(shift, taps, x):
    """Apply a scalar filter to a signal (vector or columns of a matrix)."""
    h = _check_taps_vector(taps)
    s = _shift_matrix(shift)
    z = np.asarray(x, dtype=np.float64)
    out = h[0] * z
    for k in range(1, h.size):
        z = s @ z
        out = out + h[k] * z
    return out


def diffusion_stack(shift, order, x):
    """Stack [x, Sx, ..., S^K x] along a new leading axis.

    x may be (n, F) or batched (B, n, F); matmul broadcasting keeps one code
    path for both.
    """
    s = _shift_matrix(shift)
    z = np.asarray(x, dtype=np.float64)
    stack = [z]
    for _ in range(order):
        z = s @ z
        stack.append(z)
    return np.stack(stack, axis=0)


def bank_apply(shift, bank, x):
    """Apply a filter bank: U = sum_k S^k X H_k, X is (n, F) or (B, n, F)."""
    b = as_bank(bank)
    s = _shift_matrix(shift)
    z = np.asarray(x, dtype=np.float64)
    if z.shape[-1] != b.shape[1]:
        raise ValueError(f"signal has {z.shape[-1]} features, bank expects {b.shape[1]}")
    out = z @ b[0]
    for k in range(1, b.shape[0]):
        z = s @ z
        out = out + z @ b[k]
    return out


def filter_matrix(shift, taps):
    """Materialize H(S) = sum_k h_k S^k. Analysis utility for small graphs."""
    h = _check_taps_vector(taps)
    s = _shift_matrix(shift)
    n = s.shape[0]
    power = np.eye(n)
    out = h[0] * power
    for k in range(1, h.size):
        power = power @ s
        out = out + h[k] * power
    return out


def freq_response(taps, lam):
    """Evaluate the polynomial frequency response by Horner's rule."""
    h = _check_taps_vector(taps)
    lam = np.asarray(lam, dtype=np.float64)
    out = np.full_like(lam, h[-1], dtype=np.float64)
    for k in range(h.size - 2, -1, -1):
        out = out * lam + h[k]
    return out if out.ndim else float(out)


def derivative_taps(taps):
    """Taps of h'(lambda): k * h_k shifted down one degree."""
    h = _check_taps_vector(taps)
    if h.size == 1:
        return np.zeros(1)
    return h[1:] * np.arange(1, h.size, dtype=np.float64)


@dataclass(frozen=True)
class FilterConstants:
    """Grid-measured filter constants over a spectral band."""

    lipschitz: float            # max |h'(lambda)|
    integral_lipschitz: float   # max |lambda h'(lambda)|
    sup_gain: float             # max |h(lambda)|
    band: tuple
    grid_size: int


def filter_constants(taps, band=(-1.0, 1.0), grid_size=4096):
    """Measure Lipschitz / integral-Lipschitz / gain constants on a grid.

    The derivative is evaluated analytically from the taps (k * h_k), so the
    only approximation is the grid resolution of the max.
    """
    lo, hi = float(band[0]), float(band[1])
    if not lo < hi:
        raise ValueError("band must be an increasing pair")
    grid = np.linspace(lo, hi, int(grid_size))
    h = freq_response(taps, grid)
    hp = freq_response(derivative_taps(taps), grid)
    return FilterConstants(
        lipschitz=float(np.max(np.abs(hp))),
        integral_lipschitz=float(np.max(np.abs(grid * hp))),
        sup_gain=float(np.max(np.abs(h))),
        band=(lo, hi),
        grid_size=int(grid_size),
    )


def frame_bounds(bank, band=(-1.0, 1.0), grid_size=4096):
    """Frame bounds (A, B) of a single-input bank over a band.

    A^2 = min_lambda sum_g h_g(lambda)^2 and B^2 = max of the same sum; the
    definition applies to banks with one input feature.
    """
    b = as_bank(bank)
    if b.shape[1] != 1:
        raise ValueError("frame bounds are defined for single-input banks (F=1)")
    lo, hi = float(band[0]), float(band[1])
    grid = np.linspace(lo, hi, int(grid_size))
    total = np.zeros_like(grid)
    for g in range(b.shape[2]):
        total += freq_response(b[:, 0, g], grid) ** 2
    return float(np.sqrt(np.min(total))), float(np.sqrt(np.max(total)))


def bank_response_bound(bank, lambdas):
    """max over lambda of the spectral norm of the bank's F x G response.

    This is the tight per-layer gain ||U||_F <= bound * ||X||_F when lambdas
    exhausts the shift's spectrum, and generalizes the frame upper bound B to
    banks with several input features.
    """
    b = as_bank(bank)
    lams = np.atleast_1d(np.asarray(lambdas, dtype=np.float64))
    resp = np.broadcast_to(b[-1], (lams.size,) + b.shape[1:]).copy()
    for k in range(b.shape[0] - 2, -1, -1):
        resp = resp * lams[:, None, None] + b[k]
    return max(spectral_norm(resp[i]) for i in range(lams.size))


def _fo_prepare(shift, error, taps):
    s = _shift_matrix(shift)
    e = as_matrix(error, "error")
    if e.shape != s.shape:
        raise ValueError("error matrix must match the shift's shape")
    h = _check_taps_vector(taps)
    order = h.size - 1
    powers = [np.eye(s.shape[0])]
    for _ in range(order):
        powers.append(powers[-1] @ s)
    return s, e, h, powers


def first_order_delta_absolute(shift, error, taps):
    """Leading operator change of H(S) under S -> S + E.

    d/dt H(S + tE) at t=0 equals sum_k h_k sum_{r<k} S^r E S^{k-1-r};
    for the linear filter h = [0, 1] this is exactly E.
    """
    s, e, h, powers = _fo_prepare(shift, error, taps)
    out = np.zeros_like(s)
    for k in range(1, h.size):
        if h[k] == 0.0:
            continue
        acc = np.zeros_like(s)
        for r in range(k):
            acc += powers[r] @ e @ powers[k - 1 - r]
        out += h[k] * acc
    return out


def first_order_delta_relative(shift, error, taps):
    """Leading operator change of H(S) under S -> S + (ES + SE)/2.

    d/dt H(S + t(ES+SE)/2) at t=0 equals
    (1/2) sum_k h_k sum_{r<k} (S^r E S^{k-r} + S^{r+1} E S^{k-1-r});
    for h = [0, 1] and symmetric E this is exactly (SE + ES)/2.
    """
    s, e, h, powers = _fo_prepare(shift, error, taps)
    out = np.zeros_like(s)
    for k in range(1, h.size):
        if h[k] == 0.0:
            continue
        acc = np.zeros_like(s)
        for r in range(k):
            acc += powers[r] @ e @ powers[k - r] + powers[r + 1] @ e @ powers[k - 1 - r]
        out += 0.5 * h[k] * acc
    return out


def filter_operator_distance(taps, shift, shift_hat, strategy="auto"):
    """Distance modulo permutation between H(S) and H(S_hat).

    Returns (value, permutation) where value = min over candidate relabelings
    sigma of || H(S) - H(S_hat)[sigma, sigma] ||_2. Strategies:

    - "exhaustive": all n! relabelings (n <= 8);
    - "identity": no relabeling;
    - "degree_sort": align nodes by sorted weighted degree;
    - "auto": exhaustive when n <= 8, else the best of identity/degree_sort.
    """
    s = _shift_matrix(shift)
    s_hat = _shift_matrix(shift_hat)
    if s.shape != s_hat.shape:
        raise ValueError("shift operators must share a shape")
    n = s.shape[0]
    h1 = filter_matrix(s, taps)
    h2 = filter_matrix(s_hat, taps)

    def candidates():
        if strategy == "exhaustive" or (strategy == "auto" and n <= 8):
            if n > 8:
                raise ValueError("exhaustive search only for n <= 8")
            for per in itertools.permutations(range(n)):
                yield np.asarray(per, dtype=np.intp)
            return
        if strategy in ("identity", "auto", "degree_sort"):
            if strategy in ("identity", "auto"):
                yield np.arange(n, dtype=np.intp)
            if strategy in ("degree_sort", "auto"):
                sigma = np.empty(n, dtype=np.intp)
                sigma[np.argsort(s.sum(axis=1), kind="stable")] = np.argsort(
                    s_hat.sum(axis=1), kind="stable"
                )
                yield sigma
            return
        raise ValueError(f"unknown strategy {strategy!r}")

    best_value, best_sigma = np.inf, None
    for sigma in candidates():
        value = spectral_norm(h1 - h2[np.ix_(sigma, sigma)])
        if value < best_value:
            best_value, best_sigma = value, sigma
    return best_value, Permutation(best_sigma)


def chebyshev_taps(fn, degree, band=(-1.0, 1.0)):
    """Monomial taps of the Chebyshev interpolant of ``fn`` on a band.

    Degrees much beyond ~40 are rejected: monomial coefficients of high-order
    Chebyshev series grow like 2^k and poison the diffusion arithmetic.
    """
    if degree < 0 or degree > 60:
        raise ValueError("degree must be in [0, 60]")
    series = _cheb.Chebyshev.interpolate(fn, int(degree), domain=[float(band[0]), float(band[1])])
    monomial_in_t = _poly.Polynomial(_cheb.cheb2poly(series.coef))
    a, b = float(band[0]), float(band[1])
    affine = _poly.Polynomial([-(a + b) / (b - a), 2.0 / (b - a)])
    composed = monomial_in_t(affine)
    taps = np.zeros(int(degree) + 1)
    taps[: composed.coef.size] = composed.coef
    return taps


def save_taps_csv(path, bank):
    """Write a bank as CSV: header F,G,K; one int row; K+1 coefficient rows."""
    b = as_bank(bank)
    kk, ff, gg = b.shape[0] - 1, b.shape[1], b.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["F", "G", "K"])
        writer.writerow([ff, gg, kk])
        for k in range(kk + 1):
            writer.writerow([repr(float(v)) for v in b[k].reshape(-1)])


def load_taps_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["F", "G", "K"]:
            raise ValueError(f"unexpected taps CSV header {header!r}")
        ff, gg, kk = (int(v) for v in next(reader))
        rows = [rec for rec in reader if rec]
    if len(rows) != kk + 1:
        raise ValueError(f"expected {kk + 1} coefficient rows, found {len(rows)}")
    bank = np.zeros((kk + 1, ff, gg))
    for k, rec in enumerate(rows):
        if len(rec) != ff * gg:
            raise ValueError(f"row {k} has {len(rec)} values, expected {ff * gg}")
        bank[k] = np.asarray([float(v) for v in rec]).reshape(ff, gg)
    return bank
