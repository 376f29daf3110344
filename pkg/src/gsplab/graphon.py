"""Graphon kernels, sampled graphs, and filter/GNN transferability.

A graphon is a symmetric kernel W: [0,1]^2 -> [0,1]. Evaluating it at the
regular points u_i = i/n yields a deterministic n-node graph; conversely a
graph induces a step-function graphon (and a graph signal a step-function
signal) that can be compared in L2 across different sizes. The integral
operator of a step graphon on an m-cell grid is values/m, which is what
ties graph spectra (eig(S_n)/n) to graphon spectra and makes filters
trained on one size meaningful on another.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass

import numpy as np

from . import filters as fl
from . import gnn as nn
from .numerics import as_square_symmetric, sym_eig

__all__ = [
    "exponential_graphon",
    "constant_graphon",
    "sample_deterministic",
    "sample_signal",
    "GraphonGrid",
    "GraphonSignal",
    "GraphonSpectrum",
    "induce_graphon",
    "induce_signal",
    "graphon_spectrum",
    "graphon_filter_apply",
    "step_l2_distance",
    "kernel_lipschitz_constant",
    "signal_lipschitz_constant",
    "TransferQuantities",
    "transfer_quantities",
    "transfer_bound_filter",
    "transfer_bound_gnn",
    "BandConstantFit",
    "fit_band_constant_taps",
    "TransferSweepConfig",
    "transfer_sweep",
    "write_transfer_csv",
    "TRANSFER_CSV_COLUMNS",
]

TRANSFER_CSV_COLUMNS = [
    "n",
    "c",
    "B_nc",
    "delta_nc",
    "dist_to_ref",
    "dist_consecutive",
    "bound_thm4or6",
    "bound_thm5or7",
    "fit_residual",
]


def exponential_graphon(beta=5.0):
    """W(u, v) = exp(-beta (u - v)^2); Lipschitz, values in (0, 1]."""

    def kernel(u, v):
        return np.exp(-beta * (np.asarray(u) - np.asarray(v)) ** 2)

    return kernel


def constant_graphon(level):
    """W(u, v) = level everywhere (a rank-one kernel)."""
    if not 0.0 <= level <= 1.0:
        raise ValueError("graphon values must lie in [0, 1]")

    def kernel(u, v):
        shape = np.broadcast(np.asarray(u), np.asarray(v)).shape
        return np.full(shape, float(level))

    return kernel


def _evaluate_kernel(kernel, u, v):
    if isinstance(kernel, GraphonGrid):
        return kernel.as_kernel()(u, v)
    return np.asarray(kernel(u, v), dtype=np.float64)


def sample_deterministic(kernel, n):
    """Evaluate a graphon at the regular points u_i = i/n (diagonal included).

    Returns the dense symmetric n x n matrix [S_n]_ij = W(u_i, u_j).
    """
    if n < 1:
        raise ValueError("need at least one node")
    u = np.arange(n, dtype=np.float64) / n
    values = _evaluate_kernel(kernel, u[:, None], u[None, :])
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (n, n):
        raise ValueError("kernel must evaluate elementwise on a grid")
    if np.max(np.abs(values - values.T)) > 1e-12:
        raise ValueError("graphon evaluations must be symmetric")
    if np.min(values) < -1e-12 or np.max(values) > 1.0 + 1e-12:
        raise ValueError("graphon values must lie in [0, 1]")
    return 0.5 * (values + values.T)


def sample_signal(signal, n):
    """[x_n]_i = X(i/n) for a signal X on [0,1]."""
    u = np.arange(n, dtype=np.float64) / n
    values = np.asarray(signal(u), dtype=np.float64)
    if values.shape != (n,):
        values = np.asarray([float(signal(float(ui))) for ui in u])
    return values


@dataclass(frozen=True)
class GraphonSpectrum:
    """Spectrum of a step graphon's integral operator.

    values: eigenvalues ascending; function_samples: eigenvector samples
    scaled by sqrt(m) so the columns are orthonormal as step functions in
    L2[0,1].
    """

    values: np.ndarray
    function_samples: np.ndarray


class GraphonGrid:
    """Step-function graphon on an m-cell regular grid.

    ``values[i, j]`` is the kernel value on the cell I_i x I_j; the
    associated integral operator acts on per-cell signal values as
    (values / m) @ x. The spectrum is computed once and cached.
    """

    def __init__(self, values):
        mat = as_square_symmetric(values, name="graphon grid")
        if np.min(mat) < -1e-12 or np.max(mat) > 1.0 + 1e-12:
            raise ValueError("graphon values must lie in [0, 1]")
        mat.flags.writeable = False
        self.values = mat
        self._spectrum = None
        self._lock = threading.Lock()

    @classmethod
    def from_kernel(cls, kernel, m):
        return cls(sample_deterministic(kernel, m))

    @property
    def resolution(self):
        return self.values.shape[0]

    def operator(self):
        """Matrix of the integral operator on per-cell values: values / m."""
        return self.values / self.resolution

    def spectrum(self):
        with self._lock:
            if self._spectrum is None:
                eig = sym_eig(self.operator())
                self._spectrum = GraphonSpectrum(
                    values=eig.values,
                    function_samples=eig.vectors * math.sqrt(self.resolution),
                )
            return self._spectrum

    def as_kernel(self):
        """The step kernel as a callable on [0,1]^2."""
        m = self.resolution
        vals = self.values

        def kernel(u, v):
            i = np.minimum((np.asarray(u) * m).astype(np.intp), m - 1)
            j = np.minimum((np.asarray(v) * m).astype(np.intp), m - 1)
            return vals[i, j]

        return kernel


@dataclass(frozen=True)
class GraphonSignal:
    """Step-function signal on [0,1]: constant on each of m regular cells."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).ravel().copy()
        if arr.size == 0 or not np.all(np.isfinite(arr)):
            raise ValueError("signal needs a nonempty finite value per cell")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def resolution(self):
        return self.values.size

    def l2_norm(self):
        return float(np.linalg.norm(self.values)) / math.sqrt(self.resolution)


def induce_graphon(s):
    """The step graphon of a graph: W_n = [S_n]_ij on the cell I_i x I_j."""
    return GraphonGrid(s)


def induce_signal(x):
    """The step signal of a graph signal: X_n = [x_n]_i on the cell I_i."""
    return GraphonSignal(np.asarray(x, dtype=np.float64))


def graphon_spectrum(kernel, m):
    """Spectrum of the kernel discretized to an m-cell grid."""
    grid = kernel if isinstance(kernel, GraphonGrid) and kernel.resolution == m else (
        GraphonGrid.from_kernel(kernel, m)
    )
    return grid.spectrum()


def graphon_filter_apply(grid: GraphonGrid, taps, signal: GraphonSignal):
    """Polynomial filter in the integral operator: sum_k h_k T^k X.

    Shares the graph-filter diffusion code with shift values/m, which is
    exactly what makes filtering induced objects equal inducing filtered
    graph signals.
    """
    if signal.resolution != grid.resolution:
        raise ValueError("signal and grid resolutions must match")
    return GraphonSignal(fl.filter_apply(grid.operator(), taps, signal.values))


def step_l2_distance(a: GraphonSignal, b: GraphonSignal):
    """Exact L2[0,1] distance between two step signals (any resolutions)."""
    na, nb = a.resolution, b.resolution
    edges = np.union1d(np.arange(na + 1) / na, np.arange(nb + 1) / nb)
    widths = np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    va = a.values[np.minimum((mids * na).astype(np.intp), na - 1)]
    vb = b.values[np.minimum((mids * nb).astype(np.intp), nb - 1)]
    return float(np.sqrt(np.sum(widths * (va - vb) ** 2)))


def kernel_lipschitz_constant(kernel, m=1024):
    """Max finite-difference slope of the kernel on an m-cell grid."""
    grid = kernel if isinstance(kernel, GraphonGrid) else GraphonGrid.from_kernel(kernel, m)
    diffs = np.abs(np.diff(grid.values, axis=0))
    return float(np.max(diffs)) * grid.resolution


def signal_lipschitz_constant(signal, m=1024):
    """Max finite-difference slope of a signal on an m-cell grid."""
    values = sample_signal(signal, m) if callable(signal) else np.asarray(signal, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(values)))) * values.size


# ---------------------------------------------------------------------------
# Transferability quantities and bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferQuantities:
    """c-band cardinality and c-eigenvalue margin of a spectrum vs a reference."""

    c: float
    band_count: int
    margin: float


def _signed_indices(eigs):
    """Map signed spectral indices to array positions.

    Positive eigenvalues get +1, +2, ... in descending order; negative ones
    -1, -2, ... with the most negative first; exact zeros stay unindexed.
    """
    arr = np.asarray(eigs, dtype=np.float64).ravel()
    out = {}
    pos = np.flatnonzero(arr > 0.0)
    for rank, idx in enumerate(pos[np.argsort(-arr[pos], kind="stable")], start=1):
        out[rank] = int(idx)
    neg = np.flatnonzero(arr < 0.0)
    for rank, idx in enumerate(neg[np.argsort(arr[neg], kind="stable")], start=1):
        out[-rank] = int(idx)
    return out


def transfer_quantities(eigs_n, eigs_ref, c):
    """Band count B = #{|lam| >= c} and margin to the reference spectrum.

    Eigenvalues are matched across spectra by signed index. The margin is
    the smallest distance from an in-band eigenvalue to any reference
    eigenvalue other than its own match; an empty band gives margin inf.
    """
    if c <= 0.0:
        raise ValueError("band threshold c must be positive")
    en = np.asarray(eigs_n, dtype=np.float64).ravel()
    er = np.asarray(eigs_ref, dtype=np.float64).ravel()
    idx_n = _signed_indices(en)
    idx_ref = _signed_indices(er)
    band = {k: en[i] for k, i in idx_n.items() if abs(en[i]) >= c}
    if not band:
        return TransferQuantities(c=float(c), band_count=0, margin=math.inf)
    margin = math.inf
    for k, lam in band.items():
        keep = np.ones(er.size, dtype=bool)
        if k in idx_ref:
            keep[idx_ref[k]] = False
        if np.any(keep):
            margin = min(margin, float(np.min(np.abs(er[keep] - lam))))
    return TransferQuantities(c=float(c), band_count=len(band), margin=margin)


def _size_coefficient(n1, n2):
    coeff = 1.0 / math.sqrt(n1)
    if n2 is not None:
        coeff += 1.0 / math.sqrt(n2)
    return coeff


def transfer_bound_filter(a1, a2, a3, band_count, margin, n1, n2=None, norm_x=1.0):
    """Filter transferability bound.

    sqrt(A1) (A2 + pi B / delta) (n1^-1/2 [+ n2^-1/2]) ||X|| + (2 A3/sqrt(3)) (...).
    With n2 omitted this is the graphon-vs-graph reading; with n2 it bounds
    the distance between the induced outputs of two graph sizes.
    """
    coeff = _size_coefficient(n1, n2)
    spectral = math.pi * band_count / margin if band_count else 0.0
    return math.sqrt(a1) * (a2 + spectral) * coeff * norm_x + (2.0 * a3 / math.sqrt(3.0)) * coeff


def transfer_bound_gnn(layers, a1, a2, a3, band_count, margin, n1, n2=None, norm_x=1.0):
    """GNN transferability bound: L sqrt(A1)(A2 + pi B/delta)(...)||X|| + (A3/sqrt(3))(...).

    At L = 1 the first term coincides with the filter bound's. Discussion
    text elsewhere carries feature-count powers; the displayed formula does
    not, so sweeps use single-feature layers to keep both readings equal.
    """
    if layers < 1:
        raise ValueError("need at least one layer")
    coeff = _size_coefficient(n1, n2)
    spectral = math.pi * band_count / margin if band_count else 0.0
    return (
        layers * math.sqrt(a1) * (a2 + spectral) * coeff * norm_x
        + (a3 / math.sqrt(3.0)) * coeff
    )


# ---------------------------------------------------------------------------
# Band-constant filter design
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BandConstantFit:
    """Least-squares polynomial whose response is ~constant on [-c, c].

    fit_residual is the max in-band deviation from the fitted level — the
    honest measure of how well the band-constancy hypothesis is met.
    """

    taps: np.ndarray
    band: float
    inside_level: float
    fit_residual: float
    max_gain: float


def fit_band_constant_taps(c, degree=8, inside_level=0.3, grid_size=4096):
    """Fit taps to a target that is flat on [-c, c] and rises smoothly outside."""
    if not 0.0 < c < 1.0:
        raise ValueError("band threshold c must be inside (0, 1)")
    lam = np.linspace(-1.0, 1.0, grid_size)
    ramp = np.clip((np.abs(lam) - c) / (1.0 - c), 0.0, 1.0)
    smooth = ramp * ramp * (3.0 - 2.0 * ramp)
    target = inside_level + (1.0 - inside_level) * smooth
    basis = np.polynomial.polynomial.polyvander(lam, degree)
    taps, *_ = np.linalg.lstsq(basis, target, rcond=None)
    response = fl.freq_response(taps, lam)
    inside = response[np.abs(lam) <= c]
    level = float(np.mean(inside))
    return BandConstantFit(
        taps=taps,
        band=float(c),
        inside_level=level,
        fit_residual=float(np.max(np.abs(inside - level))),
        max_gain=float(np.max(np.abs(response))),
    )


# ---------------------------------------------------------------------------
# Transfer sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferSweepConfig:
    sizes: tuple = (64, 128, 256, 512)
    ref_resolution: int = 1024
    c: float = 0.35
    beta: float = 5.0
    mode: str = "filter"  # or "gnn"
    layers: int = 2       # gnn mode only
    degree: int = 8
    inside_level: float = 0.3
    grid_size: int = 4096


def _wnn_setup(cfg, taps):
    arch = nn.GnnArchitecture(
        features=(1,) * (cfg.layers + 1),
        degrees=(cfg.degree,) * cfg.layers,
        nonlinearity="relu",
        readout=False,
    )
    params = nn.GnnParameters(banks=[taps.reshape(-1, 1, 1).copy() for _ in range(cfg.layers)],
                              readout=None)
    return arch, params


def transfer_sweep(cfg: TransferSweepConfig, kernel=None, signal=None, ref_grid=None):
    """Filter/GNN outputs across graph sizes vs the graphon-grid reference.

    For each size n, the graph sampled from the kernel is run with shift
    S_n/n (so its spectrum sits on the graphon's), the output is induced to
    a step signal, and L2 distances to the reference output and to the
    previous size's output are reported next to the analytic bounds. Returns
    row dicts in the transfer CSV schema.
    """
    if cfg.mode not in ("filter", "gnn"):
        raise ValueError("mode must be 'filter' or 'gnn'")
    if kernel is None:
        kernel = exponential_graphon(cfg.beta)
    if signal is None:
        signal = lambda u: np.cos(np.pi * np.asarray(u))
    if ref_grid is None or ref_grid.resolution != cfg.ref_resolution:
        ref_grid = GraphonGrid.from_kernel(kernel, cfg.ref_resolution)

    fit = fit_band_constant_taps(cfg.c, cfg.degree, cfg.inside_level, cfg.grid_size)
    a1 = kernel_lipschitz_constant(ref_grid)
    a2 = fl.filter_constants(fit.taps, band=(-1.0, 1.0), grid_size=cfg.grid_size).lipschitz
    a3 = signal_lipschitz_constant(signal, cfg.ref_resolution)
    x_ref = sample_signal(signal, cfg.ref_resolution)
    norm_x = GraphonSignal(x_ref).l2_norm()

    if cfg.mode == "filter":
        y_ref = graphon_filter_apply(ref_grid, fit.taps, GraphonSignal(x_ref))
    else:
        arch, params = _wnn_setup(cfg, fit.taps)
        y_ref = GraphonSignal(
            np.asarray(nn.gnn_forward(arch, params, ref_grid.operator(), x_ref)).reshape(-1)
        )
    ref_eigs = ref_grid.spectrum().values

    rows = []
    prev = None  # (n, TransferQuantities, GraphonSignal)
    for n in cfg.sizes:
        s_n = sample_deterministic(kernel, n)
        x_n = sample_signal(signal, n)
        shift = s_n / n
        if cfg.mode == "filter":
            y_n = fl.filter_apply(shift, fit.taps, x_n)
        else:
            y_n = np.asarray(nn.gnn_forward(arch, params, shift, x_n)).reshape(-1)
        out_n = induce_signal(y_n)
        eigs_n = sym_eig(shift).values
        tq = transfer_quantities(eigs_n, ref_eigs, cfg.c)
        if cfg.mode == "filter":
            bound_single = transfer_bound_filter(
                a1, a2, a3, tq.band_count, tq.margin, n, norm_x=norm_x
            )
        else:
            bound_single = transfer_bound_gnn(
                cfg.layers, a1, a2, a3, tq.band_count, tq.margin, n, norm_x=norm_x
            )
        if prev is None:
            dist_consecutive = math.nan
            bound_pair = math.nan
        else:
            prev_n, prev_tq, prev_out = prev
            dist_consecutive = step_l2_distance(out_n, prev_out)
            pair_count = max(tq.band_count, prev_tq.band_count)
            pair_margin = min(tq.margin, prev_tq.margin)
            if cfg.mode == "filter":
                bound_pair = transfer_bound_filter(
                    a1, a2, a3, pair_count, pair_margin, prev_n, n, norm_x=norm_x
                )
            else:
                bound_pair = transfer_bound_gnn(
                    cfg.layers, a1, a2, a3, pair_count, pair_margin, prev_n, n, norm_x=norm_x
                )
        rows.append(
            {
                "n": n,
                "c": cfg.c,
                "B_nc": tq.band_count,
                "delta_nc": tq.margin,
                "dist_to_ref": step_l2_distance(out_n, y_ref),
                "dist_consecutive": dist_consecutive,
                "bound_thm4or6": bound_single,
                "bound_thm5or7": bound_pair,
                "fit_residual": fit.fit_residual,
            }
        )
        prev = (n, tq, out_n)
    return rows


def write_transfer_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRANSFER_CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [row["n"], repr(float(row["c"])), row["B_nc"]]
                + [repr(float(row[k])) for k in TRANSFER_CSV_COLUMNS[3:]]
            )
