"""Graph shift operators, permutations, and the graph Fourier transform.

A shift operator is any symmetric matrix whose sparsity pattern matches the
graph: adjacency, weighted adjacency, Laplacians. Permutations act by
gathering (never by matrix products), so relabeling a graph is O(n^2) data
movement and exactly reversible.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, SymmetricEigen, as_matrix, as_square_symmetric, sym_eig

__all__ = [
    "Permutation",
    "ShiftOperator",
    "permute_signal",
    "permute_shift",
    "gft",
    "igft",
    "normalize_shift",
    "laplacian",
    "weighted_erdos_renyi",
    "ring_lattice",
    "save_edge_csv",
    "load_edge_csv",
    "save_dense_csv",
    "load_dense_csv",
]


@dataclass(frozen=True)
class Permutation:
    """A relabeling pi of n nodes with gather semantics.

    Applying the permutation sends the signal value at old node pi[i] to new
    node i: (relabeled x)[i] = x[pi[i]].
    """

    order: np.ndarray

    def __post_init__(self):
        order = np.array(self.order, dtype=np.intp, copy=True)
        if order.ndim != 1:
            raise ValueError("permutation order must be 1-D")
        if sorted(order.tolist()) != list(range(order.size)):
            raise ValueError("order is not a permutation of range(n)")
        order.setflags(write=False)
        object.__setattr__(self, "order", order)

    @property
    def n(self):
        return int(self.order.size)

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n, dtype=np.intp))

    @classmethod
    def random(cls, n, rng: Rng):
        return cls(rng.permutation(n))

    def inverse(self):
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(self.order.size, dtype=np.intp)
        return Permutation(inv)

    def compose(self, other: "Permutation"):
        """The permutation equivalent to applying ``other`` first, then self."""
        return Permutation(other.order[self.order])

    def as_matrix(self):
        """Dense P such that applying the permutation equals P.T @ x."""
        n = self.n
        p = np.zeros((n, n))
        p[self.order, np.arange(n)] = 1.0
        return p


def permute_signal(x, perm: Permutation):
    """Gather rows of a signal (vector or n x F matrix) into the new labeling."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[0] != perm.n:
        raise ValueError(f"signal has {arr.shape[0]} rows, permutation has {perm.n}")
    return arr[perm.order].copy()


def permute_shift(s, perm: Permutation):
    """Relabel a shift operator: rows and columns gathered together."""
    mat = s.matrix if isinstance(s, ShiftOperator) else as_matrix(s, "shift")
    if mat.shape[0] != perm.n:
        raise ValueError("shift size does not match permutation")
    out = mat[np.ix_(perm.order, perm.order)].copy()
    return ShiftOperator(out) if isinstance(s, ShiftOperator) else out


class ShiftOperator:
    """A validated symmetric shift with a lazily cached eigendecomposition.

    The cache is guarded by a lock so sweep workers can share one instance.
    """

    def __init__(self, matrix):
        self._matrix = as_square_symmetric(matrix, name="shift")
        self._matrix.setflags(write=False)
        self._eig: SymmetricEigen | None = None
        self._lock = threading.Lock()

    @property
    def matrix(self):
        return self._matrix

    @property
    def n(self):
        return int(self._matrix.shape[0])

    def eig(self):
        with self._lock:
            if self._eig is None:
                self._eig = sym_eig(self._matrix)
            return self._eig

    def spectral_radius(self):
        values = self.eig().values
        return float(np.max(np.abs(values))) if values.size else 0.0

    def apply(self, x):
        return self._matrix @ np.asarray(x, dtype=np.float64)

    def __repr__(self):
        return f"ShiftOperator(n={self.n})"


def _shift_matrix(s):
    return s.matrix if isinstance(s, ShiftOperator) else as_square_symmetric(s, name="shift")


def gft(shift, x):
    """Graph Fourier transform: project a signal on the shift's eigenbasis."""
    op = shift if isinstance(shift, ShiftOperator) else ShiftOperator(shift)
    return op.eig().vectors.T @ np.asarray(x, dtype=np.float64)


def igft(shift, xt):
    """Inverse graph Fourier transform."""
    op = shift if isinstance(shift, ShiftOperator) else ShiftOperator(shift)
    return op.eig().vectors @ np.asarray(xt, dtype=np.float64)


def normalize_shift(s):
    """Divide a shift by its spectral radius so eigenvalues lie in [-1, 1]."""
    op = s if isinstance(s, ShiftOperator) else ShiftOperator(s)
    radius = op.spectral_radius()
    if radius == 0.0:
        raise ValueError("cannot normalize a zero shift operator")
    out = op.matrix / radius
    return ShiftOperator(out) if isinstance(s, ShiftOperator) else out


def laplacian(adjacency, kind="combinatorial"):
    """Graph Laplacian of a nonnegative weighted adjacency.

    kind="combinatorial": D - A. kind="normalized": I - D^-1/2 A D^-1/2
    (isolated nodes keep a zero row).
    """
    a = as_square_symmetric(adjacency, name="adjacency")
    if np.any(a < 0):
        raise ValueError("adjacency must be nonnegative")
    deg = a.sum(axis=1)
    if kind == "combinatorial":
        return np.diag(deg) - a
    if kind == "normalized":
        with np.errstate(divide="ignore"):
            inv_sqrt = np.where(deg > 0.0, 1.0 / np.sqrt(deg), 0.0)
        lap = -a * inv_sqrt[:, None] * inv_sqrt[None, :]
        lap[np.arange(a.shape[0]), np.arange(a.shape[0])] = np.where(deg > 0.0, 1.0, 0.0)
        return 0.5 * (lap + lap.T)
    raise ValueError(f"unknown laplacian kind {kind!r}")


def weighted_erdos_renyi(n, p, rng: Rng, low=0.5, high=1.0):
    """Symmetric weighted ER graph; weights uniform in [low, high]."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("edge probability must be in [0, 1]")
    a = np.zeros((n, n))
    m = n * (n - 1) // 2
    if m:
        iu = np.triu_indices(n, 1)
        mask = rng.uniform(size=m) < p
        weights = rng.uniform(low, high, size=m)
        a[iu] = np.where(mask, weights, 0.0)
        a = a + a.T
    if not np.any(a):
        raise ValueError("sampled graph has no edges; raise p or change seed")
    return a


def ring_lattice(n, weight=1.0):
    """Cycle graph on n nodes; a deterministic fixture with known spectrum."""
    a = np.zeros((n, n))
    for i in range(n):
        a[i, (i + 1) % n] = weight
        a[(i + 1) % n, i] = weight
    return a


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def save_edge_csv(path, s):
    """Write an undirected weighted edge list with header i,j,w.

    Each unordered pair appears once with i <= j; diagonal entries are kept
    so Laplacians round-trip. Isolated trailing nodes are not recoverable
    from the file alone: pass n to the loader for those graphs.
    """
    mat = _shift_matrix(s)
    n = mat.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "w"])
        for i in range(n):
            for j in range(i, n):
                if mat[i, j] != 0.0:
                    writer.writerow([i, j, repr(float(mat[i, j]))])


def load_edge_csv(path, n=None):
    """Load an edge-list CSV written by save_edge_csv into a dense matrix."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["i", "j", "w"]:
            raise ValueError(f"unexpected edge CSV header {header!r}")
        for rec in reader:
            if not rec:
                continue
            i, j, w = int(rec[0]), int(rec[1]), float(rec[2])
            if i < 0 or j < 0:
                raise ValueError("negative node index in edge CSV")
            rows.append((i, j, w))
    size = n if n is not None else (max((max(i, j) for i, j, _ in rows), default=-1) + 1)
    out = np.zeros((size, size))
    for i, j, w in rows:
        if i >= size or j >= size:
            raise ValueError(f"edge ({i}, {j}) outside matrix of size {size}")
        out[i, j] = w
        out[j, i] = w
    return out


def save_dense_csv(path, m):
    """Write any matrix as comma-separated rows (full precision)."""
    mat = as_matrix(m, "matrix")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in mat:
            writer.writerow([repr(float(v)) for v in row])


def load_dense_csv(path):
    with open(path, newline="") as fh:
        data = [[float(v) for v in rec] for rec in csv.reader(fh) if rec]
    if not data:
        raise ValueError("dense CSV is empty")
    return np.asarray(data, dtype=np.float64)
