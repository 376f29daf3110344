"""Dense symmetric eigensolver, matrix helpers, and deterministic randomness.

Everything downstream (graph transforms, filters, stability analysis) sits on
the two primitives defined here: an in-house cyclic Jacobi eigendecomposition
and a counter-mode splitmix64 random stream. The Jacobi kernel has a compiled
(Cython) backend and a numpy-vectorized pure-python twin; the compiled one is
used when importable unless ``GSPLAB_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "JACOBI_BACKEND",
    "JACOBI_MAX_SWEEPS",
    "JACOBI_OFFDIAG_TOL",
    "SymmetricEigen",
    "Rng",
    "as_matrix",
    "as_square_symmetric",
    "sym_eig",
    "spectral_norm",
    "mat_power_apply",
    "stream_value",
]

JACOBI_MAX_SWEEPS = 100
JACOBI_OFFDIAG_TOL = 1e-12  # relative to the Frobenius norm of the input


def _pick_backend():
    forced = os.environ.get("GSPLAB_PURE_PYTHON", "")
    if forced not in ("", "0"):
        from . import _jacobi_py

        return _jacobi_py, "python"
    try:
        from . import _jacobi  # compiled extension

        return _jacobi, "cython"
    except ImportError:
        from . import _jacobi_py

        return _jacobi_py, "python"


_impl, JACOBI_BACKEND = _pick_backend()


def as_matrix(m, name="matrix"):
    """Coerce to a float64 2-D array and require all entries finite."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def as_square_symmetric(m, tol=1e-10, name="matrix"):
    """Validate a square symmetric matrix and return an exactly symmetric copy.

    Symmetry is checked within ``tol`` relative to the largest entry (products
    like R^T R are symmetric only up to roundoff); the returned copy is
    symmetrized exactly so the Jacobi kernel sees S == S.T.
    """
    a = as_matrix(m, name)
    n, k = a.shape
    if n != k:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    scale = float(np.max(np.abs(a))) if n else 0.0
    if scale > 0.0:
        dev = float(np.max(np.abs(a - a.T)))
        if dev > tol * scale:
            raise ValueError(f"{name} is not symmetric (max deviation {dev:.3e})")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class SymmetricEigen:
    """Eigendecomposition M = V diag(values) V^T.

    values ascending; eigenvectors are columns of ``vectors`` with the sign
    fixed so each column's largest-magnitude entry is positive.
    """

    values: np.ndarray
    vectors: np.ndarray
    sweeps: int

    def reconstruct(self):
        return (self.vectors * self.values) @ self.vectors.T


def sym_eig(m, tol=1e-10):
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations."""
    a = as_square_symmetric(m, tol=tol)
    n = a.shape[0]
    work = np.array(a, dtype=np.float64, order="C", copy=True)
    vecs = np.eye(n, dtype=np.float64, order="C")
    fro = math.sqrt(float(np.sum(work * work)))
    sweeps = 0
    if n > 1 and fro > 0.0:
        target = JACOBI_OFFDIAG_TOL * fro
        sweeps = int(_impl.jacobi_sweeps(work, vecs, target, JACOBI_MAX_SWEEPS))
        if sweeps >= JACOBI_MAX_SWEEPS:
            off = work.copy()
            np.fill_diagonal(off, 0.0)
            off_norm = math.sqrt(float(np.sum(off * off)))
            if off_norm > target:
                warnings.warn(
                    f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps "
                    f"(off-diagonal norm {off_norm:.3e}, target {target:.3e})",
                    RuntimeWarning,
                )
    w = np.diag(work).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    vecs = vecs[:, order]
    if n:
        lead = np.argmax(np.abs(vecs), axis=0)
        signs = np.where(vecs[lead, np.arange(n)] < 0.0, -1.0, 1.0)
        vecs = vecs * signs
    return SymmetricEigen(values=w, vectors=vecs, sweeps=sweeps)


def spectral_norm(m):
    """Largest singular value, computed as sqrt(lambda_max(M^T M)).

    Uses the smaller Gram side so the Jacobi solve stays as cheap as possible.
    """
    a = as_matrix(m, "matrix")
    if a.size == 0:
        return 0.0
    gram = a @ a.T if a.shape[0] < a.shape[1] else a.T @ a
    eig = sym_eig(gram, tol=1e-8)
    top = float(eig.values[-1])
    return math.sqrt(top) if top > 0.0 else 0.0


def mat_power_apply(s, k, x):
    """Apply S^k to a vector or matrix by k successive products.

    Never materializes S^k; ``k=0`` returns a copy of ``x``.
    """
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise ValueError(f"power must be a nonnegative integer, got {k!r}")
    mat = np.asarray(s, dtype=np.float64)
    z = np.array(x, dtype=np.float64, copy=True)
    for _ in range(int(k)):
        z = mat @ z
    return z


# ---------------------------------------------------------------------------
# Deterministic randomness: splitmix64 in counter mode.
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_SPAWN_SALT = 0xD1B54A32D192ED03


def _mix(z):
    """splitmix64 finalizer on a python int (64-bit wraparound)."""
    z &= _MASK64
    z ^= z >> 30
    z = (z * _MIX_A) & _MASK64
    z ^= z >> 27
    z = (z * _MIX_B) & _MASK64
    z ^= z >> 31
    return z


def _mix_array(z):
    """Vectorized twin of ``_mix`` on a uint64 array."""
    with np.errstate(over="ignore"):
        z = z.astype(np.uint64, copy=True)
        z ^= z >> np.uint64(30)
        z *= np.uint64(_MIX_A)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_MIX_B)
        z ^= z >> np.uint64(31)
    return z


class Rng:
    """Counter-mode splitmix64 stream.

    word(i) = mix(seed + (i+1) * golden); sequential draws advance the
    counter, so the stream is a pure function of (seed, draw index). Batch
    draws consume one counter per word, exactly like scalar draws, but note
    that array-valued normals fill u1 then u2 blockwise, so a batch call is
    not element-for-element equal to a loop of scalar calls.
    """

    def __init__(self, seed):
        self._seed = int(seed) & _MASK64
        self._count = 0

    @property
    def seed(self):
        return self._seed

    @property
    def position(self):
        return self._count

    def word_at(self, index):
        """The stream's word at an absolute counter position (stateless)."""
        return _mix((self._seed + ((int(index) + 1) * _GOLDEN)) & _MASK64)

    def next_word(self):
        w = self.word_at(self._count)
        self._count += 1
        return w

    def words(self, n):
        idx = np.arange(self._count + 1, self._count + int(n) + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self._seed) + idx * np.uint64(_GOLDEN)
        self._count += int(n)
        return _mix_array(z)

    # -- floating point draws ------------------------------------------------

    def random(self):
        """One uniform double in [0, 1)."""
        return (self.next_word() >> 11) * 2.0**-53

    def uniform(self, low=0.0, high=1.0, size=None):
        if size is None:
            return low + (high - low) * self.random()
        u = (self.words(int(np.prod(size)) if np.iterable(size) else int(size)) >> np.uint64(11)) * 2.0**-53
        u = low + (high - low) * u
        return u.reshape(size) if np.iterable(size) else u

    def normal(self, size=None):
        """Standard normals via Box-Muller (two words per sample)."""
        if size is None:
            u1 = (self.next_word() >> 11) * 2.0**-53
            u2 = (self.next_word() >> 11) * 2.0**-53
            return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(2.0 * math.pi * u2)
        n = int(np.prod(size)) if np.iterable(size) else int(size)
        u1 = (self.words(n) >> np.uint64(11)) * 2.0**-53
        u2 = (self.words(n) >> np.uint64(11)) * 2.0**-53
        out = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        return out.reshape(size) if np.iterable(size) else out

    # -- discrete draws -------------------------------------------------------

    def below(self, n):
        """Uniform integer in [0, n). Modulo bias is < n / 2^64."""
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        return self.next_word() % int(n)

    def permutation(self, n):
        """Fisher-Yates permutation of range(n)."""
        order = np.arange(int(n), dtype=np.intp)
        for i in range(int(n) - 1, 0, -1):
            j = self.below(i + 1)
            order[i], order[j] = order[j], order[i]
        return order

    def spawn(self, key):
        """Independent child stream addressed by a nonnegative integer key."""
        child_seed = _mix((self._seed ^ _mix(((int(key) + 1) * _GOLDEN) & _MASK64)) + _SPAWN_SALT)
        return Rng(child_seed)


def stream_value(seed, *keys):
    """Stateless uniform in [0, 1) addressed by (seed, keys...).

    Used for split assignment and any place where a draw must be a pure
    function of identifiers rather than of draw order.
    """
    z = int(seed) & _MASK64
    for k in keys:
        z = _mix((z + ((int(k) + 1) * _GOLDEN)) & _MASK64)
    return (z >> 11) * 2.0**-53
