"""Cyclic Jacobi rotation kernel (pure-python backend).

Vectorized with numpy row/column operations. Keeps the exact rotation
formulas and cyclic order of the compiled twin in ``_jacobi.pyx``.
"""

import math

import numpy as np


def jacobi_sweeps(a, v, off_target, max_sweeps):
    """Diagonalize the symmetric matrix ``a`` in place; accumulate rotations in ``v``.

    See the compiled twin for the contract. Returns the number of sweeps run.
    """
    n = a.shape[0]
    target2 = off_target * off_target
    iu = np.triu_indices(n, 1)
    for sweep in range(max_sweeps):
        off2 = 2.0 * float(np.sum(a[iu] ** 2))
        if off2 <= target2:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = 0.5 * (aqq - app) / apq
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                elif theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                new_p = col_p - s * (col_q + tau * col_p)
                new_q = col_q + s * (col_p - tau * col_q)
                a[:, p] = new_p
                a[:, q] = new_q
                a[p, :] = new_p
                a[q, :] = new_q
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = vp - s * (vq + tau * vp)
                v[:, q] = vq + s * (vp - tau * vq)
    return max_sweeps
