# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cyclic Jacobi rotation kernel (compiled backend).

Mirrors ``_jacobi_py.jacobi_sweeps`` exactly: same rotation formulas, same
cyclic (p, q) order, same convergence rule, so the two backends agree to
floating-point roundoff.
"""

from libc.math cimport sqrt


def jacobi_sweeps(double[:, ::1] a, double[:, ::1] v, double off_target, int max_sweeps):
    """Diagonalize the symmetric matrix ``a`` in place.

    Plane rotations are accumulated into ``v`` (pass the identity), so on
    return ``a_input = v @ diag(a) @ v.T``. Sweeps stop once the off-diagonal
    Frobenius norm drops below ``off_target``. Returns the number of sweeps
    performed.
    """
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t p, q, r
    cdef int sweep
    cdef double off2, target2, apq, app, aqq, theta, t, c, s, tau, g, h

    target2 = off_target * off_target
    for sweep in range(max_sweeps):
        off2 = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off2 += 2.0 * a[p, q] * a[p, q]
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
                if theta > 1e150 or theta < -1e150:
                    t = 0.5 / theta
                elif theta >= 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    if r != p and r != q:
                        g = a[r, p]
                        h = a[r, q]
                        a[r, p] = g - s * (h + tau * g)
                        a[r, q] = h + s * (g - tau * h)
                        a[p, r] = a[r, p]
                        a[q, r] = a[r, q]
                for r in range(n):
                    g = v[r, p]
                    h = v[r, q]
                    v[r, p] = g - s * (h + tau * g)
                    v[r, q] = h + s * (g - tau * h)
    return max_sweeps
