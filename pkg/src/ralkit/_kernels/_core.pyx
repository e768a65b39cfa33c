# Compiled twins of the routines in _impl.py.  Semantics must stay in lockstep
# with the NumPy fallback; the equivalence suite in tests/test_kernels.py holds
# both to the same answers.

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()


cdef double _objective(double[:, ::1] Q, double[::1] w, double[::1] a, int n) noexcept:
    cdef double f = 0.0
    cdef double qa
    cdef Py_ssize_t i, j
    for i in range(n):
        qa = 0.0
        for j in range(n):
            qa += Q[i, j] * a[j]
        f += w[i] * a[i] - 0.5 * a[i] * qa
    return f


cdef void _gradient(double[:, ::1] Q, double[::1] w, double[::1] a,
                    double[::1] g, int n) noexcept:
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += Q[i, j] * a[j]
        g[i] = w[i] - s


cdef int _gauss_solve(double[:, ::1] A, double[::1] b, double[::1] x, int n) noexcept:
    # Gaussian elimination with partial pivoting; A and b are scratch copies.
    cdef Py_ssize_t i, j, k, piv
    cdef double best, factor, tmp
    for k in range(n):
        piv = k
        best = fabs(A[k, k])
        for i in range(k + 1, n):
            if fabs(A[i, k]) > best:
                best = fabs(A[i, k])
                piv = i
        if best <= 1e-300:
            return 1
        if piv != k:
            for j in range(n):
                tmp = A[k, j]; A[k, j] = A[piv, j]; A[piv, j] = tmp
            tmp = b[k]; b[k] = b[piv]; b[piv] = tmp
        for i in range(k + 1, n):
            factor = A[i, k] / A[k, k]
            if factor != 0.0:
                for j in range(k, n):
                    A[i, j] -= factor * A[k, j]
                b[i] -= factor * b[k]
    for i in range(n - 1, -1, -1):
        tmp = b[i]
        for j in range(i + 1, n):
            tmp -= A[i, j] * x[j]
        x[i] = tmp / A[i, i]
    return 0


cdef int _newton_step(double[:, ::1] Q, double[::1] w, double[::1] a,
                      double[::1] g, double[::1] cv, int n,
                      double[:, ::1] As, double[::1] bs, double[::1] xs,
                      cnp.npy_intp[::1] idx, cnp.npy_uint8[::1] isfree) noexcept:
    # Solve the free block with pinned coordinates fixed; result clipped into cv.
    # Returns 0 on success, 1 when there is nothing to solve or the solve fails.
    cdef Py_ssize_t i, j, ii, jj, nfree
    cdef double val
    nfree = 0
    for i in range(n):
        if (a[i] <= 1e-14 and g[i] < 0.0) or (a[i] >= 1.0 - 1e-14 and g[i] > 0.0):
            isfree[i] = 0
            continue
        isfree[i] = 1
        idx[nfree] = i
        nfree += 1
    if nfree == 0:
        return 1
    for ii in range(nfree):
        i = idx[ii]
        val = w[i]
        for j in range(n):
            if not isfree[j]:
                val -= Q[i, j] * a[j]
        bs[ii] = val
        for jj in range(nfree):
            As[ii, jj] = Q[i, idx[jj]]
        As[ii, ii] += 1e-12
    if _gauss_solve(As, bs, xs, <int>nfree) != 0:
        return 1
    for i in range(n):
        cv[i] = a[i]
    for ii in range(nfree):
        val = xs[ii]
        cv[idx[ii]] = 0.0 if val < 0.0 else (1.0 if val > 1.0 else val)
    return 0


def box_qp_maximize(Q, w, alpha0, int max_iter=2000, double tol=1e-10):
    """Maximize  w'a - 0.5 a'Qa  over [0,1]^n (compiled path).

    Projected Newton with a projected-gradient fallback, mirroring _impl.py.
    """
    cdef cnp.ndarray[double, ndim=2, mode="c"] Qc = np.ascontiguousarray(Q, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] wc = np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] ac = np.clip(
        np.asarray(alpha0, dtype=np.float64), 0.0, 1.0).copy()
    cdef int n = ac.shape[0]
    cdef double[:, ::1] Qv = Qc
    cdef double[::1] av = ac
    cdef double[::1] wv = wc
    cdef cnp.ndarray[double, ndim=1, mode="c"] gbuf = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] dbuf = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] anew = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] cbuf = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] Abuf = np.empty((n, n), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] bbuf = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] xbuf = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.npy_intp, ndim=1] idxbuf = np.empty(n, dtype=np.intp)
    cdef cnp.ndarray[cnp.npy_uint8, ndim=1] maskbuf = np.empty(n, dtype=np.uint8)
    cdef double[::1] g = gbuf
    cdef double[::1] d = dbuf
    cdef double[::1] an = anew
    cdef double[::1] cv = cbuf
    cdef double[:, ::1] As = Abuf
    cdef double[::1] bs = bbuf
    cdef double[::1] xs = xbuf
    cdef cnp.npy_intp[::1] idx = idxbuf
    cdef cnp.npy_uint8[::1] isfree = maskbuf
    cdef Py_ssize_t it, i, j
    cdef double f, fnew, fcand, dmax, qd, gd, t, val
    cdef int halvings

    f = _objective(Qv, wv, av, n)
    for it in range(max_iter):
        _gradient(Qv, wv, av, g, n)
        dmax = 0.0
        for i in range(n):
            val = g[i]
            if av[i] <= 0.0 and val < 0.0:
                val = 0.0
            elif av[i] >= 1.0 and val > 0.0:
                val = 0.0
            d[i] = val
            if fabs(val) > dmax:
                dmax = fabs(val)
        if dmax <= tol:
            break
        if _newton_step(Qv, wv, av, g, cv, n, As, bs, xs, idx, isfree) == 0:
            fcand = _objective(Qv, wv, cv, n)
            if fcand > f + 1e-15:
                for i in range(n):
                    av[i] = cv[i]
                f = fcand
                continue
        qd = 0.0
        gd = 0.0
        for i in range(n):
            val = 0.0
            for j in range(n):
                val += Qv[i, j] * d[j]
            qd += d[i] * val
            gd += g[i] * d[i]
        t = 1.0 if qd <= 1e-300 else gd / qd
        if t <= 0.0:
            t = 1.0
        for i in range(n):
            val = av[i] + t * d[i]
            an[i] = 0.0 if val < 0.0 else (1.0 if val > 1.0 else val)
        fnew = _objective(Qv, wv, an, n)
        halvings = 0
        while fnew < f and halvings < 40:
            t *= 0.5
            for i in range(n):
                val = av[i] + t * d[i]
                an[i] = 0.0 if val < 0.0 else (1.0 if val > 1.0 else val)
            fnew = _objective(Qv, wv, an, n)
            halvings += 1
        if fnew <= f + 1e-18 and halvings >= 40:
            break
        for i in range(n):
            av[i] = an[i]
        f = fnew

    return ac


def gaussian_gram(X, double bandwidth):
    """Gaussian gram matrix exp(-||xi-xj||^2 / (2 bandwidth^2)) (compiled path)."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef int n = Xc.shape[0]
    cdef int d = Xc.shape[1]
    cdef cnp.ndarray[double, ndim=2, mode="c"] K = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] Xv = Xc
    cdef double[:, ::1] Kv = K
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, denom
    denom = 2.0 * bandwidth * bandwidth
    for i in range(n):
        Kv[i, i] = 1.0
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                diff = Xv[i, k] - Xv[j, k]
                acc += diff * diff
            acc = exp(-acc / denom)
            Kv[i, j] = acc
            Kv[j, i] = acc
    return K


def gaussian_row(X, z, double bandwidth):
    """Kernel row k(z, x_i) for every row of X (compiled path)."""
    cdef cnp.ndarray[double, ndim=2, mode="c"] Xc = np.ascontiguousarray(X, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] zc = np.ascontiguousarray(z, dtype=np.float64)
    cdef int n = Xc.shape[0]
    cdef int d = Xc.shape[1]
    cdef cnp.ndarray[double, ndim=1, mode="c"] out = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] Xv = Xc
    cdef double[::1] zv = zc
    cdef double[::1] ov = out
    cdef Py_ssize_t i, k
    cdef double acc, diff, denom
    denom = 2.0 * bandwidth * bandwidth
    for i in range(n):
        acc = 0.0
        for k in range(d):
            diff = Xv[i, k] - zv[k]
            acc += diff * diff
        ov[i] = exp(-acc / denom)
    return out


def project_capped_simplex(v, double total, double lo=0.0, double hi=1.0):
    """Projection onto {lo <= x <= hi, sum(x) = total} (compiled path)."""
    cdef cnp.ndarray[double, ndim=1, mode="c"] vc = np.ascontiguousarray(v, dtype=np.float64)
    cdef int n = vc.shape[0]
    if not (n * lo - 1e-9 <= total <= n * hi + 1e-9):
        raise ValueError(
            f"infeasible capped simplex: n={n} lo={lo} hi={hi} total={total}")
    cdef double[::1] vv = vc
    cdef double mu_lo, mu_hi, mu, s, val
    cdef Py_ssize_t i, it
    mu_lo = vv[0]
    mu_hi = vv[0]
    for i in range(1, n):
        if vv[i] < mu_lo:
            mu_lo = vv[i]
        if vv[i] > mu_hi:
            mu_hi = vv[i]
    mu_lo = mu_lo - hi - 1.0
    mu_hi = mu_hi - lo + 1.0
    for it in range(100):
        mu = 0.5 * (mu_lo + mu_hi)
        s = 0.0
        for i in range(n):
            val = vv[i] - mu
            if val < lo:
                val = lo
            elif val > hi:
                val = hi
            s += val
        if s > total:
            mu_lo = mu
        else:
            mu_hi = mu
    mu = 0.5 * (mu_lo + mu_hi)
    cdef cnp.ndarray[double, ndim=1, mode="c"] out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    for i in range(n):
        val = vv[i] - mu
        if val < lo:
            val = lo
        elif val > hi:
            val = hi
        ov[i] = val
    return out


def dykstra_caps(v, double lo, double hi, masks, rhs, double tol=1e-9,
                 int max_sweeps=500):
    """Project onto {lo <= x <= hi, masks[j] @ x <= rhs[j]} by Dykstra sweeps."""
    cdef cnp.ndarray[double, ndim=1, mode="c"] vc = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] mc = np.ascontiguousarray(masks, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] rc = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef int n = vc.shape[0]
    cdef int k = mc.shape[0]
    cdef cnp.ndarray[double, ndim=1, mode="c"] x = vc.copy()
    cdef cnp.ndarray[double, ndim=2, mode="c"] incs = np.zeros((k + 1, n), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] xs = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] incs_prev = np.empty((k + 1, n), dtype=np.float64)
    cdef double[::1] xv = x
    cdef double[::1] sv = xs
    cdef double[:, ::1] iv = incs
    cdef double[:, ::1] pv = incs_prev
    cdef double[:, ::1] mv = mc
    cdef double[::1] rv = rc
    cdef Py_ssize_t sweep, i, j
    cdef double y, viol, nrm, shift, delta
    for sweep in range(max_sweeps):
        for i in range(n):
            sv[i] = xv[i]
        for j in range(k + 1):
            for i in range(n):
                pv[j, i] = iv[j, i]
        # box
        for i in range(n):
            y = xv[i] + iv[0, i]
            if y < lo:
                iv[0, i] = y - lo
                xv[i] = lo
            elif y > hi:
                iv[0, i] = y - hi
                xv[i] = hi
            else:
                iv[0, i] = 0.0
                xv[i] = y
        # halfspaces
        for j in range(k):
            viol = 0.0
            nrm = 0.0
            for i in range(n):
                y = xv[i] + iv[j + 1, i]
                viol += mv[j, i] * y
                nrm += mv[j, i] * mv[j, i]
            viol -= rv[j]
            if viol > 0.0 and nrm > 0.0:
                shift = viol / nrm
            else:
                shift = 0.0
            for i in range(n):
                y = xv[i] + iv[j + 1, i]
                xv[i] = y - shift * mv[j, i]
                iv[j + 1, i] = y - xv[i]
        # x can stall for a cycle while corrections still move; watch both
        delta = 0.0
        for i in range(n):
            if fabs(xv[i] - sv[i]) > delta:
                delta = fabs(xv[i] - sv[i])
        for j in range(k + 1):
            for i in range(n):
                if fabs(iv[j, i] - pv[j, i]) > delta:
                    delta = fabs(iv[j, i] - pv[j, i])
        if delta <= tol:
            break
    return x
