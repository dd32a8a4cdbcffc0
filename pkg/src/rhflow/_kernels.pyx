# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fast-marching eikonal sweep and batched
cyclic-tridiagonal solves.  Mirrors ``_kernels_py`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, isfinite, sqrt

cnp.import_array()

DEF FAR = 0
DEF TRIAL = 1
DEF ACCEPTED = 2


def solve_cyclic_tridiag_batch(dl, d, du, b):
    """Sherman-Morrison cyclic tridiagonal solve for a batch of systems.

    Same contract as the numpy fallback: shared real sub/super diagonals
    (length N), per-system main diagonals d (M, N), right-hand sides b
    (M, N) real or complex.
    """
    dl = np.ascontiguousarray(dl, dtype=np.float64)
    du = np.ascontiguousarray(du, dtype=np.float64)
    d = np.ascontiguousarray(np.atleast_2d(d), dtype=np.float64)
    b = np.atleast_2d(b)
    if np.iscomplexobj(b):
        br = np.ascontiguousarray(b.real, dtype=np.float64)
        bi = np.ascontiguousarray(b.imag, dtype=np.float64)
        xr = _cyclic_batch_real(dl, d, du, br)
        xi = _cyclic_batch_real(dl, d, du, bi)
        return xr + 1j * xi
    return _cyclic_batch_real(dl, d, du, np.ascontiguousarray(b, dtype=np.float64))


cdef _cyclic_batch_real(double[::1] dl, double[:, ::1] d, double[::1] du,
                        double[:, ::1] b):
    cdef Py_ssize_t m = d.shape[0], n = d.shape[1]
    if n < 3:
        raise ValueError("cyclic tridiagonal solve needs n >= 3")
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] x = out
    cdef double[::1] cp = np.empty(n), y = np.empty(n), z = np.empty(n)
    cdef double[::1] dmod = np.empty(n)
    cdef Py_ssize_t k, i
    cdef double gamma, denom, vy, vz, fac, corner

    for k in range(m):
        gamma = -d[k, 0]
        for i in range(n):
            dmod[i] = d[k, i]
        dmod[0] = d[k, 0] - gamma
        dmod[n - 1] = d[k, n - 1] - dl[0] * du[n - 1] / gamma

        # Thomas sweep for y (rhs b) and z (rhs u) simultaneously
        denom = dmod[0]
        cp[0] = du[0] / denom
        y[0] = b[k, 0] / denom
        z[0] = gamma / denom
        for i in range(1, n):
            denom = dmod[i] - dl[i] * cp[i - 1]
            if i < n - 1:
                cp[i] = du[i] / denom
            y[i] = (b[k, i] - dl[i] * y[i - 1]) / denom
            corner = du[n - 1] if i == n - 1 else 0.0
            z[i] = (corner - dl[i] * z[i - 1]) / denom
        for i in range(n - 2, -1, -1):
            y[i] = y[i] - cp[i] * y[i + 1]
            z[i] = z[i] - cp[i] * z[i + 1]

        vy = y[0] + (dl[0] / gamma) * y[n - 1]
        vz = z[0] + (dl[0] / gamma) * z[n - 1]
        fac = vy / (1.0 + vz)
        for i in range(n):
            x[k, i] = y[i] - fac * z[i]
    return out


# ---------------------------------------------------------------------------
# fast marching
# ---------------------------------------------------------------------------

cdef struct Heap:
    double* val
    Py_ssize_t* idx
    Py_ssize_t size


cdef inline void heap_push(Heap* hp, double v, Py_ssize_t p) noexcept:
    cdef Py_ssize_t i = hp.size, parent
    hp.val[i] = v
    hp.idx[i] = p
    hp.size += 1
    while i > 0:
        parent = (i - 1) >> 1
        if hp.val[parent] <= hp.val[i]:
            break
        hp.val[parent], hp.val[i] = hp.val[i], hp.val[parent]
        hp.idx[parent], hp.idx[i] = hp.idx[i], hp.idx[parent]
        i = parent


cdef inline Py_ssize_t heap_pop(Heap* hp, double* vout) noexcept:
    cdef Py_ssize_t p = hp.idx[0], i = 0, child
    vout[0] = hp.val[0]
    hp.size -= 1
    hp.val[0] = hp.val[hp.size]
    hp.idx[0] = hp.idx[hp.size]
    while True:
        child = 2 * i + 1
        if child >= hp.size:
            break
        if child + 1 < hp.size and hp.val[child + 1] < hp.val[child]:
            child += 1
        if hp.val[i] <= hp.val[child]:
            break
        hp.val[i], hp.val[child] = hp.val[child], hp.val[i]
        hp.idx[i], hp.idx[child] = hp.idx[child], hp.idx[i]
        i = child
    return p


cdef inline Py_ssize_t wrap_neighbor(Py_ssize_t p, Py_ssize_t c, Py_ssize_t n,
                                     Py_ssize_t stride, int step) noexcept:
    cdef Py_ssize_t cc = (c + step) % n
    if cc < 0:
        cc += n
    return p + (cc - c) * stride


cdef double solve_point(Py_ssize_t p, Py_ssize_t* cs, double[:, ::1] inv_a,
                        double* h, Py_ssize_t* shape, Py_ssize_t* strides,
                        int ndim, double* u, signed char* status) noexcept:
    cdef double alphas[3]
    cdef double offsets[3]
    cdef int na = 0, ax, step, j, jmax
    cdef Py_ssize_t n1, n2, i1 = cs[0]
    cdef double best, t, alpha, c, a, bq, cq, disc, cand, tmax

    for ax in range(ndim):
        best = INFINITY
        t = 0.0
        alpha = 0.0
        for step in range(-1, 2, 2):
            n1 = wrap_neighbor(p, cs[ax], shape[ax], strides[ax], step)
            if status[n1] != ACCEPTED or u[n1] >= best:
                continue
            best = u[n1]
            n2 = wrap_neighbor(p, cs[ax], shape[ax], strides[ax], 2 * step)
            c = inv_a[ax, i1]
            if status[n2] == ACCEPTED and u[n2] <= u[n1]:
                alpha = c * 9.0 / (4.0 * h[ax] * h[ax])
                t = (4.0 * u[n1] - u[n2]) / 3.0
            else:
                alpha = c / (h[ax] * h[ax])
                t = u[n1]
        if isfinite(best):
            alphas[na] = alpha
            offsets[na] = t
            na += 1

    while na > 0:
        a = 0.0
        bq = 0.0
        cq = -1.0
        tmax = -INFINITY
        jmax = 0
        for j in range(na):
            a += alphas[j]
            bq += alphas[j] * offsets[j]
            cq += alphas[j] * offsets[j] * offsets[j]
            if offsets[j] > tmax:
                tmax = offsets[j]
                jmax = j
        disc = bq * bq - a * cq
        if disc >= 0.0:
            cand = (bq + sqrt(disc)) / a
            if cand >= tmax:
                return cand
        na -= 1
        alphas[jmax] = alphas[na]
        offsets[jmax] = offsets[na]
    return INFINITY


def fast_march(inv_a, shape, spacings, source, init_idx=None, init_val=None):
    """Anisotropic periodic-grid eikonal solve; see the numpy fallback."""
    shape_t = tuple(int(s) for s in shape)
    cdef int ndim = len(shape_t)
    if ndim < 2 or ndim > 3:
        raise ValueError("fast_march supports 2 or 3 axes")
    cdef double[:, ::1] ia = np.ascontiguousarray(inv_a, dtype=np.float64)
    sp = np.asarray(spacings, dtype=np.float64)

    cdef Py_ssize_t cshape[3]
    cdef Py_ssize_t cstrides[3]
    cdef double ch[3]
    cdef int ax
    cdef Py_ssize_t ntot = 1
    for ax in range(ndim):
        cshape[ax] = shape_t[ax]
        ch[ax] = sp[ax]
        ntot *= shape_t[ax]
    cstrides[ndim - 1] = 1
    for ax in range(ndim - 2, -1, -1):
        cstrides[ax] = cstrides[ax + 1] * cshape[ax + 1]

    uarr = np.full(ntot, np.inf)
    starr = np.zeros(ntot, dtype=np.int8)
    cdef double[::1] u = uarr
    cdef signed char[::1] status = starr

    # heap sized for lazy deletion (each point pushed at most 2*ndim times)
    heap_val = np.empty(2 * ndim * ntot + 16, dtype=np.float64)
    heap_idx = np.empty(2 * ndim * ntot + 16, dtype=np.int64)
    cdef double[::1] hv = heap_val
    cdef Py_ssize_t[::1] hi = heap_idx
    cdef Heap hp
    hp.val = &hv[0]
    hp.idx = &hi[0]
    hp.size = 0

    cdef Py_ssize_t cs[3]
    cdef Py_ssize_t qcs[3]
    cdef Py_ssize_t src = 0, p, q
    cdef int step
    cdef double val, cand

    srct = tuple(int(i) for i in source)
    for ax in range(ndim):
        src += (srct[ax] % cshape[ax]) * cstrides[ax]

    u[src] = 0.0
    status[src] = ACCEPTED
    if init_idx is None:
        accepted0 = np.array([src], dtype=np.int64)
    else:
        ii = np.asarray(init_idx, dtype=np.int64)
        vv = np.asarray(init_val, dtype=np.float64)
        for k in range(ii.shape[0]):
            p = ii[k]
            if p != src:
                u[p] = vv[k]
                status[p] = ACCEPTED
        accepted0 = np.concatenate([[src], ii[ii != src]]).astype(np.int64)
    cdef Py_ssize_t[::1] acc0 = accepted0
    cdef Py_ssize_t ka
    for ka in range(acc0.shape[0]):
        p = acc0[ka]
        for ax in range(ndim):
            cs[ax] = (p // cstrides[ax]) % cshape[ax]
        for ax in range(ndim):
            for step in range(-1, 2, 2):
                q = wrap_neighbor(p, cs[ax], cshape[ax], cstrides[ax], step)
                if status[q] == ACCEPTED:
                    continue
                for _ax in range(ndim):
                    qcs[_ax] = (q // cstrides[_ax]) % cshape[_ax]
                cand = solve_point(q, qcs, ia, ch, cshape, cstrides, ndim,
                                   &u[0], &status[0])
                if cand < u[q]:
                    u[q] = cand
                    status[q] = TRIAL
                    heap_push(&hp, cand, q)

    while hp.size > 0:
        p = heap_pop(&hp, &val)
        if status[p] == ACCEPTED:
            continue
        status[p] = ACCEPTED
        u[p] = val
        for ax in range(ndim):
            cs[ax] = (p // cstrides[ax]) % cshape[ax]
        for ax in range(ndim):
            for step in range(-1, 2, 2):
                q = wrap_neighbor(p, cs[ax], cshape[ax], cstrides[ax], step)
                if status[q] == ACCEPTED:
                    continue
                for _ax in range(ndim):
                    qcs[_ax] = (q // cstrides[_ax]) % cshape[_ax]
                cand = solve_point(q, qcs, ia, ch, cshape, cstrides, ndim,
                                   &u[0], &status[0])
                if cand < u[q]:
                    u[q] = cand
                    status[q] = TRIAL
                    heap_push(&hp, cand, q)

    return uarr.reshape(shape_t)
