"""Pure numpy/Python implementations of the two hot kernels.

These mirror the compiled versions in ``_kernels.pyx`` exactly (same
algorithms, same branch structure) so either backend can satisfy the
equivalence tests.  Selected automatically by :mod:`rhflow.backend` when
the compiled extension is unavailable.
"""

import heapq

import numpy as np

FAR, TRIAL, ACCEPTED = 0, 1, 2


def solve_cyclic_tridiag_batch(dl, d, du, b):
    """Solve a batch of cyclic tridiagonal systems A x = b.

    ``dl``/``du`` are the sub/super diagonals shared by every system
    (length N; ``dl[0]`` is the wrap entry A[0,N-1] and ``du[N-1]`` is
    A[N-1,0]).  ``d`` has shape (M, N) with one main diagonal per system
    and ``b`` is (M, N), real or complex.  Uses the Sherman-Morrison
    rank-one correction on top of a batched Thomas sweep.
    """
    dl = np.asarray(dl, dtype=np.float64)
    du = np.asarray(du, dtype=np.float64)
    d = np.atleast_2d(np.asarray(d, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b))
    m, n = d.shape
    if n < 3:
        raise ValueError("cyclic tridiagonal solve needs n >= 3")

    gamma = -d[:, 0]
    dmod = d.copy()
    dmod[:, 0] = d[:, 0] - gamma
    dmod[:, -1] = d[:, -1] - dl[0] * du[-1] / gamma

    u = np.zeros((m, n))
    u[:, 0] = gamma
    u[:, -1] = du[-1]

    y = _thomas_batch(dl, dmod, du, b)
    z = _thomas_batch(dl, dmod, du, u)

    # v = (1, 0, ..., 0, dl[0]/gamma)
    vy = y[:, 0] + (dl[0] / gamma) * y[:, -1]
    vz = z[:, 0] + (dl[0] / gamma) * z[:, -1]
    return y - z * (vy / (1.0 + vz))[:, None]


def _thomas_batch(dl, d, du, b):
    """Batched Thomas algorithm; diagonals (M, N) or shared (N,), b (M, N)."""
    m, n = b.shape
    cp = np.empty((m, n), dtype=np.float64)
    xp = np.empty_like(b)
    denom = d[:, 0]
    cp[:, 0] = du[0] / denom
    xp[:, 0] = b[:, 0] / denom
    for i in range(1, n):
        denom = d[:, i] - dl[i] * cp[:, i - 1]
        if i < n - 1:
            cp[:, i] = du[i] / denom
        xp[:, i] = (b[:, i] - dl[i] * xp[:, i - 1]) / denom
    x = np.empty_like(b)
    x[:, -1] = xp[:, -1]
    for i in range(n - 2, -1, -1):
        x[:, i] = xp[:, i] - cp[:, i] * x[:, i + 1]
    return x


def fast_march(inv_a, shape, spacings, source, init_idx=None, init_val=None):
    """Fast-marching solve of the anisotropic eikonal equation.

    Solves sum_ax inv_a[ax, i1] * (du/dx_ax)^2 = 1 on a periodic grid of
    the given ``shape`` (2 or 3 axes), where the metric coefficients
    depend only on the first-axis index ``i1``.  ``source`` is the index
    tuple of the seed point (u = 0 there, exactly).  Second-order upwind
    differences are used where two accepted neighbors are available.

    ``init_idx``/``init_val`` optionally pre-accept a set of flat indices
    with known distances (high-accuracy initialization near the source);
    the march then proceeds outward from that region.

    Returns the distance array of shape ``shape``.
    """
    shape = tuple(int(s) for s in shape)
    ndim = len(shape)
    inv_a = np.asarray(inv_a, dtype=np.float64)
    h = np.asarray(spacings, dtype=np.float64)
    ntot = int(np.prod(shape))
    u = np.full(ntot, np.inf)
    status = np.zeros(ntot, dtype=np.int8)
    strides = np.empty(ndim, dtype=np.int64)
    strides[-1] = 1
    for ax in range(ndim - 2, -1, -1):
        strides[ax] = strides[ax + 1] * shape[ax + 1]

    def flat(idx):
        return int(sum(int(idx[ax]) * strides[ax] for ax in range(ndim)))

    def coords(p):
        out = []
        for ax in range(ndim):
            out.append((p // strides[ax]) % shape[ax])
        return out

    def neighbor(p, cs, ax, step):
        c = (cs[ax] + step) % shape[ax]
        return p + (c - cs[ax]) * strides[ax]

    def solve_point(p, cs):
        i1 = cs[0]
        alphas, offsets = [], []
        for ax in range(ndim):
            best = np.inf
            t = 0.0
            alpha = 0.0
            for step in (-1, 1):
                n1 = neighbor(p, cs, ax, step)
                if status[n1] != ACCEPTED or u[n1] >= best:
                    continue
                best = u[n1]
                n2 = neighbor(p, cs, ax, 2 * step)
                c = inv_a[ax, i1]
                if status[n2] == ACCEPTED and u[n2] <= u[n1]:
                    alpha = c * 9.0 / (4.0 * h[ax] * h[ax])
                    t = (4.0 * u[n1] - u[n2]) / 3.0
                else:
                    alpha = c / (h[ax] * h[ax])
                    t = u[n1]
            if np.isfinite(best):
                alphas.append(alpha)
                offsets.append(t)
        while alphas:
            a = sum(alphas)
            bq = sum(al * t for al, t in zip(alphas, offsets))
            cq = sum(al * t * t for al, t in zip(alphas, offsets)) - 1.0
            disc = bq * bq - a * cq
            if disc >= 0.0:
                cand = (bq + np.sqrt(disc)) / a
                if cand >= max(offsets):
                    return cand
            # causality violated: drop the largest-offset axis and retry
            j = int(np.argmax(offsets))
            alphas.pop(j)
            offsets.pop(j)
        return np.inf

    src = flat(source)
    u[src] = 0.0
    status[src] = ACCEPTED
    accepted0 = [src]
    if init_idx is not None:
        for p, val in zip(np.asarray(init_idx, dtype=np.int64),
                          np.asarray(init_val, dtype=np.float64)):
            p = int(p)
            if p != src:
                u[p] = val
                status[p] = ACCEPTED
                accepted0.append(p)
    heap = []
    for p in accepted0:
        pcs = coords(p)
        for ax in range(ndim):
            for step in (-1, 1):
                q = neighbor(p, pcs, ax, step)
                if status[q] == ACCEPTED:
                    continue
                qcs = coords(q)
                val = solve_point(q, qcs)
                if val < u[q]:
                    u[q] = val
                    status[q] = TRIAL
                    heapq.heappush(heap, (val, q))

    while heap:
        val, p = heapq.heappop(heap)
        if status[p] == ACCEPTED:
            continue
        status[p] = ACCEPTED
        u[p] = val
        pcs = coords(p)
        for ax in range(ndim):
            for step in (-1, 1):
                q = neighbor(p, pcs, ax, step)
                if status[q] == ACCEPTED:
                    continue
                qcs = coords(q)
                cand = solve_point(q, qcs)
                if cand < u[q]:
                    u[q] = cand
                    status[q] = TRIAL
                    heapq.heappush(heap, (cand, q))

    return u.reshape(shape)
