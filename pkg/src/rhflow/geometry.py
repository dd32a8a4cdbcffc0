"""Symmetry-reduced geometry on the torus.

The metric class is diagonal, g = diag(a_1, ..., a_n), with every
coefficient a positive function of the first coordinate only, paired
with a real-valued map phi(x1).  This class is closed under the coupled
Ricci / harmonic-map flow because both the Ricci tensor and the gradient
square of the map stay diagonal and x1-dependent.

All curvature quantities come from the closed forms for diagonal
metrics.  With lam_i = ln a_i and ' = d/dx1:

    Gamma^1_11 = lam_1'/2
    Gamma^1_jj = -(a_j / (2 a_1)) lam_j'          (j >= 2)
    Gamma^j_1j = lam_j'/2                          (j >= 2)

    Ric_11 = -sum_{j>=2} [lam_j''/2 + lam_j'^2/4 - lam_1' lam_j'/4]
    Ric_jj = -(a_j / (2 a_1)) [lam_j'' - lam_j' lam_1'
                               + (lam_j'/2) sum_m lam_m']
    R      = sum_i Ric_ii / a_i

Derivatives are 4th-order central differences so the same stencils serve
smooth metric data and logarithm fields of heat kernels.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import grid as gridmod
from .backend import fast_march

__all__ = [
    "ReducedMetric",
    "ScalarMap",
    "CoupledQuantities",
    "flat_metric",
    "profile_from_fourier",
    "coupled_quantities",
    "laplacian",
    "hessian",
    "grad_squared",
    "tensor_norm_sq",
    "bianchi_residual",
    "coupling_nonnegativity",
    "geodesic_distance",
    "geodesic_path",
]


def profile_from_fourier(grid, spec):
    """Build an axis-0 profile from a finite Fourier coefficient list.

    ``spec`` is a mapping with keys ``mean`` (float), ``cos`` and ``sin``
    (lists of (mode, amplitude) pairs).  No expression parsing.
    """
    x = grid.axis(0)
    L = grid.lengths[0]
    prof = np.full(grid.shape[0], float(spec.get("mean", 0.0)))
    for k, amp in spec.get("cos", []):
        prof += float(amp) * np.cos(2.0 * np.pi * int(k) * x / L)
    for k, amp in spec.get("sin", []):
        prof += float(amp) * np.sin(2.0 * np.pi * int(k) * x / L)
    return prof


@dataclass
class ReducedMetric:
    """Diagonal torus metric with x1-dependent coefficient profiles."""

    grid: gridmod.PeriodicGrid
    coeffs: np.ndarray  # shape (n, N1)
    _cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        n = self.grid.ndim
        if self.coeffs.shape != (n, self.grid.shape[0]):
            raise ValueError("coefficient array must have shape (ndim, N1)")
        if not np.all(np.isfinite(self.coeffs)) or np.any(self.coeffs <= 0.0):
            raise ValueError("metric coefficients must be finite and positive")

    @property
    def ndim(self):
        return self.grid.ndim

    def scaled(self, c):
        """The metric c*g (parabolic rescaling partner of tau -> c*tau)."""
        if c <= 0:
            raise ValueError("scale factor must be positive")
        return ReducedMetric(self.grid, c * self.coeffs)

    # -- derived 1D quantities, cached per instance ------------------------
    def _derived(self):
        if "lam1" in self._cache:
            return self._cache
        g = self.grid
        lam = np.log(self.coeffs)
        lam1 = np.stack([gridmod.derivative(g, lam[i], 0, 1) for i in range(self.ndim)])
        lam2 = np.stack([gridmod.derivative(g, lam[i], 0, 2) for i in range(self.ndim)])
        self._cache.update(lam=lam, lam1=lam1, lam2=lam2)
        return self._cache

    @property
    def sqrt_g(self):
        """Volume density sqrt(det g) as an axis-0 profile."""
        if "sqrt_g" not in self._cache:
            self._cache["sqrt_g"] = np.sqrt(np.prod(self.coeffs, axis=0))
        return self._cache["sqrt_g"]

    @property
    def volume_element(self):
        """sqrt(det g) broadcast over the full grid."""
        return self.grid.profile_as_field(self.sqrt_g)

    @property
    def christoffels(self):
        """Christoffel symbols Gamma[l, i, j] as (n, n, N1) profiles."""
        if "gam" not in self._cache:
            d = self._derived()
            n, n1 = self.ndim, self.grid.shape[0]
            gam = np.zeros((n, n, n, n1))
            lam1 = d["lam1"]
            a = self.coeffs
            gam[0, 0, 0] = 0.5 * lam1[0]
            for j in range(1, n):
                gam[0, j, j] = -0.5 * (a[j] / a[0]) * lam1[j]
                gam[j, 0, j] = gam[j, j, 0] = 0.5 * lam1[j]
            self._cache["gam"] = gam
        return self._cache["gam"]

    @property
    def ricci_diag(self):
        """Diagonal Ricci components Ric_ii as (n, N1) profiles."""
        if "ricci" not in self._cache:
            d = self._derived()
            lam1, lam2 = d["lam1"], d["lam2"]
            n = self.ndim
            a = self.coeffs
            ric = np.zeros_like(a)
            total1 = lam1.sum(axis=0)
            for j in range(1, n):
                ric[0] -= 0.5 * lam2[j] + 0.25 * lam1[j] ** 2 - 0.25 * lam1[0] * lam1[j]
                ric[j] = -(a[j] / (2.0 * a[0])) * (
                    lam2[j] - lam1[j] * lam1[0] + 0.5 * lam1[j] * total1)
            self._cache["ricci"] = ric
        return self._cache["ricci"]

    @property
    def scalar_curvature(self):
        """Scalar curvature R as an axis-0 profile."""
        if "R" not in self._cache:
            self._cache["R"] = np.sum(self.ricci_diag / self.coeffs, axis=0)
        return self._cache["R"]

    def ricci_eigen_bounds(self):
        """(inf, sup) of the eigenvalues Ric_ii / a_i over the axis."""
        eig = self.ricci_diag / self.coeffs
        return float(eig.min()), float(eig.max())


def flat_metric(grid, value=1.0):
    coeffs = np.full((grid.ndim, grid.shape[0]), float(value))
    return ReducedMetric(grid, coeffs)


@dataclass
class ScalarMap:
    """Real-valued map phi depending on the first coordinate only."""

    grid: gridmod.PeriodicGrid
    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.shape != (self.grid.shape[0],):
            raise ValueError("phi must be an axis-0 profile")
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("phi must be finite")


@dataclass
class CoupledQuantities:
    """The coupled scalar/tensor curvature quantities and their bounds.

    s_diag holds the diagonal components of Ric - alpha * dphi x dphi
    (equal to the coupled 2-tensor for this metric class), s_scalar is
    its trace R - alpha |grad phi|^2.  The k-bounds are grid suprema:
    -Ric <= k1 g, -(coupled tensor) <= k2 g, |grad s|^2 <= k3, |s| <= k4.
    """

    energy_density: np.ndarray
    tension: np.ndarray
    s_diag: np.ndarray
    s_scalar: np.ndarray
    k1: float
    k2: float
    k3: float
    k4: float


def coupled_quantities(metric, smap, alpha):
    """Assemble coupled-flow curvature quantities for (g, phi, alpha)."""
    if alpha < 0:
        raise ValueError("coupling alpha must be nonnegative")
    g = metric.grid
    phi_x = gridmod.derivative(g, smap.phi, 0, 1)
    a = metric.coeffs
    energy = phi_x ** 2 / a[0]
    sqg = metric.sqrt_g
    tension = gridmod.derivative(g, sqg * phi_x / a[0], 0, 1) / sqg
    s_diag = metric.ricci_diag.copy()
    s_diag[0] -= alpha * phi_x ** 2
    s_scalar = metric.scalar_curvature - alpha * energy
    eig_ric = metric.ricci_diag / a
    eig_s = s_diag / a
    ds = gridmod.derivative(g, s_scalar, 0, 1)
    return CoupledQuantities(
        energy_density=energy,
        tension=tension,
        s_diag=s_diag,
        s_scalar=s_scalar,
        k1=max(0.0, float(-eig_ric.min())),
        k2=max(0.0, float(-eig_s.min())),
        k3=float((ds ** 2 / a[0]).max()),
        k4=float(np.abs(s_scalar).max()),
    )


# ---------------------------------------------------------------------------
# differential operators on full fields
# ---------------------------------------------------------------------------

def laplacian(metric, values):
    """Laplace-Beltrami operator for the reduced metric class.

    Full fields get (1/sqrt g) d1(sqrt g / a1 d1 f) + sum_j (1/a_j) d_j^2 f;
    axis-0 profiles keep only the first term.  The conservative form makes
    the discrete integral of the result (against sqrt g) vanish to machine
    precision on the closed torus.
    """
    g = metric.grid
    values = np.asarray(values, dtype=np.float64)
    a = metric.coeffs
    sqg = metric.sqrt_g
    if values.ndim == 1:
        flux = sqg / a[0] * gridmod.derivative(g, values, 0, 1)
        return gridmod.derivative(g, flux, 0, 1) / sqg
    g.check_field(values)
    c = g.profile_as_field(sqg / a[0])
    out = gridmod.derivative(g, c * gridmod.derivative(g, values, 0, 1), 0, 1)
    out /= g.profile_as_field(sqg)
    for ax in range(1, g.ndim):
        out += gridmod.derivative(g, values, ax, 2) / g.profile_as_field(a[ax])
    return out


def grad_squared(metric, values):
    """|grad f|^2 with respect to the metric."""
    g = metric.grid
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        return gridmod.derivative(g, values, 0, 1) ** 2 / metric.coeffs[0]
    out = np.zeros(g.shape)
    for ax in range(g.ndim):
        prof = g.profile_as_field(metric.coeffs[ax])
        out += gridmod.derivative(g, values, ax, 1) ** 2 / prof
    return out


def hessian(metric, values):
    """Covariant Hessian of a full field, shape (n, n) + grid.shape."""
    g = metric.grid
    values = g.check_field(np.asarray(values, dtype=np.float64))
    n = g.ndim
    d = metric._derived()
    lam1 = d["lam1"]
    a = metric.coeffs
    first = [gridmod.derivative(g, values, ax, 1) for ax in range(n)]
    out = np.empty((n, n) + g.shape)
    out[0, 0] = gridmod.derivative(g, values, 0, 2) - \
        g.profile_as_field(0.5 * lam1[0]) * first[0]
    for j in range(1, n):
        mixed = gridmod.derivative(g, first[0], j, 1) - \
            g.profile_as_field(0.5 * lam1[j]) * first[j]
        out[0, j] = out[j, 0] = mixed
        out[j, j] = gridmod.derivative(g, values, j, 2) + \
            g.profile_as_field(0.5 * (a[j] / a[0]) * lam1[j]) * first[0]
        for k in range(1, j):
            out[j, k] = out[k, j] = gridmod.derivative(g, first[k], j, 1)
    return out


def tensor_norm_sq(metric, tensor):
    """Pointwise |T|^2 = g^{ii} g^{jj} T_ij^2 for a (n, n, ...) tensor."""
    g = metric.grid
    n = g.ndim
    out = np.zeros(tensor.shape[2:])
    for i in range(n):
        for j in range(n):
            w = g.profile_as_field(1.0 / (metric.coeffs[i] * metric.coeffs[j]))
            if tensor.shape[2:] == (g.shape[0],):
                w = 1.0 / (metric.coeffs[i] * metric.coeffs[j])
            out = out + tensor[i, j] ** 2 * w
    return out


# ---------------------------------------------------------------------------
# contracted Bianchi identity for the coupled tensor
# ---------------------------------------------------------------------------

def bianchi_residual(metric, smap, alpha, vector, alpha_prime=0.0):
    """Residual of the coupled contracted Bianchi identity and the
    nonnegativity field of the coupling term.

    For the coupled tensor S_ij = Ric_ij - alpha d_i phi d_j phi the
    identity 4 (div S)(X) - 2 dS(X) = -4 alpha (lap_g phi) dphi(X) holds;
    the first return value is the sup-norm of the discrete residual.
    The second is the pointwise field
    2 alpha |lap_g phi - dphi(X)|^2 - alpha' |grad phi|^2, nonnegative
    whenever alpha >= 0 and alpha' <= 0.

    ``vector`` gives the components X^i as (n,) constants or (n, N1)
    profiles.
    """
    g = metric.grid
    n = g.ndim
    n1 = g.shape[0]
    a = metric.coeffs
    quants = coupled_quantities(metric, smap, alpha)
    X = np.asarray(vector, dtype=np.float64)
    if X.shape == (n,):
        X = np.repeat(X[:, None], n1, axis=1)
    if X.shape != (n, n1):
        raise ValueError("vector field must be (n,) or (n, N1)")

    gam = metric.christoffels
    tdiag = quants.s_diag  # (n, N1): T_ii
    # div(T)_j = sum_k g^{kk} [d_k T_kj - Gamma^l_kk T_lj - Gamma^l_kj T_kl]
    div = np.zeros((n, n1))
    for j in range(n):
        acc = np.zeros(n1)
        for k in range(n):
            term = np.zeros(n1)
            if k == 0 and j == 0:
                term += gridmod.derivative(g, tdiag[0], 0, 1)
            elif k == 0:
                pass  # T_{0j} = 0 off the diagonal
            for l in range(n):
                tlj = tdiag[l] if l == j else 0.0
                tkl = tdiag[k] if l == k else 0.0
                term = term - gam[l, k, k] * tlj - gam[l, k, j] * tkl
            acc += term / a[k]
        div[j] = acc
    ds = gridmod.derivative(g, quants.s_scalar, 0, 1)
    dphi = gridmod.derivative(g, smap.phi, 0, 1)
    lhs = 4.0 * np.einsum("jn,jn->n", div, X) - 2.0 * ds * X[0]
    rhs = -4.0 * alpha * quants.tension * dphi * X[0]
    residual = float(np.abs(lhs - rhs).max())

    grad_x_phi = dphi * X[0]
    coupling = 2.0 * alpha * (quants.tension - grad_x_phi) ** 2 \
        - alpha_prime * quants.energy_density
    return residual, coupling


def coupling_nonnegativity(metric, smap, alpha, vector, alpha_prime=0.0):
    """Just the nonnegativity field from :func:`bianchi_residual`."""
    return bianchi_residual(metric, smap, alpha, vector, alpha_prime)[1]


# ---------------------------------------------------------------------------
# geodesic distance (eikonal fast marching) and geodesic paths
# ---------------------------------------------------------------------------

def _chord_distances(metric, source_idx, offsets):
    """Line-integral distances along straight coordinate chords.

    ``offsets`` is an (m, n) integer array of index displacements from the
    source.  The chord length integral of sqrt(sum a_i dx_i^2) is taken
    by an 8-panel trapezoid rule with the coefficients interpolated along
    the chord; exact for constant coefficients, and accurate to O(|dx|^3)
    for smooth profiles.  Used to initialize fast marching near the
    source, where the plain upwind update is least accurate.
    """
    g = metric.grid
    h = np.asarray(g.spacings)
    y1 = g.axis(0)[source_idx[0]]
    disp = offsets * h[None, :]
    nq = 9
    svals = np.linspace(0.0, 1.0, nq)
    acc = np.zeros(offsets.shape[0])
    for iq in range(nq):
        x1 = y1 + svals[iq] * disp[:, 0]
        speed_sq = np.zeros(offsets.shape[0])
        for ax in range(g.ndim):
            a_here = gridmod.interp_profile(g, metric.coeffs[ax], x1)
            speed_sq += a_here * disp[:, ax] ** 2
        w = 0.5 if iq in (0, nq - 1) else 1.0
        acc += w * np.sqrt(speed_sq)
    return acc / (nq - 1)


def geodesic_distance(metric, source_idx, exact_cells=4):
    """Geodesic distance field d_g(., y) from the grid point ``source_idx``.

    Fast marching for |grad u|_g = 1 (second-order upwind differences
    where available), exact at the source and first-order accurate
    globally.  A box of ``exact_cells`` cells per axis around the source
    is initialized with chord line integrals, which removes the large
    relative error a raw march makes in its first few rings.
    """
    source_idx = tuple(int(i) for i in source_idx)
    key = ("dist", source_idx, int(exact_cells))
    if key not in metric._cache:
        g = metric.grid
        inv_a = 1.0 / metric.coeffs
        init_idx = init_val = None
        m = int(exact_cells)
        if m > 0:
            m = min(m, min(g.shape) // 2 - 1)
            rng = np.arange(-m, m + 1)
            mesh = np.meshgrid(*([rng] * g.ndim), indexing="ij")
            offsets = np.stack([mm.ravel() for mm in mesh], axis=-1)
            vals = _chord_distances(metric, source_idx, offsets.astype(float))
            strides = np.cumprod((g.shape[1:] + (1,))[::-1])[::-1]
            idx = np.zeros(offsets.shape[0], dtype=np.int64)
            for ax in range(g.ndim):
                idx += ((offsets[:, ax] + source_idx[ax]) % g.shape[ax]) * strides[ax]
            init_idx, init_val = idx, vals
        metric._cache[key] = fast_march(inv_a, g.shape, g.spacings, source_idx,
                                        init_idx, init_val)
    return metric._cache[key]


def geodesic_path(metric, source_idx, target, n_nodes=33):
    """Approximate geodesic from the source grid point to ``target``.

    Backtraces the fast-marching distance field by steepest descent and
    resamples to ``n_nodes`` points (returned as physical coordinates,
    unwrapped continuously; row 0 is the source).  Falls back to the
    straight minimal-image chord if the descent stalls.
    """
    g = metric.grid
    u = geodesic_distance(metric, source_idx)
    src = np.array([g.axis(ax)[source_idx[ax]] for ax in range(g.ndim)])
    target = np.asarray(target, dtype=np.float64)
    lengths = np.array(g.lengths)
    hmin = min(g.spacings)

    grads = [gridmod.derivative(g, u, ax, 1) for ax in range(g.ndim)]
    pts = [target.copy()]
    pos = target.copy()
    ok = False
    for _ in range(int(8 * max(g.shape))):
        gap = (src - pos + 0.5 * lengths) % lengths - 0.5 * lengths
        if np.linalg.norm(gap) < 2.0 * hmin:
            ok = True
            break
        gvec = np.array([gridmod.interp_periodic(g, gr, pos[None])[0] for gr in grads])
        a_here = np.array([gridmod.interp_profile(g, metric.coeffs[ax], pos[0])
                           for ax in range(g.ndim)])
        step = gvec / a_here  # contravariant gradient
        norm = np.linalg.norm(step)
        if norm < 1e-12:
            break
        pos = pos - (0.5 * hmin) * step / norm
        pts.append(pos.copy())
    if ok:
        pts.append(pos + ((src - pos + 0.5 * lengths) % lengths - 0.5 * lengths))
        path = np.array(pts[::-1])  # source first
    else:
        gap = (target - src + 0.5 * lengths) % lengths - 0.5 * lengths
        path = src[None, :] + np.linspace(0.0, 1.0, n_nodes)[:, None] * gap[None, :]

    # resample to uniform arc parameter
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] <= 0:
        return np.repeat(path[:1], n_nodes, axis=0)
    s = np.linspace(0.0, arc[-1], n_nodes)
    out = np.empty((n_nodes, g.ndim))
    for ax in range(g.ndim):
        out[:, ax] = np.interp(s, arc, path[:, ax])
    return out
