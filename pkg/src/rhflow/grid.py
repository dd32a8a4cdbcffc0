"""Periodic structured grids on the 2- and 3-torus.

Provides 4th-order central finite differences with periodic wraparound,
quadrature against a supplied volume element, and discrete Fourier
transforms along the symmetry axes (every axis except the first; metric
data in this package varies only along axis 0).  Scalar fields are plain
numpy arrays whose shape matches the grid.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PeriodicGrid",
    "derivative",
    "integrate",
    "mode_transform",
    "mode_inverse",
    "write_field",
    "read_field",
]


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid on the n-torus, n in {2, 3}.

    ``shape`` gives the points per axis and ``lengths`` the axis periods
    (2*pi each by default).  Axis counts must be even and at least 16 so
    the mode decomposition along symmetry axes is well defined.
    """

    shape: tuple
    lengths: tuple = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) not in (2, 3):
            raise ValueError("grid dimension must be 2 or 3")
        for n in shape:
            if n < 16:
                raise ValueError("need at least 16 points per axis")
            if n % 2:
                raise ValueError("axis point counts must be even")
        lengths = self.lengths
        if lengths is None:
            lengths = (2.0 * np.pi,) * len(shape)
        lengths = tuple(float(L) for L in lengths)
        if len(lengths) != len(shape):
            raise ValueError("lengths must match grid dimension")
        if any(L <= 0 for L in lengths):
            raise ValueError("axis lengths must be positive")
        object.__setattr__(self, "lengths", lengths)

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def spacings(self):
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacings))

    def axis(self, ax):
        """Coordinate values along one axis."""
        n = self.shape[ax]
        return np.arange(n) * (self.lengths[ax] / n)

    def coords(self):
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for ax in range(self.ndim):
            x = self.axis(ax)
            shp = [1] * self.ndim
            shp[ax] = self.shape[ax]
            out.append(x.reshape(shp))
        return out

    def profile_as_field(self, prof):
        """View a 1D profile on axis 0 as a broadcastable full-grid array."""
        prof = np.asarray(prof)
        if prof.shape != (self.shape[0],):
            raise ValueError("profile length must match axis 0")
        shp = [1] * self.ndim
        shp[0] = self.shape[0]
        return prof.reshape(shp)

    def wavenumbers(self, ax):
        """Physical wavenumbers 2*pi*k/L for the rfft modes of one axis."""
        n = self.shape[ax]
        return 2.0 * np.pi * np.arange(n // 2 + 1) / self.lengths[ax]

    def check_field(self, values):
        values = np.asarray(values)
        if values.shape != self.shape:
            raise ValueError(f"field shape {values.shape} does not match grid {self.shape}")
        return values


# 4th-order central stencils, periodic via np.roll
def _d1(values, ax, h):
    return (np.roll(values, 2, axis=ax) - 8.0 * np.roll(values, 1, axis=ax)
            + 8.0 * np.roll(values, -1, axis=ax) - np.roll(values, -2, axis=ax)) / (12.0 * h)


def _d2(values, ax, h):
    return (-np.roll(values, 2, axis=ax) + 16.0 * np.roll(values, 1, axis=ax)
            - 30.0 * values + 16.0 * np.roll(values, -1, axis=ax)
            - np.roll(values, -2, axis=ax)) / (12.0 * h * h)


def derivative(grid, values, ax, order=1):
    """4th-order central difference along one axis, periodic wraparound.

    ``order`` 1 gives the first derivative, 2 the second.  Works on full
    fields and (for ax = 0) on 1D axis profiles alike.
    """
    values = np.asarray(values, dtype=np.float64)
    if ax < 0 or ax >= grid.ndim:
        raise ValueError(f"axis {ax} out of range for a {grid.ndim}d grid")
    h = grid.spacings[ax]
    if values.ndim == 1:
        if ax != 0 or values.shape[0] != grid.shape[0]:
            raise ValueError("1d input must be an axis-0 profile")
    elif values.shape != grid.shape:
        raise ValueError("field shape does not match grid")
    axis = 0 if values.ndim == 1 else ax
    if order == 1:
        return _d1(values, axis, h)
    if order == 2:
        return _d2(values, axis, h)
    raise ValueError("order must be 1 or 2")


def integrate(grid, values, volume_element=None):
    """Quadrature sum(values * volume_element) * prod(h_i).

    ``volume_element`` defaults to 1 (flat measure); it must be positive
    where supplied.  For smooth periodic integrands the rectangle rule
    used here is spectrally accurate.
    """
    values = grid.check_field(np.asarray(values))
    if volume_element is None:
        return float(np.sum(values) * grid.cell_volume)
    volume_element = np.asarray(volume_element)
    if volume_element.shape != values.shape:
        try:
            volume_element = np.broadcast_to(volume_element, values.shape)
        except ValueError:
            raise ValueError("volume element shape mismatch") from None
    if np.any(volume_element <= 0):
        raise ValueError("volume element must be positive")
    return float(np.sum(values * volume_element) * grid.cell_volume)


def _symmetry_axes(grid, axes):
    if axes is None:
        axes = tuple(range(1, grid.ndim))
    else:
        axes = tuple(int(a) for a in axes)
        for a in axes:
            if a <= 0 or a >= grid.ndim:
                raise ValueError(f"axis {a} is not a symmetry axis (must be >= 1)")
    return axes


def mode_transform(grid, values, axes=None):
    """Forward DFT along the symmetry axes (all axes >= 1 by default).

    Uses the 1/N forward normalization, so a delta column transforms to
    a flat spectrum of magnitude 1/N.  Inverse is :func:`mode_inverse`;
    the roundtrip is exact to machine precision.
    """
    values = grid.check_field(np.asarray(values))
    axes = _symmetry_axes(grid, axes)
    return np.fft.rfftn(values, axes=axes, norm="forward")


def mode_inverse(grid, modes, axes=None):
    axes = _symmetry_axes(grid, axes)
    sizes = [grid.shape[a] for a in axes]
    return np.fft.irfftn(modes, s=sizes, axes=axes, norm="forward")


def interp_profile(grid, prof, x1):
    """Periodic linear interpolation of an axis-0 profile at positions x1."""
    prof = np.asarray(prof)
    n = grid.shape[0]
    h = grid.spacings[0]
    pos = np.asarray(x1) / h
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    i0 %= n
    i1 = (i0 + 1) % n
    return prof[i0] * (1.0 - frac) + prof[i1] * frac


def interp_periodic(grid, values, points):
    """Periodic multilinear interpolation of a full field.

    ``points`` has shape (m, ndim) in physical coordinates.
    """
    values = grid.check_field(np.asarray(values))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros(points.shape[0])
    idx0, frac = [], []
    for ax in range(grid.ndim):
        pos = points[:, ax] / grid.spacings[ax]
        i0 = np.floor(pos).astype(np.int64)
        frac.append(pos - i0)
        idx0.append(i0 % grid.shape[ax])
    for corner in range(1 << grid.ndim):
        w = np.ones(points.shape[0])
        idx = []
        for ax in range(grid.ndim):
            if corner >> ax & 1:
                idx.append((idx0[ax] + 1) % grid.shape[ax])
                w = w * frac[ax]
            else:
                idx.append(idx0[ax])
                w = w * (1.0 - frac[ax])
        out += w * values[tuple(idx)]
    return out


# ---------------------------------------------------------------------------
# raw field dumps
# ---------------------------------------------------------------------------

def write_field(path, grid, values):
    """Dump a field: one-line ASCII header, then row-major float64 (LE).

    Header: ``RHFLOW n N1 N2 [N3] L1 L2 [L3]``.
    """
    values = grid.check_field(np.asarray(values, dtype=np.float64))
    dims = " ".join(str(n) for n in grid.shape)
    lens = " ".join(repr(float(L)) for L in grid.lengths)
    header = f"RHFLOW {grid.ndim} {dims} {lens}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_field(path):
    """Read a raw field dump; returns (grid, values)."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if not header or header[0] != "RHFLOW":
            raise ValueError(f"{path}: not a field dump (missing RHFLOW header)")
        ndim = int(header[1])
        shape = tuple(int(tok) for tok in header[2:2 + ndim])
        lengths = tuple(float(tok) for tok in header[2 + ndim:2 + 2 * ndim])
        grid = PeriodicGrid(shape, lengths)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != np.prod(shape):
        raise ValueError(f"{path}: truncated field dump")
    return grid, data.reshape(shape).copy()
