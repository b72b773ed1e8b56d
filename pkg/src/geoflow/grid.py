"""Scalar and vector fields on a periodic rectangular grid.

Conventions used throughout the library:

- arrays are indexed ``[iy, ix]`` (row-major; a row is a line of constant y),
- a point is ``(x, y)`` in cell units,
- the grid wraps periodically in both axes,
- a Transform stores a displacement field ``d`` and acts as ``g(x) = x + d(x)``,
  so the identity transform is the zero field.

All field values are immutable after construction (the backing arrays are
locked), which makes every operation here a pure function that is safe to
call from concurrent readers.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GridMismatchError


@dataclass(frozen=True)
class Grid:
    """Periodic rectangular grid: ``nx`` by ``ny`` cells, ``spacing`` length per cell."""

    nx: int
    ny: int
    spacing: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.nx, (int, np.integer)) and isinstance(self.ny, (int, np.integer))):
            raise DomainError("grid cell counts must be integers")
        if self.nx < 4 or self.ny < 4:
            raise DomainError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not (np.isfinite(self.spacing) and self.spacing > 0):
            raise DomainError(f"grid spacing must be positive and finite, got {self.spacing}")
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def shape(self) -> tuple:
        return (self.ny, self.nx)

    def mesh(self):
        """Node coordinates as float arrays ``(X, Y)``, each of shape ``(ny, nx)``."""
        x = np.arange(self.nx, dtype=np.float64)
        y = np.arange(self.ny, dtype=np.float64)
        return np.meshgrid(x, y)


def _locked(values, shape, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True, order="C")
    if arr.shape != shape:
        raise DomainError(f"{what} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real value per cell."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _locked(self.values, self.grid.shape, "scalar field"))

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))


@dataclass(frozen=True, eq=False)
class VectorField:
    """One 2-vector per cell; component order is ``(x, y)`` along the last axis."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        shape = (self.grid.ny, self.grid.nx, 2)
        object.__setattr__(self, "values", _locked(self.values, shape, "vector field"))

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((grid.ny, grid.nx, 2)))


@dataclass(frozen=True, eq=False)
class Transform:
    """Grid map ``g(x) = x + displacement(x)``, coordinates in cells."""

    grid: Grid
    displacement: VectorField

    def __post_init__(self):
        if self.displacement.grid != self.grid:
            raise GridMismatchError("transform displacement lives on a different grid")

    @classmethod
    def identity(cls, grid: Grid) -> "Transform":
        return cls(grid, VectorField.zeros(grid))

    def points(self):
        """Target coordinates ``(px, py)`` of every grid node under the map."""
        X, Y = self.grid.mesh()
        d = self.displacement.values
        return X + d[:, :, 0], Y + d[:, :, 1]


def identity_transform(grid: Grid) -> Transform:
    return Transform.identity(grid)


def _require_same_grid(a, b, op: str):
    ga = a if isinstance(a, Grid) else a.grid
    gb = b if isinstance(b, Grid) else b.grid
    if ga != gb:
        raise GridMismatchError(f"{op}: operands live on different grids ({ga} vs {gb})")


# ---------------------------------------------------------------------------
# Low-level periodic bilinear machinery.
#
# _sample / _sample_jacobian / _splat operate on raw arrays and form an exact
# adjoint triple: _splat is the transpose of _sample with respect to the grid
# values, and _sample_jacobian is the derivative of _sample with respect to
# the sample point. Gradient code elsewhere relies on these identities holding
# to machine precision.
# ---------------------------------------------------------------------------

def _corner_indices(px, py, nx, ny):
    ix0f = np.floor(px)
    iy0f = np.floor(py)
    fx = px - ix0f
    fy = py - iy0f
    ix0 = ix0f.astype(np.int64) % nx
    iy0 = iy0f.astype(np.int64) % ny
    ix1 = (ix0 + 1) % nx
    iy1 = (iy0 + 1) % ny
    return ix0, iy0, ix1, iy1, fx, fy


def _sample(values: np.ndarray, px, py):
    """Bilinear sample of a periodic array ``values[iy, ix(, comp)]`` at (px, py)."""
    ny, nx = values.shape[:2]
    ix0, iy0, ix1, iy1, fx, fy = _corner_indices(px, py, nx, ny)
    v00 = values[iy0, ix0]
    v01 = values[iy0, ix1]
    v10 = values[iy1, ix0]
    v11 = values[iy1, ix1]
    wx0, wx1, wy0, wy1 = 1.0 - fx, fx, 1.0 - fy, fy
    if values.ndim == 3:
        wx0, wx1, wy0, wy1 = (w[..., None] for w in (wx0, wx1, wy0, wy1))
    return v00 * wx0 * wy0 + v01 * wx1 * wy0 + v10 * wx0 * wy1 + v11 * wx1 * wy1


def _sample_jacobian(values: np.ndarray, px, py):
    """Derivative of the bilinear interpolant with respect to the sample point.

    Returns ``(d/dpx, d/dpy)`` in cell units. The interpolant's derivative
    jumps across cell edges; exactly on an edge the two one-sided values are
    averaged, so at grid nodes this reduces to centered differences of the
    stored samples.
    """
    ny, nx = values.shape[:2]
    ix0, iy0, ix1, iy1, fx, fy = _corner_indices(px, py, nx, ny)
    ixm = (ix0 - 1) % nx
    iym = (iy0 - 1) % ny
    v00 = values[iy0, ix0]
    v01 = values[iy0, ix1]
    v10 = values[iy1, ix0]
    v11 = values[iy1, ix1]
    wx0, wx1, wy0, wy1 = 1.0 - fx, fx, 1.0 - fy, fy
    on_vx = fx == 0.0
    on_hy = fy == 0.0
    if values.ndim == 3:
        wx0, wx1, wy0, wy1 = (w[..., None] for w in (wx0, wx1, wy0, wy1))
        on_vx = on_vx[..., None]
        on_hy = on_hy[..., None]
    ddx = (v01 - v00) * wy0 + (v11 - v10) * wy1
    ddy = (v10 - v00) * wx0 + (v11 - v01) * wx1
    if np.any(on_vx):
        v0m = values[iy0, ixm]
        v1m = values[iy1, ixm]
        ddx_left = (v00 - v0m) * wy0 + (v10 - v1m) * wy1
        ddx = np.where(on_vx, 0.5 * (ddx + ddx_left), ddx)
    if np.any(on_hy):
        vm0 = values[iym, ix0]
        vm1 = values[iym, ix1]
        ddy_down = (v00 - vm0) * wx0 + (v01 - vm1) * wx1
        ddy = np.where(on_hy, 0.5 * (ddy + ddy_down), ddy)
    return ddx, ddy


def _splat(shape, px, py, weights) -> np.ndarray:
    """Transpose of :func:`_sample`: deposit ``weights`` onto the four corners."""
    ny, nx = shape[0], shape[1]
    ix0, iy0, ix1, iy1, fx, fy = _corner_indices(px, py, nx, ny)
    wx0, wx1, wy0, wy1 = 1.0 - fx, fx, 1.0 - fy, fy
    if len(shape) == 3:
        wx0, wx1, wy0, wy1 = (w[..., None] for w in (wx0, wx1, wy0, wy1))
    out = np.zeros(shape)
    np.add.at(out, (iy0, ix0), weights * wx0 * wy0)
    np.add.at(out, (iy0, ix1), weights * wx1 * wy0)
    np.add.at(out, (iy1, ix0), weights * wx0 * wy1)
    np.add.at(out, (iy1, ix1), weights * wx1 * wy1)
    return out


# ---------------------------------------------------------------------------
# Public operations.
# ---------------------------------------------------------------------------

def interpolate(f, p):
    """Periodic bilinear interpolation of a field at a continuous point.

    ``p`` is ``(x, y)`` in cell units (an array of trailing-dimension-2 points
    is also accepted). Exact at grid nodes, reproduces affine fields away from
    the wrap seam.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1:] != (2,):
        raise DomainError(f"interpolation point must have a trailing dimension of 2, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DomainError("interpolation point is not finite")
    out = _sample(f.values, p[..., 0], p[..., 1])
    if p.ndim == 1:
        return float(out) if isinstance(f, ScalarField) else np.asarray(out)
    return out


def warp(I, g: Transform):
    """Pull a field back through a transform: ``output(x) = I(g(x))``."""
    _require_same_grid(I, g, "warp")
    px, py = g.points()
    out = _sample(I.values, px, py)
    if isinstance(I, ScalarField):
        return ScalarField(I.grid, out)
    return VectorField(I.grid, out)


def compose(gA: Transform, gB: Transform) -> Transform:
    """Composition ``(gA o gB)(x) = gA(gB(x))``.

    The displacement of gA is interpolated at the points gB(x), so the result
    is exact wherever gB lands on grid nodes.
    """
    _require_same_grid(gA, gB, "compose")
    px, py = gB.points()
    dA = _sample(gA.displacement.values, px, py)
    d = gB.displacement.values + dA
    return Transform(gA.grid, VectorField(gA.grid, d))


def gradient(I: ScalarField) -> VectorField:
    """Spatial gradient by centered differences with periodic wrap."""
    v = I.values
    h2 = 2.0 * I.grid.spacing
    gx = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / h2
    gy = (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / h2
    return VectorField(I.grid, np.stack([gx, gy], axis=-1))


def divergence(v: VectorField) -> ScalarField:
    """Centered-difference divergence; the negative transpose of :func:`gradient`."""
    h2 = 2.0 * v.grid.spacing
    vx = v.values[:, :, 0]
    vy = v.values[:, :, 1]
    d = (np.roll(vx, -1, axis=1) - np.roll(vx, 1, axis=1)) / h2 \
        + (np.roll(vy, -1, axis=0) - np.roll(vy, 1, axis=0)) / h2
    return ScalarField(v.grid, d)


def l2_inner(a, b) -> float:
    """Discrete L2 inner product: sum of pointwise products times spacing^2."""
    _require_same_grid(a, b, "l2_inner")
    if type(a) is not type(b):
        raise DomainError("l2_inner operands must both be scalar fields or both vector fields")
    return float(np.sum(a.values * b.values)) * a.grid.spacing ** 2


def l2_norm(a) -> float:
    return float(np.sqrt(max(l2_inner(a, a), 0.0)))


def jacobian_determinant(g: Transform) -> ScalarField:
    """Determinant of ``Dg`` in cell coordinates, ``g = id + d``.

    Derivatives of the displacement are centered differences; the result is
    dimensionless (cell in, cell out).
    """
    d = g.displacement.values
    dxx = 0.5 * (np.roll(d[:, :, 0], -1, axis=1) - np.roll(d[:, :, 0], 1, axis=1))
    dxy = 0.5 * (np.roll(d[:, :, 0], -1, axis=0) - np.roll(d[:, :, 0], 1, axis=0))
    dyx = 0.5 * (np.roll(d[:, :, 1], -1, axis=1) - np.roll(d[:, :, 1], 1, axis=1))
    dyy = 0.5 * (np.roll(d[:, :, 1], -1, axis=0) - np.roll(d[:, :, 1], 1, axis=0))
    det = (1.0 + dxx) * (1.0 + dyy) - dxy * dyx
    return ScalarField(g.grid, det)
