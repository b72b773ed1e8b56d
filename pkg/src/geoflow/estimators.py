"""Estimator-style front end for the registration solvers.

The three classes here wrap the functional solvers in the scikit-learn
parameter protocol (``get_params`` / ``set_params``, ``fit`` / ``transform`` /
``predict``), so kernel width, matching weight, and step counts can be tuned by
any parameter-search machinery that understands estimators.  ``fit`` takes the
moving and target images as plain 2-D arrays; ``transform`` resamples further
images (label maps, masks) through the fitted spatial map.

Fitted attributes common to all three:

- ``displacement_``: array ``(ny, nx, 2)``, the map ``g(x) = x + d(x)`` that
  pulls the moving image onto the target (``transform`` applies it),
- ``warped_``: the registered moving image as an array,
- ``energy_``, ``kinetic_``, ``data_``: final objective and its two terms,
- ``n_iter_``, ``converged_``: optimizer bookkeeping,
- ``result_``: the full solver result for anything not surfaced above.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import GridMismatchError
from .flow import svf_exp
from .grid import Grid, ScalarField, Transform, VectorField, warp
from .kernel import KernelSpec
from .lddmm import LddmmProblem, register_lddmm
from .shooting import flow_transform, match_by_shooting
from .svf import register_svf


def _image_pair(X, y):
    """Validate a (moving, target) image pair and lift it onto one grid."""
    moving = check_array(X, dtype=np.float64, ensure_min_samples=4, ensure_min_features=4)
    target = check_array(y, dtype=np.float64, ensure_min_samples=4, ensure_min_features=4)
    if moving.shape != target.shape:
        raise GridMismatchError(
            f"moving and target images differ in shape: {moving.shape} vs {target.shape}"
        )
    grid = Grid(moving.shape[1], moving.shape[0])
    return ScalarField(grid, moving), ScalarField(grid, target)


class _BaseRegistration(BaseEstimator):
    def _store(self, grid, displacement, warped, energy, kinetic, data, converged, n_iter):
        self.image_shape_ = grid.shape
        self.displacement_ = displacement
        self.warped_ = warped
        self.energy_ = float(energy)
        self.kinetic_ = float(kinetic)
        self.data_ = float(data)
        self.converged_ = bool(converged)
        self.n_iter_ = int(n_iter)

    def transform(self, X):
        """Resample an image through the fitted map; returns an array."""
        check_is_fitted(self, "displacement_")
        arr = check_array(X, dtype=np.float64)
        if arr.shape != self.image_shape_:
            raise GridMismatchError(
                f"image shape {arr.shape} does not match the fitted grid {self.image_shape_}"
            )
        grid = Grid(arr.shape[1], arr.shape[0])
        g = Transform(grid, VectorField(grid, self.displacement_))
        return warp(ScalarField(grid, arr), g).values

    def predict(self, X):
        """Alias for :meth:`transform`."""
        return self.transform(X)


class LDDMMRegistration(_BaseRegistration):
    """Time-varying velocity registration (full metric matching).

    Parameters follow the solver defaults: ``kernel_sigma`` is the metric
    kernel width in cells, ``sigma`` the image-mismatch scale (small sigma =
    strong matching), ``steps`` the number of time steps.
    """

    def __init__(self, kernel_sigma=2.0, sigma=0.1, steps=16, max_iters=500, tol=1e-6):
        self.kernel_sigma = kernel_sigma
        self.sigma = sigma
        self.steps = steps
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y):
        I0, I1 = _image_pair(X, y)
        k = KernelSpec(I0.grid, self.kernel_sigma)
        problem = LddmmProblem(I0, I1, k, self.sigma, self.steps)
        res = register_lddmm(problem, max_iters=self.max_iters, tol=self.tol)
        self.result_ = res
        self._store(
            I0.grid,
            res.g10.displacement.values,
            res.warped.values,
            res.energy,
            res.kinetic,
            res.data,
            res.converged,
            res.iterations,
        )
        self.diffeomorphic_ = res.diffeomorphic
        return self


class ShootingRegistration(_BaseRegistration):
    """Initial-momentum registration (geodesic shooting).

    Exposes the scalar momentum parameterization: after ``fit`` the entire map
    is encoded in ``initial_momentum_``.  ``warped_`` is the advected endpoint
    image produced by the solver itself; ``transform`` integrates the shot
    velocities into a flow map, which agrees with advection to within the
    transport discretization error.
    """

    def __init__(self, kernel_sigma=2.0, weight=100.0, steps=32, max_iters=300, tol=1e-6):
        self.kernel_sigma = kernel_sigma
        self.weight = weight
        self.steps = steps
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y):
        I0, I1 = _image_pair(X, y)
        k = KernelSpec(I0.grid, self.kernel_sigma)
        res = match_by_shooting(
            I0, I1, k, self.weight, T=self.steps, max_iters=self.max_iters, tol=self.tol
        )
        grid = I0.grid
        g10 = flow_transform(res.state)
        self.result_ = res
        self._store(
            grid,
            g10.displacement.values,
            res.state.I[-1].values,
            res.objective,
            res.kinetic,
            res.data,
            res.converged,
            res.iterations,
        )
        self.initial_momentum_ = res.P0.values
        return self


class SVFRegistration(_BaseRegistration):
    """Stationary velocity field registration.

    ``squarings=0`` lets the exponential pick its own scaling depth; a positive
    value fixes the depth of the map that ``displacement_`` and ``transform``
    use (the optimizer always auto-selects internally).
    """

    def __init__(self, kernel_sigma=2.0, weight=100.0, squarings=0, max_iters=500, tol=1e-6):
        self.kernel_sigma = kernel_sigma
        self.weight = weight
        self.squarings = squarings
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y):
        I0, I1 = _image_pair(X, y)
        k = KernelSpec(I0.grid, self.kernel_sigma)
        res = register_svf(I0, I1, k, self.weight, max_iters=self.max_iters, tol=self.tol)
        grid = I0.grid
        if self.squarings == 0:
            g10 = res.g10
            warped = res.warped
        else:
            g10 = svf_exp(VectorField(grid, -res.v.values), self.squarings)
            warped = warp(I0, g10)
        self.result_ = res
        self._store(
            grid,
            g10.displacement.values,
            warped.values,
            res.energy,
            res.kinetic,
            res.data,
            res.converged,
            res.iterations,
        )
        self.velocity_ = res.v.values
        return self
