"""The smoothing operator K and the velocity-space inner product.

K is a periodic Gaussian low-pass filter applied in the discrete Fourier
domain, where it is diagonal and therefore exactly invertible: the transfer
function ``exp(-sigma_k^2 |w|^2 / 2)`` is strictly positive at every discrete
frequency. The rough-penalizing metric on velocity fields is

    v_inner(u, w) = l2_inner(K^{-1} u, w),

so high-frequency velocity content costs exponentially more than smooth
content. The underlying differential operator L (with K = (L^t L)^{-1}) is
never materialized; only K and its inverse are.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError
from .grid import Grid, VectorField, _require_same_grid


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian metric kernel of width ``sigma_k`` (in cells) on one grid."""

    grid: Grid
    sigma_k: float = 2.0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise DomainError(f"unsupported kernel kind {self.kind!r}")
        if not (np.isfinite(self.sigma_k) and self.sigma_k > 0):
            raise DomainError(f"kernel sigma must be positive and finite, got {self.sigma_k}")
        object.__setattr__(self, "sigma_k", float(self.sigma_k))
        # touch the transfer function so an underflowing sigma fails fast
        _ = self.transfer

    @cached_property
    def transfer(self) -> np.ndarray:
        """Fourier transfer function on the real-FFT grid, shape (ny, nx//2+1)."""
        wx = 2.0 * np.pi * np.fft.rfftfreq(self.grid.nx)
        wy = 2.0 * np.pi * np.fft.fftfreq(self.grid.ny)
        w2 = wy[:, None] ** 2 + wx[None, :] ** 2
        khat = np.exp(-0.5 * self.sigma_k ** 2 * w2)
        if not np.all(khat > 0):
            raise DomainError(
                f"sigma_k={self.sigma_k} underflows the kernel transfer on a "
                f"{self.grid.nx}x{self.grid.ny} grid; K would not be invertible"
            )
        khat.setflags(write=False)
        return khat


@dataclass(frozen=True, eq=False)
class MomentumField(VectorField):
    """Momentum density (metric-dual of velocity), one 2-vector per cell."""


def _filtered(values: np.ndarray, khat: np.ndarray, inverse: bool = False) -> np.ndarray:
    spec = np.fft.rfft2(values, axes=(0, 1))
    factor = khat[..., None] if values.ndim == 3 else khat
    spec = spec / factor if inverse else spec * factor
    return np.fft.irfft2(spec, s=values.shape[:2], axes=(0, 1))


def apply_K(m, k: KernelSpec) -> VectorField:
    """Smooth a momentum field into a velocity field (componentwise periodic
    Gaussian convolution, exact in the Fourier domain). Linear; DC gain 1."""
    _require_same_grid(m, k.grid, "apply_K")
    return VectorField(m.grid, _filtered(m.values, k.transfer, inverse=False))


def apply_K_inverse(u, k: KernelSpec) -> MomentumField:
    """Sharpen a velocity field back into its momentum: Fourier division by
    the transfer function. Exact inverse of :func:`apply_K` on the grid."""
    _require_same_grid(u, k.grid, "apply_K_inverse")
    return MomentumField(u.grid, _filtered(u.values, k.transfer, inverse=True))


def v_inner(u, w, k: KernelSpec) -> float:
    """Metric inner product on velocities: ``l2_inner(K^{-1} u, w)``."""
    _require_same_grid(u, w, "v_inner")
    _require_same_grid(u, k.grid, "v_inner")
    sharp = _filtered(u.values, k.transfer, inverse=True)
    return float(np.sum(sharp * w.values)) * u.grid.spacing ** 2
