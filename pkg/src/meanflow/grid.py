"""Flat-torus geometry, field storage and spectral calculus.

Everything downstream works on a uniform n x n sampling of the square
torus [0, L)^2. Differential operators are realized spectrally (FFT),
integration is the trapezoid rule (= cell_area * sum for periodic data),
and geodesic balls are minimum-image Euclidean disks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataValidityError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    """
    Pre-computed spectral quantities for the periodic square domain.

    Parameters
    ----------
    n : int
        Samples per axis; must be even and >= 8 (radix-2 transforms,
        well-defined Nyquist handling).
    side_length : float
        Torus period L, the same for both axes. Defaults to 2*pi.
    """

    n: int
    side_length: float = TWO_PI

    def __post_init__(self) -> None:
        if self.n % 2 != 0 or self.n < 8:
            raise ValueError(f"grid resolution must be even and >= 8, got {self.n}")
        if not self.side_length > 0:
            raise ValueError("side_length must be positive")

        n, L = self.n, float(self.side_length)
        dx = L / n
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "cell_area", dx * dx)
        object.__setattr__(self, "area", L * L)
        object.__setattr__(self, "coords", np.arange(n) * dx)

        # Real-transform wavenumbers: full axis along x, half-spectrum along y.
        kx = TWO_PI * np.fft.fftfreq(n, d=dx)[:, None]
        ky = TWO_PI * np.fft.rfftfreq(n, d=dx)[None, :]
        object.__setattr__(self, "k2", kx**2 + ky**2)

        # Nyquist mode zeroed for odd-order derivatives, kept in the Laplacian.
        kx_d = kx.copy()
        kx_d[n // 2, 0] = 0.0
        ky_d = ky.copy()
        ky_d[0, -1] = 0.0
        object.__setattr__(self, "kx_d", kx_d)
        object.__setattr__(self, "ky_d", ky_d)

    def meshgrid(self):
        """Sample coordinates (X, Y), 'ij' indexing, each shape (n, n)."""
        return np.meshgrid(self.coords, self.coords, indexing="ij")

    def field(self, values: np.ndarray) -> "Field":
        return Field(self, values)

    def constant_field(self, value: float) -> "Field":
        return Field(self, np.full((self.n, self.n), float(value)))

    def field_from_function(self, fn) -> "Field":
        X, Y = self.meshgrid()
        return Field(self, np.asarray(fn(X, Y), dtype=float))


@dataclass(frozen=True)
class Point:
    """A point on the torus; coordinates are reduced modulo L on use."""

    x: float
    y: float

    def reduced(self, side_length: float) -> "Point":
        return Point(self.x % side_length, self.y % side_length)


class Field:
    """Real scalar samples on a TorusGrid; value [i, j] is f(i*L/n, j*L/n).

    Fields are immutable carriers: operations return new fields, and two
    fields combine arithmetically only when their grids are identical.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n, grid.n):
            raise ValueError(f"expected shape {(grid.n, grid.n)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataValidityError("field contains non-finite samples")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        values.setflags(write=False)

    def __setattr__(self, name, value):  # immutability
        raise AttributeError("Field is immutable")

    def _same_grid(self, other: "Field") -> None:
        if self.grid != other.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, Field):
            self._same_grid(other)
            return Field(self.grid, self.values + other.values)
        return Field(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Field):
            self._same_grid(other)
            return Field(self.grid, self.values - other.values)
        return Field(self.grid, self.values - float(other))

    def __mul__(self, other):
        if isinstance(other, Field):
            self._same_grid(other)
            return Field(self.grid, self.values * other.values)
        return Field(self.grid, self.values * float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())

    def mean(self) -> float:
        return float(self.values.mean())


def _check_finite(f: Field) -> None:
    # Construction already validates; guard recomputed contents defensively.
    if not np.all(np.isfinite(f.values)):
        raise DataValidityError("field contains non-finite samples")


def laplacian(f: Field) -> Field:
    """Spectral Laplacian: forward transform, multiply by -|k|^2, invert.

    The k = 0 mode is annihilated, so the result has zero mean to rounding.
    """
    _check_finite(f)
    g = f.grid
    spec = np.fft.rfft2(f.values)
    out = np.fft.irfft2(-g.k2 * spec, s=(g.n, g.n))
    return Field(g, out)


def gradient(f: Field) -> tuple[Field, Field]:
    """Spectral partial derivatives (df/dx, df/dy), Nyquist mode zeroed."""
    _check_finite(f)
    g = f.grid
    spec = np.fft.rfft2(f.values)
    fx = np.fft.irfft2(1j * g.kx_d * spec, s=(g.n, g.n))
    fy = np.fft.irfft2(1j * g.ky_d * spec, s=(g.n, g.n))
    return Field(g, fx), Field(g, fy)


def grad_sq(f: Field) -> Field:
    """Pointwise |grad f|^2 = (df/dx)^2 + (df/dy)^2 via spectral derivatives."""
    fx, fy = gradient(f)
    return Field(f.grid, fx.values**2 + fy.values**2)


def integrate(f: Field) -> float:
    """Trapezoid-rule integral over the torus: cell_area * sum of samples."""
    _check_finite(f)
    return float(f.grid.cell_area * f.values.sum())


def l2_norm(f: Field) -> float:
    """Quadrature L2 norm sqrt(int f^2 dV)."""
    return float(np.sqrt(f.grid.cell_area * np.square(f.values).sum()))


def periodic_distance(a: Point, b: Point, side_length: float) -> float:
    """Geodesic (minimum-image) distance between two torus points."""
    L = float(side_length)
    dx = abs(a.x - b.x) % L
    dy = abs(a.y - b.y) % L
    dx = min(dx, L - dx)
    dy = min(dy, L - dy)
    return float(np.hypot(dx, dy))


def distance_field(grid: TorusGrid, center: Point) -> np.ndarray:
    """Periodic distance from every sample to `center`, shape (n, n)."""
    L = grid.side_length
    c = center.reduced(L)
    dx = np.abs(grid.coords - c.x)
    dx = np.minimum(dx, L - dx)
    dy = np.abs(grid.coords - c.y)
    dy = np.minimum(dy, L - dy)
    return np.hypot(dx[:, None], dy[None, :])


def ball_mass(f: Field, center: Point, radius: float) -> float:
    """cell_area * sum of samples within periodic distance `radius` of center.

    Membership is decided by sample-center distance (no partial cells), so
    the error for smooth f is O(perimeter * cell size).
    """
    g = f.grid
    if not 0.0 < radius <= g.side_length / 2.0:
        raise ValueError(f"radius must lie in (0, L/2], got {radius}")
    mask = distance_field(g, center) <= radius
    return float(g.cell_area * f.values[mask].sum())


def rescale_sample(
    f: Field,
    center: Point,
    r: float,
    window_radius: float,
    m: int,
) -> np.ndarray:
    """Zoomed sampling f(center + r*xi) + 2*log(r) on a uniform xi-window.

    The window is an m x m grid on [-window_radius, window_radius]^2 in the
    rescaled coordinate xi; values come from periodic bicubic interpolation.
    """
    if r <= 0:
        raise ValueError("rescaling factor r must be positive")
    if r * window_radius > f.grid.side_length / 2.0:
        raise ValueError("window escapes the torus injectivity constraint (r*W > L/2)")
    if m < 2:
        raise ValueError("window resolution m must be >= 2")
    g = f.grid
    c = center.reduced(g.side_length)
    xi = np.linspace(-window_radius, window_radius, m)
    gx = (c.x + r * xi[:, None] + 0.0 * xi[None, :]) / g.dx
    gy = (c.y + 0.0 * xi[:, None] + r * xi[None, :]) / g.dx
    window = ndimage.map_coordinates(f.values, [gx, gy], order=3, mode="grid-wrap")
    return window + 2.0 * np.log(r)
