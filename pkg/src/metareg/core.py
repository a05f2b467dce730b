"""Grid types and elementwise helpers shared by the rest of the package.

Fields are plain numpy arrays:

* scalar field: ``float64`` array of shape ``(height, width)``
* vector field: ``float64`` array of shape ``(2, height, width)``; channel 0 is
  the x (column) component, channel 1 the y (row) component, in pixels
* mask: ``bool`` array of shape ``(height, width)``

Pixel ``(i, j)`` sits at ``x = i`` (column), ``y = j`` (row), origin top-left.
Deformations are stored as displacements ``d`` with ``phi(p) = p + d(p)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MetaRegError(Exception):
    """Base class for all package errors."""


class DimensionError(MetaRegError, ValueError):
    pass


class ShapeError(MetaRegError, ValueError):
    pass


class ParameterError(MetaRegError, ValueError):
    pass


class DomainError(MetaRegError, ValueError):
    pass


class DegenerateMaskError(MetaRegError, ValueError):
    pass


class InvariantError(MetaRegError, ValueError):
    pass


class NumericalError(MetaRegError, ArithmeticError):
    """Raised when an energy or gradient stops being finite."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


def _check_dims(width: int, height: int) -> None:
    if int(width) <= 0 or int(height) <= 0:
        raise DimensionError(f"dimensions must be positive, got {width}x{height}")


def zeros(width: int, height: int) -> np.ndarray:
    _check_dims(width, height)
    return np.zeros((int(height), int(width)))


def zeros_vector(width: int, height: int) -> np.ndarray:
    _check_dims(width, height)
    return np.zeros((2, int(height), int(width)))


def as_scalar(x, name: str = "field") -> np.ndarray:
    """Validate and convert to a finite float64 scalar field."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected a 2D array, got shape {a.shape}")
    _check_dims(a.shape[1], a.shape[0])
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name}: contains non-finite values")
    return a


def as_vector(x, name: str = "vector field") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 3 or a.shape[0] != 2:
        raise ShapeError(f"{name}: expected shape (2, H, W), got {a.shape}")
    _check_dims(a.shape[2], a.shape[1])
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name}: contains non-finite values")
    return a


def as_mask(x, name: str = "mask") -> np.ndarray:
    """Convert a {0, 1} array to a boolean mask, rejecting any other value."""
    a = np.asarray(x)
    if a.ndim != 2:
        raise ShapeError(f"{name}: expected a 2D array, got shape {a.shape}")
    _check_dims(a.shape[1], a.shape[0])
    if a.dtype == bool:
        return a
    if not np.all((a == 0) | (a == 1)):
        raise InvariantError(f"{name}: entries must be exactly 0 or 1")
    return a == 1


def check_same_shape(*fields: np.ndarray) -> tuple[int, int]:
    """Return the common ``(height, width)`` of scalar/vector fields."""
    shapes = {f.shape[-2:] for f in fields}
    if len(shapes) != 1:
        raise ShapeError(f"grid shapes differ: {sorted(shapes)}")
    return shapes.pop()


def axpy(a: float, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    return a * x + y


def hadamard_mask(x, m) -> np.ndarray:
    """Zero ``x`` outside the mask. Result is exactly +0.0 where ``m`` is 0."""
    x = np.asarray(x, dtype=np.float64)
    m = as_mask(m)
    if x.shape != m.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {m.shape}")
    return np.where(m, x, 0.0)


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer pixel coordinates ``(x, y)`` as float arrays of shape (H, W)."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    return x, y


@dataclass
class RegParams:
    """Optimization variables: one spatial velocity and one intensity rate per step.

    Attributes:
        v_sd: spatial velocities, shape ``(N, 2, H, W)``.
        r_iv: intensity residual rates, shape ``(N, H, W)``.
    """

    v_sd: np.ndarray
    r_iv: np.ndarray

    def __post_init__(self):
        self.v_sd = np.asarray(self.v_sd, dtype=np.float64)
        self.r_iv = np.asarray(self.r_iv, dtype=np.float64)
        if self.v_sd.ndim != 4 or self.v_sd.shape[1] != 2:
            raise ShapeError(f"v_sd must have shape (N, 2, H, W), got {self.v_sd.shape}")
        if self.r_iv.shape != (self.v_sd.shape[0],) + self.v_sd.shape[2:]:
            raise ShapeError(
                f"r_iv shape {self.r_iv.shape} does not match v_sd {self.v_sd.shape}"
            )
        if self.v_sd.shape[0] < 1:
            raise ParameterError("steps must be >= 1")

    @classmethod
    def zeros(cls, steps: int, height: int, width: int) -> "RegParams":
        if steps < 1:
            raise ParameterError(f"steps must be >= 1, got {steps}")
        _check_dims(width, height)
        return cls(np.zeros((steps, 2, height, width)), np.zeros((steps, height, width)))

    @property
    def steps(self) -> int:
        return self.v_sd.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.v_sd.shape[2:]

    def copy(self) -> "RegParams":
        return RegParams(self.v_sd.copy(), self.r_iv.copy())

    def zeros_like(self) -> "RegParams":
        return RegParams(np.zeros_like(self.v_sd), np.zeros_like(self.r_iv))

    def flat(self) -> np.ndarray:
        """Concatenate all coordinates into one vector (v_sd first)."""
        return np.concatenate([self.v_sd.ravel(), self.r_iv.ravel()])

    @classmethod
    def from_flat(cls, vec: np.ndarray, steps: int, height: int, width: int) -> "RegParams":
        n_v = steps * 2 * height * width
        return cls(
            vec[:n_v].reshape(steps, 2, height, width),
            vec[n_v:].reshape(steps, height, width),
        )


def central_diff(f: np.ndarray, axis: int) -> np.ndarray:
    """Central differences in the interior, one-sided at the two borders."""
    if f.shape[axis] < 2:
        raise DimensionError("finite differences need at least 2 samples per axis")
    return np.gradient(f, axis=axis, edge_order=1)


def central_diff_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of :func:`central_diff` along ``axis``."""
    g = np.moveaxis(np.asarray(g, dtype=np.float64), axis, 0)
    out = np.zeros_like(g)
    n = g.shape[0]
    out[1] += g[0]
    out[0] -= g[0]
    out[n - 1] += g[n - 1]
    out[n - 2] -= g[n - 1]
    if n > 2:
        inner = 0.5 * g[1 : n - 1]
        out[2:n] += inner
        out[0 : n - 2] -= inner
    return np.moveaxis(out, 0, axis)
