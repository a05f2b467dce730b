"""Backward (pull) warping by clamped bilinear interpolation, with its adjoint."""

from __future__ import annotations

import math

import numpy as np

from .core import DomainError, ShapeError, as_scalar, as_vector, check_same_shape, pixel_grid


def _axis_setup(c: np.ndarray, n: int):
    """Per-axis interpolation indices for coordinates ``c`` on ``n`` samples.

    Returns ``(i0, i1, f, j0, j1, live)``: value cell ``i0, i1`` with fraction
    ``f``, derivative cell ``j0, j1`` and a flag that is False where the
    coordinate was clamped (zero derivative there).
    """
    live = (c >= 0.0) & (c <= n - 1)
    cc = np.clip(c, 0.0, n - 1)
    i0 = np.floor(cc).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    f = cc - i0
    # Derivative of a point on the last lattice line comes from the cell below it.
    j0 = np.minimum(i0, max(n - 2, 0))
    j1 = np.minimum(j0 + 1, n - 1)
    return i0, i1, f, j0, j1, live


class Bilinear:
    """Precomputed bilinear sampling of an ``(H, W)`` grid at fixed locations.

    One setup serves forward sampling, the derivative with respect to the
    sample location, and the transposed (scatter) operation, for any number of
    images living on the same grid.
    """

    def __init__(self, shape: tuple[int, int], x: np.ndarray, y: np.ndarray):
        self.shape = (int(shape[0]), int(shape[1]))
        h, w = self.shape
        self.out_shape = np.shape(x)
        x = np.asarray(x, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        x0, x1, self.fx, jx0, jx1, self.live_x = _axis_setup(x, w)
        y0, y1, self.fy, jy0, jy1, self.live_y = _axis_setup(y, h)
        # Flat indices: value corners, x-derivative corners, y-derivative rows.
        self.i00, self.i01 = y0 * w + x0, y0 * w + x1
        self.i10, self.i11 = y1 * w + x0, y1 * w + x1
        self.dx00, self.dx01 = y0 * w + jx0, y0 * w + jx1
        self.dx10, self.dx11 = y1 * w + jx0, y1 * w + jx1
        self.dy00, self.dy01 = jy0 * w + x0, jy0 * w + x1
        self.dy10, self.dy11 = jy1 * w + x0, jy1 * w + x1

    @staticmethod
    def _flat(img: np.ndarray) -> np.ndarray:
        return img.reshape(img.shape[:-2] + (-1,))

    def _lerp_x(self, flat, i0, i1):
        a = np.take(flat, i0, axis=-1)
        return a + self.fx * (np.take(flat, i1, axis=-1) - a)

    def sample(self, img: np.ndarray) -> np.ndarray:
        """Sample ``img`` of shape ``(..., H, W)``; returns ``(..., *out_shape)``."""
        flat = self._flat(img)
        top = self._lerp_x(flat, self.i00, self.i01)
        bot = self._lerp_x(flat, self.i10, self.i11)
        out = top + self.fy * (bot - top)
        return out.reshape(img.shape[:-2] + self.out_shape)

    def spatial_gradient(self, img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Derivatives of the interpolant with respect to sample x and y."""
        flat = self._flat(img)
        top = np.take(flat, self.dx01, axis=-1) - np.take(flat, self.dx00, axis=-1)
        bot = np.take(flat, self.dx11, axis=-1) - np.take(flat, self.dx10, axis=-1)
        dx = top + self.fy * (bot - top)
        dy = self._lerp_x(flat, self.dy10, self.dy11) - self._lerp_x(flat, self.dy00, self.dy01)
        dx = np.where(self.live_x, dx, 0.0)
        dy = np.where(self.live_y, dy, 0.0)
        shp = img.shape[:-2] + self.out_shape
        return dx.reshape(shp), dy.reshape(shp)

    def scatter(self, cot: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`sample` for a single channel cotangent."""
        h, w = self.shape
        c = np.asarray(cot, dtype=np.float64).ravel()
        fx, fy = self.fx, self.fy
        cy0 = c * (1.0 - fy)
        cy1 = c * fy
        idx = np.concatenate([self.i00, self.i01, self.i10, self.i11])
        wts = np.concatenate([cy0 * (1.0 - fx), cy0 * fx, cy1 * (1.0 - fx), cy1 * fx])
        return np.bincount(idx, weights=wts, minlength=h * w).reshape(h, w)


def sample_bilinear(img, x: float, y: float) -> float:
    """Bilinear value of ``img`` at ``(x, y)``; coordinates are clamped to the grid.

    >>> sample_bilinear([[1.0, 2.0], [3.0, 4.0]], 0.25, 0.75)
    2.75
    """
    img = as_scalar(img, "img")
    if not (math.isfinite(x) and math.isfinite(y)):
        raise DomainError(f"non-finite sample coordinate ({x}, {y})")
    b = Bilinear(img.shape, np.array([x]), np.array([y]))
    return float(b.sample(img)[0])


def _sampler(phi: np.ndarray) -> Bilinear:
    h, w = phi.shape[1:]
    gx, gy = pixel_grid(h, w)
    return Bilinear((h, w), gx + phi[0], gy + phi[1])


def warp(img, phi) -> np.ndarray:
    """Pull ``img`` through the displacement ``phi``: ``out(p) = img(p + d(p))``."""
    img = as_scalar(img, "img")
    phi = as_vector(phi, "phi")
    if img.shape != phi.shape[1:]:
        raise ShapeError(f"img {img.shape} and phi {phi.shape[1:]} differ")
    return _sampler(phi).sample(img)


def warp_adjoint(img, phi, grad_out) -> tuple[np.ndarray, np.ndarray]:
    """Reverse-mode derivative of :func:`warp`.

    Args:
        img: source image.
        phi: displacement field used in the forward warp.
        grad_out: cotangent of the warped image.

    Returns:
        ``(grad_img, grad_phi)`` with the shapes of ``img`` and ``phi``.
    """
    img = as_scalar(img, "img")
    phi = as_vector(phi, "phi")
    grad_out = as_scalar(grad_out, "grad_out")
    check_same_shape(img, phi, grad_out)
    b = _sampler(phi)
    grad_img = b.scatter(grad_out)
    dx, dy = b.spatial_gradient(img)
    return grad_img, np.stack([grad_out * dx, grad_out * dy])
