"""Time integration of the deformation and intensity flows.

The deformation is built by composing ``N`` residual steps
``d_{k+1}(p) = d_k(p) + dt * v_k(p + d_k(p))`` with ``dt = 1/N``, each step
kept invertible by bounding ``dt * Lip(v_k)`` below ``kappa < 1``. The
intensity change is accumulated additively, ``q_{k+1} = q_k + dt * r_k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    DimensionError,
    ParameterError,
    RegParams,
    ShapeError,
    as_mask,
    as_scalar,
    as_vector,
    central_diff,
    check_same_shape,
    hadamard_mask,
    pixel_grid,
)
from .interp import Bilinear, warp

DEFAULT_STEPS = 7
DEFAULT_KAPPA = 0.9


@dataclass
class FlowTrace:
    """Intermediate states of one forward integration.

    ``phis`` has shape ``(N+1, 2, H, W)`` and ``qs`` shape ``(N+1, H, W)``;
    index 0 holds the identity / zero state. ``scales`` records the Lipschitz
    projection factor applied to each velocity.
    """

    phis: np.ndarray
    qs: np.ndarray
    scales: np.ndarray
    samplers: list = field(default_factory=list, repr=False)


def lipschitz_bound(v) -> float:
    """Max over pixels of the Frobenius norm of the finite-difference Jacobian."""
    v = as_vector(v, "v")
    if min(v.shape[1:]) < 2:
        raise DimensionError(f"grid must be at least 2x2, got {v.shape[2]}x{v.shape[1]}")
    jac = [central_diff(v[c], axis) for c in (0, 1) for axis in (1, 0)]
    frob = np.sqrt(sum(j * j for j in jac))
    return float(frob.max())


def _check_kappa(kappa: float) -> None:
    if not 0.0 < kappa < 1.0:
        raise ParameterError(f"kappa must lie in (0, 1), got {kappa}")


def projection_scale(v, dt: float, kappa: float) -> float:
    """Factor in (0, 1] that brings ``dt * Lip(v)`` down to at most ``kappa``."""
    _check_kappa(kappa)
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    step_lip = dt * lipschitz_bound(v)
    if step_lip <= kappa:
        return 1.0
    return kappa / step_lip


def lipschitz_project(v, dt: float, kappa: float) -> np.ndarray:
    v = as_vector(v, "v")
    s = projection_scale(v, dt, kappa)
    return v if s == 1.0 else v * s


def _validate(params: RegParams) -> None:
    if not isinstance(params, RegParams):
        raise ParameterError("params must be a RegParams instance")
    if not (np.all(np.isfinite(params.v_sd)) and np.all(np.isfinite(params.r_iv))):
        raise ParameterError("params contain non-finite values")


def projected_velocities(params: RegParams, kappa: float = DEFAULT_KAPPA):
    """Return ``(velocities, scales)`` after per-step Lipschitz projection."""
    _validate(params)
    _check_kappa(kappa)
    dt = 1.0 / params.steps
    scales = np.array([projection_scale(v, dt, kappa) for v in params.v_sd])
    return params.v_sd * scales[:, None, None, None], scales


def _euler(velocities: np.ndarray, dt: float, samplers: list | None = None) -> np.ndarray:
    n, _, h, w = velocities.shape
    gx, gy = pixel_grid(h, w)
    phis = np.zeros((n + 1, 2, h, w))
    for k in range(n):
        d = phis[k]
        b = Bilinear((h, w), gx + d[0], gy + d[1])
        phis[k + 1] = d + dt * b.sample(velocities[k])
        if samplers is not None:
            samplers.append(b)
    return phis


def integrate_deformation(params: RegParams, kappa: float = DEFAULT_KAPPA) -> np.ndarray:
    """All intermediate displacements, shape ``(N+1, 2, H, W)``; ``[-1]`` is phi(1)."""
    vel, _ = projected_velocities(params, kappa)
    return _euler(vel, 1.0 / params.steps)


def integrate_intensity(params: RegParams) -> np.ndarray:
    """All intermediate intensity maps, shape ``(N+1, H, W)``; ``[-1]`` is q(1)."""
    _validate(params)
    dt = 1.0 / params.steps
    qs = np.zeros((params.steps + 1,) + params.shape)
    for k in range(params.steps):
        qs[k + 1] = qs[k] + dt * params.r_iv[k]
    return qs


def integrate(params: RegParams, kappa: float = DEFAULT_KAPPA) -> FlowTrace:
    vel, scales = projected_velocities(params, kappa)
    samplers: list = []
    phis = _euler(vel, 1.0 / params.steps, samplers)
    return FlowTrace(phis, integrate_intensity(params), scales, samplers)


def metamorphic_output(I0, phi, q, m) -> np.ndarray:
    """Warped source plus the mask-confined intensity change."""
    I0 = as_scalar(I0, "I0")
    phi = as_vector(phi, "phi")
    q = as_scalar(q, "q")
    m = as_mask(m)
    check_same_shape(I0, phi, q, m)
    return warp(I0, phi) + hadamard_mask(q, m)


def invert_deformation(
    params: RegParams, kappa: float = DEFAULT_KAPPA, tol: float = 1e-10, max_iter: int = 500
) -> np.ndarray:
    """Inverse displacement: negated velocities applied in reverse order.

    Each negated step is taken implicitly, ``x = y - dt * v_k(x)``, solved by
    fixed-point iteration (a contraction because ``dt * Lip(v_k) < 1``). This
    undoes the explicit forward step exactly, up to ``tol``.
    """
    vel, _ = projected_velocities(params, kappa)
    dt = 1.0 / params.steps
    h, w = params.shape
    gx, gy = pixel_grid(h, w)
    grid = np.stack([gx, gy])
    y = grid.copy()
    for k in range(params.steps - 1, -1, -1):
        x = y.copy()
        for _ in range(max_iter):
            x_new = y - dt * Bilinear((h, w), x[0], x[1]).sample(vel[k])
            done = np.abs(x_new - x).max() <= tol
            x = x_new
            if done:
                break
        y = x
    return y - grid


def compose(phi_outer, phi_inner) -> np.ndarray:
    """Displacement of ``phi_outer o phi_inner``: ``d_in(p) + d_out(p + d_in(p))``."""
    phi_outer = as_vector(phi_outer, "phi_outer")
    phi_inner = as_vector(phi_inner, "phi_inner")
    if phi_outer.shape != phi_inner.shape:
        raise ShapeError(f"shape mismatch: {phi_outer.shape} vs {phi_inner.shape}")
    h, w = phi_inner.shape[1:]
    gx, gy = pixel_grid(h, w)
    b = Bilinear((h, w), gx + phi_inner[0], gy + phi_inner[1])
    return phi_inner + b.sample(phi_outer)
