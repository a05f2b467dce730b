"""Registration loss and its exact gradient.

The loss is ``l1 * sim + l2 * reg_q + l3 * jdet`` where ``sim`` is a mean
squared error, ``reg_q`` a diffusion penalty on the masked intensity change
and ``jdet`` the folding penalty ``sum(max(0, -det J))``. Gradients with
respect to every velocity and intensity rate come from a reverse sweep over
the stored flow trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    DegenerateMaskError,
    DimensionError,
    NumericalError,
    ParameterError,
    RegParams,
    ShapeError,
    as_mask,
    as_scalar,
    as_vector,
    central_diff,
    central_diff_adjoint,
    check_same_shape,
    hadamard_mask,
    pixel_grid,
)
from .flow import DEFAULT_KAPPA, integrate
from .interp import Bilinear

MODES = ("metamorphic", "cfm", "diffeo")
DEFAULT_LAMBDAS = (1.0, 1.0, 0.001)


@dataclass(frozen=True)
class EnergyBreakdown:
    sim: float
    reg_q: float
    jdet: float
    total: float
    lambdas: tuple[float, float, float]

    @classmethod
    def build(cls, sim: float, reg_q: float, jdet: float, lambdas) -> "EnergyBreakdown":
        l1, l2, l3 = (float(x) for x in lambdas)
        total = l1 * sim + l2 * reg_q + l3 * jdet
        return cls(float(sim), float(reg_q), float(jdet), float(total), (l1, l2, l3))

    def as_dict(self) -> dict:
        return {"sim": self.sim, "reg_q": self.reg_q, "jdet": self.jdet, "total": self.total}


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode


def sim_mse(a, b) -> float:
    a = as_scalar(a, "a")
    b = as_scalar(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def _healthy(m: np.ndarray) -> np.ndarray:
    healthy = ~m
    if not healthy.any():
        raise DegenerateMaskError("mask covers every pixel; no healthy region left")
    return healthy


def sim_mse_masked(a, b, m, mode: str) -> float:
    """MSE over all pixels, or over unmasked pixels only in ``cfm`` mode."""
    check_mode(mode)
    a = as_scalar(a, "a")
    b = as_scalar(b, "b")
    m = as_mask(m)
    check_same_shape(a, b, m)
    if mode != "cfm":
        return sim_mse(a, b)
    healthy = _healthy(m)
    return float(np.mean((a - b)[healthy] ** 2))


def _forward_diffs(qm: np.ndarray):
    dx = np.zeros_like(qm)
    dy = np.zeros_like(qm)
    dx[:, :-1] = qm[:, 1:] - qm[:, :-1]
    dy[:-1, :] = qm[1:, :] - qm[:-1, :]
    return dx, dy


def reg_diffusion(qm) -> float:
    """Mean squared forward-difference gradient; zero difference on the last row/column."""
    qm = as_scalar(qm, "qm")
    if min(qm.shape) < 2:
        raise DimensionError(f"grid must be at least 2x2, got {qm.shape[1]}x{qm.shape[0]}")
    dx, dy = _forward_diffs(qm)
    return float(np.mean(dx * dx + dy * dy))


def reg_diffusion_grad(qm: np.ndarray) -> np.ndarray:
    dx, dy = _forward_diffs(qm)
    scale = 2.0 / qm.size
    g = np.zeros_like(qm)
    g[:, 1:] += scale * dx[:, :-1]
    g[:, :-1] -= scale * dx[:, :-1]
    g[1:, :] += scale * dy[:-1, :]
    g[:-1, :] -= scale * dy[:-1, :]
    return g


def _jacobian_parts(phi: np.ndarray):
    if min(phi.shape[1:]) < 2:
        raise DimensionError(f"grid must be at least 2x2, got {phi.shape[2]}x{phi.shape[1]}")
    a = 1.0 + central_diff(phi[0], 1)  # d phi_x / dx
    b = central_diff(phi[0], 0)  # d phi_x / dy
    c = central_diff(phi[1], 1)  # d phi_y / dx
    d = 1.0 + central_diff(phi[1], 0)  # d phi_y / dy
    return a, b, c, d


def jacobian_det(phi) -> np.ndarray:
    """Per-pixel Jacobian determinant of ``p -> p + d(p)``."""
    a, b, c, d = _jacobian_parts(as_vector(phi, "phi"))
    return a * d - b * c


def jdet_penalty(phi) -> float:
    """``sum(0.5 * (|J| - J))``, i.e. the total negative Jacobian mass."""
    J = jacobian_det(phi)
    return float(np.sum(0.5 * (np.abs(J) - J)))


def jdet_penalty_grad(phi) -> np.ndarray:
    """Gradient of :func:`jdet_penalty` w.r.t. the displacement (subgradient 0 at J=0)."""
    phi = as_vector(phi, "phi")
    a, b, c, d = _jacobian_parts(phi)
    gJ = np.where(a * d - b * c < 0.0, -1.0, 0.0)
    g = np.empty_like(phi)
    g[0] = central_diff_adjoint(gJ * d, 1) + central_diff_adjoint(-gJ * c, 0)
    g[1] = central_diff_adjoint(-gJ * b, 1) + central_diff_adjoint(gJ * a, 0)
    return g


class Evaluation(NamedTuple):
    """Everything one forward/backward pass produces."""

    breakdown: EnergyBreakdown
    grad: RegParams | None
    phi: np.ndarray
    q: np.ndarray
    output: np.ndarray


def _prepare(params, I0, I1, m, mode):
    check_mode(mode)
    I0 = as_scalar(I0, "I0")
    I1 = as_scalar(I1, "I1")
    if m is None:
        if mode != "diffeo":
            raise ParameterError(f"mode {mode!r} requires a mask")
        m = np.zeros(I0.shape, dtype=bool)
    m = as_mask(m)
    check_same_shape(I0, I1, m)
    if params.shape != I0.shape:
        raise ShapeError(f"params grid {params.shape} differs from image grid {I0.shape}")
    if mode == "cfm":
        _healthy(m)
    return I0, I1, m


def evaluate(
    params: RegParams,
    I0,
    I1,
    m,
    mode: str = "metamorphic",
    lambdas=DEFAULT_LAMBDAS,
    kappa: float = DEFAULT_KAPPA,
    with_grad: bool = True,
) -> Evaluation:
    """Forward pass, plus the reverse sweep when ``with_grad`` is set.

    In ``cfm`` and ``diffeo`` modes the intensity branch is dropped: ``q`` is
    zero and its gradient is zero.
    """
    I0, I1, m = _prepare(params, I0, I1, m, mode)
    # overflow surfaces as a NumericalError below rather than as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _evaluate(params, I0, I1, m, mode, lambdas, kappa, with_grad)


def _evaluate(params, I0, I1, m, mode, lambdas, kappa, with_grad) -> Evaluation:
    l1, l2, l3 = (float(x) for x in lambdas)
    n = params.steps
    dt = 1.0 / n
    h, w = I0.shape
    trace = integrate(params, kappa)
    phi = trace.phis[-1]
    gx, gy = pixel_grid(h, w)

    out_sampler = Bilinear((h, w), gx + phi[0], gy + phi[1])
    warped = out_sampler.sample(I0)
    use_q = mode == "metamorphic"
    q = trace.qs[-1] if use_q else np.zeros((h, w))
    qm = hadamard_mask(q, m)
    output = warped + qm

    resid = output - I1
    if mode == "cfm":
        healthy = ~m
        n_h = int(healthy.sum())
        sim = float(np.sum(resid[healthy] ** 2)) / n_h
    else:
        sim = float(np.mean(resid**2))
    reg_q = reg_diffusion(qm) if use_q else 0.0
    jdet = jdet_penalty(phi)
    breakdown = EnergyBreakdown.build(sim, reg_q, jdet, (l1, l2, l3))
    if not np.isfinite(breakdown.total):
        raise NumericalError("energy is not finite")
    if not with_grad:
        return Evaluation(breakdown, None, phi, q, output)

    if mode == "cfm":
        g_out = np.where(healthy, (2.0 * l1 / n_h) * resid, 0.0)
    else:
        g_out = (2.0 * l1 / resid.size) * resid

    grad = params.zeros_like()
    if use_q:
        g_qm = g_out + l2 * reg_diffusion_grad(qm)
        g_q = np.where(m, g_qm, 0.0)
        grad.r_iv[:] = dt * g_q

    # Reverse sweep through the deformation steps.
    dx, dy = out_sampler.spatial_gradient(I0)
    g_phi = np.stack([g_out * dx, g_out * dy])
    if l3 != 0.0:
        g_phi += l3 * jdet_penalty_grad(phi)
    vel = params.v_sd * trace.scales[:, None, None, None]
    for k in range(n - 1, -1, -1):
        b = trace.samplers[k]
        cot = dt * g_phi
        for c in (0, 1):
            grad.v_sd[k, c] = trace.scales[k] * b.scatter(cot[c])
        vdx, vdy = b.spatial_gradient(vel[k])
        g_phi = g_phi + np.stack(
            [cot[0] * vdx[0] + cot[1] * vdx[1], cot[0] * vdy[0] + cot[1] * vdy[1]]
        )

    if not (np.all(np.isfinite(grad.v_sd)) and np.all(np.isfinite(grad.r_iv))):
        raise NumericalError("gradient is not finite")
    return Evaluation(breakdown, grad, phi, q, output)


def energy(params, I0, I1, m, mode="metamorphic", lambdas=DEFAULT_LAMBDAS, kappa=DEFAULT_KAPPA):
    return evaluate(params, I0, I1, m, mode, lambdas, kappa, with_grad=False).breakdown


def energy_and_grad(
    params, I0, I1, m, mode="metamorphic", lambdas=DEFAULT_LAMBDAS, kappa=DEFAULT_KAPPA
) -> tuple[EnergyBreakdown, RegParams]:
    ev = evaluate(params, I0, I1, m, mode, lambdas, kappa)
    return ev.breakdown, ev.grad
