"""Central finite-difference check of the adjoint gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ParameterError, RegParams
from .energy import DEFAULT_LAMBDAS, check_mode, energy, energy_and_grad
from .flow import DEFAULT_KAPPA, lipschitz_project

MAX_SIZE = 12
FD_STEP = 1e-5
GRAD_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_index: int
    worst_label: str
    adjoint: float
    finite_diff: float
    checked: int
    total: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def random_instance(size: int, steps: int, mode: str, seed: int, kappa: float = DEFAULT_KAPPA):
    """Random images, mask and small parameters with the Lipschitz projection inactive.

    The projection scale is held constant by the adjoint, so the check draws
    velocities with ``dt * Lip(v) <= kappa / 2`` where the projection is the identity.
    """
    check_mode(mode)
    if size < 2:
        raise ParameterError(f"size must be >= 2, got {size}")
    rng = np.random.default_rng(seed)
    I0 = rng.random((size, size))
    I1 = rng.random((size, size))
    mask = np.zeros((size, size), dtype=bool)
    lo = rng.integers(0, size // 2, size=2)
    hi = lo + rng.integers(1, size // 2 + 1, size=2)
    mask[lo[0] : hi[0], lo[1] : hi[1]] = True
    dt = 1.0 / steps
    v = np.stack([lipschitz_project(rng.normal(0.0, 0.5, (2, size, size)), dt, 0.5 * kappa) for _ in range(steps)])
    r = rng.normal(0.0, 0.3, (steps, size, size))
    return RegParams(v, r), I0, I1, mask


def _label(index: int, steps: int, size: int) -> str:
    n_v = steps * 2 * size * size
    if index < n_v:
        k, c, y, x = np.unravel_index(index, (steps, 2, size, size))
        return f"v_sd[{k}][{'uv'[c]}] at (x={x}, y={y})"
    k, y, x = np.unravel_index(index - n_v, (steps, size, size))
    return f"r_iv[{k}] at (x={x}, y={y})"


def check_gradient(
    params: RegParams,
    I0,
    I1,
    mask,
    mode: str = "metamorphic",
    lambdas=DEFAULT_LAMBDAS,
    kappa: float = DEFAULT_KAPPA,
    h: float = FD_STEP,
) -> GradCheckResult:
    """Compare every adjoint gradient coordinate with a central difference of the energy."""
    steps = params.steps
    height, width = params.shape
    _, grad = energy_and_grad(params, I0, I1, mask, mode, lambdas, kappa)
    g = grad.flat()
    x = params.flat()
    fd = np.empty_like(x)
    for i in range(x.size):
        xi = x[i]
        x[i] = xi + h
        e_plus = energy(RegParams.from_flat(x, steps, height, width), I0, I1, mask, mode, lambdas, kappa).total
        x[i] = xi - h
        e_minus = energy(RegParams.from_flat(x, steps, height, width), I0, I1, mask, mode, lambdas, kappa).total
        x[i] = xi
        fd[i] = (e_plus - e_minus) / (2.0 * h)

    scale = np.maximum(np.abs(g), np.abs(fd))
    checked = scale > GRAD_FLOOR
    rel = np.zeros_like(g)
    rel[checked] = np.abs(g - fd)[checked] / scale[checked]
    worst = int(np.argmax(rel))
    return GradCheckResult(
        max_rel_err=float(rel[worst]),
        worst_index=worst,
        worst_label=_label(worst, steps, height),
        adjoint=float(g[worst]),
        finite_diff=float(fd[worst]),
        checked=int(checked.sum()),
        total=int(x.size),
    )
