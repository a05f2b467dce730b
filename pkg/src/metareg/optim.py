"""Adam over the flow parameters and the per-pair registration loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import NumericalError, ParameterError, RegParams, as_mask, as_scalar
from .energy import DEFAULT_LAMBDAS, EnergyBreakdown, check_mode, evaluate
from .flow import DEFAULT_KAPPA, DEFAULT_STEPS
from .metrics import MetricReport, evaluate_registration

log = logging.getLogger(__name__)

CONVERGENCE_WINDOW = 10


@dataclass
class AdamState:
    m: RegParams
    v: RegParams
    t: int = 0
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: RegParams, **kwargs) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), **kwargs)


def adam_step(state: AdamState, params: RegParams, grad: RegParams) -> tuple[AdamState, RegParams]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    if not (np.all(np.isfinite(grad.v_sd)) and np.all(np.isfinite(grad.r_iv))):
        raise NumericalError("non-finite gradient passed to adam_step", state.t)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = [], [], []
    for name in ("v_sd", "r_iv"):
        g = getattr(grad, name)
        m = b1 * getattr(state.m, name) + (1.0 - b1) * g
        v = b2 * getattr(state.v, name) + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(getattr(params, name) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = replace(state, m=RegParams(*new_m), v=RegParams(*new_v), t=t)
    return new_state, RegParams(*new_p)


@dataclass
class RegConfig:
    mode: str = "metamorphic"
    steps: int = DEFAULT_STEPS
    kappa: float = DEFAULT_KAPPA
    lambdas: tuple[float, float, float] = DEFAULT_LAMBDAS
    lr: float = 0.05
    max_iters: int = 500
    tol_rel: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        check_mode(self.mode)
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if len(self.lambdas) != 3:
            raise ParameterError("lambdas must have three entries")
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 < self.kappa < 1.0:
            raise ParameterError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "steps": self.steps,
            "kappa": self.kappa,
            "lambdas": list(self.lambdas),
            "lr": self.lr,
            "max_iters": self.max_iters,
            "tol_rel": self.tol_rel,
            "seed": self.seed,
        }


@dataclass
class RegResult:
    phi_final: np.ndarray
    q_final: np.ndarray
    output: np.ndarray
    energy_trace: list[EnergyBreakdown]
    metrics: MetricReport
    iterations_run: int
    converged: bool
    params: RegParams = field(repr=False, default=None)


def _plateaued(trace: list[EnergyBreakdown], tol_rel: float) -> bool:
    if len(trace) <= CONVERGENCE_WINDOW:
        return False
    old = trace[-1 - CONVERGENCE_WINDOW].total
    new = trace[-1].total
    if old == 0.0:
        return True
    return abs(old - new) / abs(old) < tol_rel


def register(I0, I1, m, cfg: RegConfig | None = None, *, src_seg=None, tgt_seg=None, phi_truth=None) -> RegResult:
    """Estimate the deformation and intensity change taking ``I0`` onto ``I1``.

    Optimization starts from the identity map and zero intensity change and
    stops after ``cfg.max_iters`` Adam steps or once the total energy changes
    by less than ``cfg.tol_rel`` (relative) over a 10-iteration window.
    The optional keyword inputs only feed the metric report.
    """
    cfg = cfg or RegConfig()
    I0 = as_scalar(I0, "I0")
    I1 = as_scalar(I1, "I1")
    if m is not None:
        m = as_mask(m)
    h, w = I0.shape

    start = time.perf_counter()
    params = RegParams.zeros(cfg.steps, h, w)
    state = AdamState.for_params(params, lr=cfg.lr)
    trace: list[EnergyBreakdown] = []
    converged = False
    iters = 0
    while True:
        try:
            ev = evaluate(params, I0, I1, m, cfg.mode, cfg.lambdas, cfg.kappa)
        except NumericalError as exc:
            raise NumericalError(str(exc), iters) from exc
        trace.append(ev.breakdown)
        if _plateaued(trace, cfg.tol_rel):
            converged = True
            break
        if iters >= cfg.max_iters:
            break
        state, params = adam_step(state, params, ev.grad)
        iters += 1
        if iters % 50 == 0:
            log.debug("iter %d total=%.6g sim=%.6g", iters, ev.breakdown.total, ev.breakdown.sim)
    runtime_ms = (time.perf_counter() - start) * 1e3

    metrics = evaluate_registration(
        ev.output, I1, m, ev.phi, runtime_ms, src_seg=src_seg, tgt_seg=tgt_seg, phi_truth=phi_truth
    )
    return RegResult(
        phi_final=ev.phi,
        q_final=ev.q,
        output=ev.output,
        energy_trace=trace,
        metrics=metrics,
        iterations_run=iters,
        converged=converged,
        params=params,
    )
