"""Evaluation metrics: SSD, folding count, Dice, ground-truth field error."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import (
    DegenerateMaskError,
    MetaRegError,
    ShapeError,
    as_mask,
    as_scalar,
    as_vector,
    check_same_shape,
)
from .energy import jacobian_det
from .interp import warp


class UndefinedDiceError(MetaRegError, ValueError):
    pass


@dataclass
class MetricReport:
    ssd_total: float
    ssd_healthy: float | None
    foldings: int
    runtime_ms: float
    dice: float | None = None
    field_err_max: float | None = None

    def as_dict(self) -> dict:
        """JSON-ready dict; optional metrics that were not computed are omitted."""
        d = asdict(self)
        for key in ("ssd_healthy", "dice", "field_err_max"):
            if d[key] is None:
                del d[key]
        return d


def ssd_pair(a, b, m=None) -> tuple[float, float]:
    """Mean squared difference over the whole grid and over unmasked pixels."""
    a = as_scalar(a, "a")
    b = as_scalar(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    total = float(np.mean(sq))
    if m is None:
        return total, total
    m = as_mask(m)
    check_same_shape(a, m)
    healthy = ~m
    if not healthy.any():
        raise DegenerateMaskError("mask covers every pixel; SSD-healthy undefined")
    return total, float(np.mean(sq[healthy]))


def count_negative_jacobians(phi) -> int:
    return int(np.count_nonzero(jacobian_det(phi) < 0.0))


def dice(pred, truth) -> float:
    pred = as_mask(pred, "pred")
    truth = as_mask(truth, "truth")
    if pred.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    denom = int(pred.sum()) + int(truth.sum())
    if denom == 0:
        raise UndefinedDiceError("Dice is undefined for two empty masks")
    return 2.0 * int(np.count_nonzero(pred & truth)) / denom


def warp_mask(mask, phi) -> np.ndarray:
    """Bilinear pull of a binary mask, re-binarized at 0.5."""
    mask = as_mask(mask)
    return warp(mask.astype(np.float64), phi) >= 0.5


def field_error(phi, phi_truth, roi=None) -> float:
    """Largest Euclidean displacement error in pixels, optionally within ``roi``."""
    phi = as_vector(phi, "phi")
    phi_truth = as_vector(phi_truth, "phi_truth")
    if phi.shape != phi_truth.shape:
        raise ShapeError(f"shape mismatch: {phi.shape} vs {phi_truth.shape}")
    err = np.hypot(phi[0] - phi_truth[0], phi[1] - phi_truth[1])
    if roi is not None:
        roi = as_mask(roi, "roi")
        check_same_shape(err, roi)
        err = err[roi]
    return float(err.max()) if err.size else 0.0


def evaluate_registration(
    output,
    target,
    mask,
    phi,
    runtime_ms: float,
    src_seg=None,
    tgt_seg=None,
    phi_truth=None,
) -> MetricReport:
    """Collect a :class:`MetricReport` for one registered pair.

    ``ssd_healthy`` is left out when the mask leaves no healthy pixel; Dice
    needs both segmentations and ``field_err_max`` needs the true field.
    """
    if mask is not None and as_mask(mask).all():
        total = ssd_pair(output, target)[0]
        healthy = None
    else:
        total, healthy = ssd_pair(output, target, mask)
    report = MetricReport(
        ssd_total=total,
        ssd_healthy=healthy,
        foldings=count_negative_jacobians(phi),
        runtime_ms=float(runtime_ms),
    )
    if src_seg is not None and tgt_seg is not None:
        report.dice = dice(warp_mask(src_seg, phi), tgt_seg)
    if phi_truth is not None:
        report.field_err_max = field_error(phi, phi_truth)
    return report
