"""Deterministic synthetic (healthy, pathological) image pairs with ground truth.

Every random draw comes from :class:`SplitMix64`, in the fixed order listed in
``gen_pair``, so the phantoms are reproducible bit for bit on any platform
that implements the same generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import MetaRegError, ParameterError, RegParams, pixel_grid
from .flow import DEFAULT_KAPPA, DEFAULT_STEPS, integrate_deformation, lipschitz_project, metamorphic_output
from .interp import warp
from .metrics import warp_mask

_MASK64 = (1 << 64) - 1

BACKGROUND = 0.05
ORGAN_LEVEL = 0.5
EDGE_WIDTH = 1.5
MAX_PLACEMENT_ATTEMPTS = 200


class SpecError(MetaRegError, ValueError):
    pass


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014).

    ``next_u64`` advances the state by ``0x9E3779B97F4A7C15`` and mixes it;
    ``uniform`` keeps the top 53 bits, giving a double in ``[0, 1)``.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)

    def integer(self, n: int) -> int:
        """Integer in ``[0, n)``."""
        return min(int(self.uniform() * n), n - 1)


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    seed: int = 0
    organ_radii: tuple[float, float] = (22.0, 17.0)
    texture_amp: float = 0.1
    warp_amp: float = 3.0
    warp_sigma: float = 10.0
    tumor_radius: float = 6.0
    tumor_intensity: float = 0.35
    tumor_count: int = 1

    def validate(self) -> None:
        rx, ry = self.organ_radii
        if self.size < 8:
            raise SpecError(f"size must be at least 8, got {self.size}")
        if rx <= 0 or ry <= 0 or 2 * rx + 4 > self.size or 2 * ry + 4 > self.size:
            raise SpecError(f"organ radii {self.organ_radii} do not fit a {self.size} grid")
        if not 0.0 <= self.texture_amp <= 0.3:
            raise SpecError(f"texture_amp must lie in [0, 0.3], got {self.texture_amp}")
        if self.warp_amp < 0 or self.warp_sigma <= 0:
            raise SpecError("warp_amp must be >= 0 and warp_sigma > 0")
        if not -1.0 <= self.tumor_intensity <= 1.0:
            raise SpecError(f"tumor_intensity must lie in [-1, 1], got {self.tumor_intensity}")
        if self.tumor_count < 1:
            raise SpecError(f"tumor_count must be >= 1, got {self.tumor_count}")
        if self.tumor_radius <= 0 or self.tumor_radius + 1 >= min(rx, ry):
            raise SpecError(
                f"tumor radius {self.tumor_radius} does not fit inside organ radii {self.organ_radii}"
            )


@dataclass
class PhantomPair:
    I0: np.ndarray
    I1: np.ndarray
    mask: np.ndarray
    phi_truth: np.ndarray
    q_truth: np.ndarray
    organ_mask_src: np.ndarray
    organ_mask_tgt: np.ndarray
    seed: int = 0


def _source_image(spec: PhantomSpec, rng: SplitMix64):
    n = spec.size
    rx, ry = spec.organ_radii
    gx, gy = pixel_grid(n, n)
    cx = (n - 1) / 2 + rng.uniform(-2.0, 2.0)
    cy = (n - 1) / 2 + rng.uniform(-2.0, 2.0)
    r = np.sqrt(((gx - cx) / rx) ** 2 + ((gy - cy) / ry) ** 2)
    inside = 0.5 * (1.0 - np.tanh((r - 1.0) * min(rx, ry) / EDGE_WIDTH))

    texture = np.zeros((n, n))
    for _ in range(5):
        kx = rng.uniform(1.0, 4.0)
        ky = rng.uniform(1.0, 4.0)
        phase = rng.uniform(0.0, 2 * math.pi)
        amp = rng.uniform(0.5, 1.0)
        texture += amp * np.sin(2 * math.pi * (kx * gx + ky * gy) / n + phase)
    peak = np.abs(texture).max()
    if peak > 0:
        texture /= peak

    I0 = BACKGROUND + ((ORGAN_LEVEL - BACKGROUND) + spec.texture_amp * texture) * inside
    return I0, r <= 1.0, (cx, cy)


def _velocity(spec: PhantomSpec, rng: SplitMix64, center) -> np.ndarray:
    n = spec.size
    rx, ry = spec.organ_radii
    gx, gy = pixel_grid(n, n)
    v = np.zeros((2, n, n))
    for _ in range(1 + rng.integer(3)):
        bx = center[0] + rx * rng.uniform(-0.8, 0.8)
        by = center[1] + ry * rng.uniform(-0.8, 0.8)
        angle = rng.uniform(0.0, 2 * math.pi)
        weight = rng.uniform(0.5, 1.0)
        bump = weight * np.exp(-((gx - bx) ** 2 + (gy - by) ** 2) / (2 * spec.warp_sigma**2))
        v[0] += math.cos(angle) * bump
        v[1] += math.sin(angle) * bump
    peak = np.hypot(v[0], v[1]).max()
    if spec.warp_amp == 0 or peak == 0:
        return np.zeros_like(v)
    v *= spec.warp_amp / peak
    return lipschitz_project(v, 1.0 / DEFAULT_STEPS, DEFAULT_KAPPA)


def _tumors(spec: PhantomSpec, rng: SplitMix64, organ_tgt: np.ndarray):
    n = spec.size
    R = spec.tumor_radius
    gx, gy = pixel_grid(n, n)
    ys, xs = np.nonzero(organ_tgt)
    x_lo, x_hi, y_lo, y_hi = xs.min(), xs.max(), ys.min(), ys.max()
    q_raw = np.zeros((n, n))
    mask = np.zeros((n, n), dtype=bool)
    for _ in range(spec.tumor_count):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            tx = rng.uniform(x_lo, x_hi)
            ty = rng.uniform(y_lo, y_hi)
            dist = np.hypot(gx - tx, gy - ty)
            footprint = dist <= R + 1.0
            if tx - R - 1 < 0 or ty - R - 1 < 0 or tx + R + 1 > n - 1 or ty + R + 1 > n - 1:
                continue
            if np.all(organ_tgt[footprint]):
                break
        else:
            raise SpecError("could not place a tumor strictly inside the organ")
        s = np.clip(dist / R, 0.0, 1.0)
        q_raw += spec.tumor_intensity * (1.0 - s * s) ** 2
        mask |= dist < R
    return q_raw, mask


def gen_pair(spec: PhantomSpec) -> PhantomPair:
    """Build one pair.

    Draw order: organ center (2), texture sinusoids (5 x 4), bump count (1),
    per bump (4), then per tumor two draws per placement attempt.
    """
    spec.validate()
    rng = SplitMix64(spec.seed)
    n = spec.size
    I0, organ_src, center = _source_image(spec, rng)

    v = _velocity(spec, rng, center)
    params = RegParams(np.repeat(v[None], DEFAULT_STEPS, axis=0), np.zeros((DEFAULT_STEPS, n, n)))
    phi_truth = integrate_deformation(params, DEFAULT_KAPPA)[-1]
    organ_tgt = warp_mask(organ_src, phi_truth)

    q_raw, mask = _tumors(spec, rng, organ_tgt)
    warped = warp(I0, phi_truth)
    # Keep the pathological image in [0, 1] without post-hoc clipping.
    q_truth = np.where(mask, np.clip(q_raw, -warped, 1.0 - warped), 0.0)
    I1 = metamorphic_output(I0, phi_truth, q_truth, mask)
    return PhantomPair(I0, I1, mask, phi_truth, q_truth, organ_src, organ_tgt, seed=spec.seed)


def gen_suite(base_seed: int, n: int, spec_template: PhantomSpec | None = None) -> list[PhantomPair]:
    if n < 1:
        raise ParameterError(f"suite size must be >= 1, got {n}")
    spec_template = spec_template or PhantomSpec()
    return [gen_pair(replace(spec_template, seed=base_seed + i)) for i in range(n)]
