"""Figures for registration runs, written straight to files.

Uses ``matplotlib.figure.Figure`` directly so nothing touches pyplot state and
no display backend is needed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from .core import pixel_grid

PANEL_SIZE = 2.2
PNG_METADATA = {"Software": None}


def _image_panel(ax, img, title, cmap="gray", vmin=0.0, vmax=1.0):
    ax.imshow(img, cmap=cmap, vmin=vmin, vmax=vmax, interpolation="nearest")
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])


def draw_grid(ax, phi, spacing: int = 4, color="tab:red"):
    """Draw the deformed pixel lattice ``p + d(p)`` every ``spacing`` pixels."""
    h, w = phi.shape[1:]
    gx, gy = pixel_grid(h, w)
    px, py = gx + phi[0], gy + phi[1]
    for r in range(0, h, spacing):
        ax.plot(px[r, :], py[r, :], color=color, lw=0.6)
    for c in range(0, w, spacing):
        ax.plot(px[:, c], py[:, c], color=color, lw=0.6)
    ax.set_xlim(-0.5, w - 0.5)
    ax.set_ylim(h - 0.5, -0.5)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])


def overview_figure(I0, I1, mask, qm, warped, output, phi=None) -> Figure:
    """Source, target, mask, masked intensity change, warped source, output (+ grid)."""
    panels = [
        (I0, "source"),
        (I1, "target"),
        (np.asarray(mask, dtype=float), "mask"),
        (warped, "warped source"),
        (output, "output"),
        (output - I1, "output - target"),
    ]
    ncols = len(panels) + 1 + (phi is not None)
    fig = Figure(figsize=(PANEL_SIZE * ncols, PANEL_SIZE + 0.3))
    axes = fig.subplots(1, ncols)
    for ax, (img, title) in zip(axes, panels):
        if title == "output - target":
            lim = max(float(np.abs(img).max()), 1e-12)
            _image_panel(ax, img, title, cmap="RdBu_r", vmin=-lim, vmax=lim)
        else:
            _image_panel(ax, img, title)
    lim = max(float(np.abs(qm).max()), 1e-12)
    _image_panel(axes[len(panels)], qm, "q x mask", cmap="RdBu_r", vmin=-lim, vmax=lim)
    if phi is not None:
        draw_grid(axes[-1], phi)
        axes[-1].set_title("deformation", fontsize=9)
    fig.tight_layout()
    return fig


def energy_figure(trace) -> Figure:
    """Log-scale energy terms per iteration."""
    fig = Figure(figsize=(5.0, 3.2))
    ax = fig.subplots()
    it = np.arange(len(trace))
    for key, style in (("total", "-k"), ("sim", "--"), ("reg_q", ":"), ("jdet", "-.")):
        vals = np.array([getattr(e, key) for e in trace])
        if np.any(vals > 0):
            ax.semilogy(it, np.where(vals > 0, vals, np.nan), style, lw=1.2, label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("energy")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return fig


def save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=PNG_METADATA if path.suffix == ".png" else None)
    return path


def render_run(out_dir, I0, I1, mask, result) -> dict:
    """Write ``overview.png`` and ``energy.png`` for one registration; returns paths."""
    out_dir = Path(out_dir)
    mask = np.zeros(I0.shape, dtype=bool) if mask is None else mask
    qm = np.where(mask, result.q_final, 0.0)
    warped = result.output - qm
    paths = {
        "overview": save(
            overview_figure(I0, I1, mask, qm, warped, result.output, result.phi_final),
            out_dir / "overview.png",
        ),
        "energy": save(energy_figure(result.energy_trace), out_dir / "energy.png"),
    }
    return {k: str(v) for k, v in paths.items()}
