"""SVG cellmaps of standardized residuals.

Cells within the cutoff are white; positive residuals beyond it ramp to
red and negative ones to blue, saturating at |r| = 6. Missing cells are
white with a diagonal hatch. Optional per-row grey shading marks
casewise outlyingness. Oversized maps are block-averaged first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .detect import DEFAULT_CUTOFF
from .errors import ConfigError

SATURATION = 6.0
CELL_PX = 16
LABEL_PX = 80


@dataclass
class CellmapSpec:
    std_residuals: np.ndarray
    missing_mask: np.ndarray | None = None
    case_shades: np.ndarray | None = None
    cutoff: float = DEFAULT_CUTOFF
    row_labels: Sequence[str] | None = None
    column_labels: Sequence[str] | None = None
    max_cells_per_axis: int = 100

    def validate(self):
        r = np.asarray(self.std_residuals, dtype=float)
        if r.ndim != 2:
            raise ConfigError("std_residuals must be a 2-d array")
        n, d = r.shape
        if self.missing_mask is not None and np.shape(self.missing_mask) != (n, d):
            raise ConfigError("missing_mask shape mismatch")
        if self.case_shades is not None:
            s = np.asarray(self.case_shades, dtype=float)
            if s.shape != (n,) or np.any(s < 0) or np.any(s > 1):
                raise ConfigError("case_shades must be n values in [0, 1]")
        if self.row_labels is not None and len(self.row_labels) != n:
            raise ConfigError("row_labels length mismatch")
        if self.column_labels is not None and len(self.column_labels) != d:
            raise ConfigError("column_labels length mismatch")
        if not self.cutoff > 0 or not self.cutoff < SATURATION:
            raise ConfigError(f"cutoff must lie in (0, {SATURATION})")
        if self.max_cells_per_axis < 1:
            raise ConfigError("max_cells_per_axis must be positive")


def cell_color(r, cutoff=DEFAULT_CUTOFF):
    """RGB triple for one residual; None (missing) maps to white."""
    if r is None or np.isnan(r):
        return (255, 255, 255)
    a = abs(r)
    if a <= cutoff:
        return (255, 255, 255)
    t = min(1.0, (a - cutoff) / (SATURATION - cutoff))
    fade = int(round(255 * (1 - t)))
    return (255, fade, fade) if r > 0 else (fade, fade, 255)


def _blocks(size, limit):
    step = math.ceil(size / limit) if size > limit else 1
    return [(s, min(s + step, size)) for s in range(0, size, step)]


def aggregate(res, missing, max_cells):
    """Average residuals over blocks of adjacent rows/columns, ignoring missing cells."""
    n, d = res.shape
    rb, cb = _blocks(n, max_cells), _blocks(d, max_cells)
    vals = np.where(missing, 0.0, res)
    cnt = (~missing).astype(float)
    out = np.full((len(rb), len(cb)), np.nan)
    for a, (r0, r1) in enumerate(rb):
        for b, (c0, c1) in enumerate(cb):
            k = cnt[r0:r1, c0:c1].sum()
            if k > 0:
                out[a, b] = vals[r0:r1, c0:c1].sum() / k
    return out, rb, cb


def _fmt(v):
    return f"{v:.6g}"


def cellmap_svg(spec: CellmapSpec) -> str:
    spec.validate()
    res = np.asarray(spec.std_residuals, dtype=float)
    missing = np.isnan(res) if spec.missing_mask is None else np.asarray(spec.missing_mask, dtype=bool)
    missing = missing | np.isnan(res)
    agg, rb, cb = aggregate(res, missing, spec.max_cells_per_axis)
    nr, nc = agg.shape
    # an aggregated block keeps the first label of its span
    rlab = [spec.row_labels[r0] for r0, _ in rb] if spec.row_labels is not None else None
    clab = [spec.column_labels[c0] for c0, _ in cb] if spec.column_labels is not None else None
    shades = None
    if spec.case_shades is not None:
        s = np.asarray(spec.case_shades, dtype=float)
        shades = [float(s[r0:r1].mean()) for r0, r1 in rb]

    left = LABEL_PX if rlab is not None else 0
    top = LABEL_PX if clab is not None else 0
    width = left + nc * CELL_PX
    height = top + nr * CELL_PX
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<defs><pattern id="hatch" patternUnits="userSpaceOnUse" width="4" height="4">'
        '<path d="M0,4 L4,0" stroke="#888888" stroke-width="0.6"/></pattern></defs>',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for a in range(nr):
        y = top + a * CELL_PX
        for b in range(nc):
            x = left + b * CELL_PX
            v = agg[a, b]
            rgb = cell_color(v, spec.cutoff)
            out.append(f'<rect x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" '
                       f'fill="rgb({rgb[0]},{rgb[1]},{rgb[2]})" stroke="#dddddd" stroke-width="0.5"/>')
            if np.isnan(v):
                out.append(f'<rect x="{x}" y="{y}" width="{CELL_PX}" height="{CELL_PX}" fill="url(#hatch)"/>')
        if shades is not None and shades[a] > 0:
            out.append(f'<rect x="{left}" y="{y}" width="{nc * CELL_PX}" height="{CELL_PX}" '
                       f'fill="#000000" fill-opacity="{_fmt(0.6 * shades[a])}"/>')
    if rlab is not None:
        for a, lab in enumerate(rlab):
            out.append(f'<text x="{left - 4}" y="{top + a * CELL_PX + CELL_PX - 4}" font-size="10" '
                       f'text-anchor="end">{escape(str(lab))}</text>')
    if clab is not None:
        for b, lab in enumerate(clab):
            cx = left + b * CELL_PX + CELL_PX // 2
            out.append(f'<text x="{cx}" y="{top - 4}" font-size="10" '
                       f'transform="rotate(-90 {cx} {top - 4})">{escape(str(lab))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_cellmap(spec: CellmapSpec, out) -> str:
    svg = cellmap_svg(spec)
    try:
        Path(out).write_text(svg)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from exc
    return svg
