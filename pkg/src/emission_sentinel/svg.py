"""Small hand-rolled SVG renderings of the unit disk. CSV outputs are the real artifacts."""

from __future__ import annotations

import numpy as np

SIZE = 512


def _px(v):
    return (v + 1.0) * 0.5 * SIZE


def _py(v):
    return (1.0 - v) * 0.5 * SIZE


def _doc(body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
            f'viewBox="0 0 {SIZE} {SIZE}">\n<rect width="{SIZE}" height="{SIZE}" fill="white"/>\n'
            + "\n".join(body)
            + f'\n<circle cx="{SIZE / 2}" cy="{SIZE / 2}" r="{SIZE / 2}" fill="none" stroke="black"/>\n</svg>\n')


def heat_map(location_map) -> str:
    """Cells shaded by log density rescaled to [0, 1] over the lattice."""
    v = location_map.log_density
    finite = np.isfinite(v)
    lo, hi = (v[finite].min(), v[finite].max()) if finite.any() else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    w = SIZE / location_map.resolution
    body = []
    for ix, iy, val in zip(location_map.ix, location_map.iy, v):
        level = (val - lo) / span if np.isfinite(val) else 0.0
        grey = int(round(255 * (1.0 - level)))
        x = ix * w
        y = SIZE - (iy + 1) * w
        body.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{w:.2f}" '
                    f'fill="rgb({grey},{grey},{grey})"/>')
    return _doc(body)


def location_figure(l1, l2, region, truth=None, estimate=None) -> str:
    """Posterior location cloud over its HPD cells, with optional true-centre crosshair."""
    body = []
    for cell in region.cells:
        x0, x1, y0, y1 = region.cell_bounds(cell)
        body.append(f'<rect x="{_px(x0):.2f}" y="{_py(y1):.2f}" width="{_px(x1) - _px(x0):.2f}" '
                    f'height="{_py(y0) - _py(y1):.2f}" fill="#c6dbef"/>')
    for a, b in zip(l1, l2):
        body.append(f'<circle cx="{_px(a):.2f}" cy="{_py(b):.2f}" r="1" fill="#08519c"/>')
    if truth is not None:
        tx, ty = truth
        body.append(f'<line x1="{_px(tx):.2f}" y1="0" x2="{_px(tx):.2f}" y2="{SIZE}" '
                    f'stroke="grey" stroke-dasharray="4,3"/>')
        body.append(f'<line x1="0" y1="{_py(ty):.2f}" x2="{SIZE}" y2="{_py(ty):.2f}" '
                    f'stroke="grey" stroke-dasharray="4,3"/>')
    if estimate is not None:
        ex, ey = estimate
        body.append(f'<circle cx="{_px(ex):.2f}" cy="{_py(ey):.2f}" r="4" fill="none" stroke="red"/>')
    return _doc(body)
