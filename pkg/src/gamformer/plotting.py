"""Standalone SVG rendering of shape functions."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .shapes import ShapeModel

PANEL_W = 260
PANEL_H = 180
STRIP_H = 40
PAD = 36
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]


def _bin_positions(model: ShapeModel, i: int) -> np.ndarray:
    """Horizontal bin boundaries in data units (categorical: bin index)."""
    spec = model.specs[i]
    n = spec.n_effective
    if spec.is_categorical or len(spec.edges) == 0:
        return np.arange(n + 1, dtype=float)
    edges = spec.edges
    width = (edges[-1] - edges[0]) / max(len(edges) - 1, 1) if len(edges) > 1 else 1.0
    return np.concatenate([[edges[0] - width], edges, [edges[-1] + width]])


def _panel(model: ShapeModel, i: int, density, x0: float, y0: float) -> list[str]:
    spec = model.specs[i]
    n = spec.n_effective
    xs = _bin_positions(model, i)
    vals = model.values[i, :n, :].astype(float)
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    plot_top = y0 + STRIP_H + 8
    plot_h = PANEL_H - STRIP_H - 8

    def sx(v):
        return x0 + (v - xs[0]) / (xs[-1] - xs[0]) * PANEL_W

    def sy(v):
        return plot_top + (hi - v) / (hi - lo) * plot_h

    out = [f'<g class="panel" data-feature="{i}">']
    out.append(
        f'<text x="{x0 + PANEL_W / 2:.2f}" y="{y0 - 8:.2f}" text-anchor="middle" '
        f'font-size="12">{escape(model.feature_names[i])}</text>'
    )
    out.append(f'<g class="density">')
    counts = np.asarray(density if density is not None else [], dtype=float)
    if counts.size and counts.max() > 0:
        scaled = counts[:n] / counts.max()
        for k, c in enumerate(scaled):
            h = c * STRIP_H
            out.append(
                f'<rect x="{sx(xs[k]):.2f}" y="{y0 + STRIP_H - h:.2f}" '
                f'width="{max(sx(xs[k + 1]) - sx(xs[k]), 0.5):.2f}" height="{h:.2f}" fill="#bbbbbb"/>'
            )
    out.append("</g>")
    out.append(
        f'<rect x="{x0:.2f}" y="{plot_top:.2f}" width="{PANEL_W}" height="{plot_h}" '
        f'fill="none" stroke="#333333"/>'
    )
    for c in range(model.n_classes):
        pts = []
        for k in range(n):
            y = sy(vals[k, c])
            pts.append(f"{sx(xs[k]):.2f},{y:.2f}")
            pts.append(f"{sx(xs[k + 1]):.2f},{y:.2f}")
        out.append(
            f'<path class="shape" data-class="{c}" d="M {" L ".join(pts)}" fill="none" '
            f'stroke="{COLORS[c % len(COLORS)]}" stroke-width="1.5"/>'
        )
    out.append(
        f'<text x="{x0 - 4:.2f}" y="{plot_top + 10:.2f}" text-anchor="end" font-size="9">{hi:.2g}</text>'
    )
    out.append(
        f'<text x="{x0 - 4:.2f}" y="{plot_top + plot_h:.2f}" text-anchor="end" font-size="9">{lo:.2g}</text>'
    )
    out.append("</g>")
    return out


def render_shapes_svg(model: ShapeModel, density=None, path=None, columns: int = 3) -> str:
    """Draw one panel per feature: a bin-count strip above a step plot.

    Args:
        model: the fitted GAM.
        density: optional per-feature sequences of bin counts; ``None`` or an
            empty sequence leaves that feature's strip blank.
        path: if given, the SVG text is also written there.
        columns: panels per row.

    Returns:
        The SVG document as a string.
    """
    p = model.n_features
    if density is not None and len(density) not in (0, p):
        raise ValueError("density must have one entry per feature")
    cols = max(1, min(columns, p))
    rows = max(1, -(-p // cols))
    width = cols * (PANEL_W + 2 * PAD)
    height = rows * (PANEL_H + 2 * PAD)
    body = []
    for i in range(p):
        r, c = divmod(i, cols)
        dens = density[i] if density is not None and len(density) else None
        if dens is not None and len(dens) and len(dens) < model.specs[i].n_effective:
            raise ValueError(f"density for feature {i} shorter than its bin count")
        body += _panel(model, i, dens, c * (PANEL_W + 2 * PAD) + PAD, r * (PANEL_H + 2 * PAD) + PAD)
    svg = "\n".join(
        [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            '<rect width="100%" height="100%" fill="white"/>',
            *body,
            "</svg>",
        ]
    )
    if path is not None:
        Path(path).write_text(svg)
    return svg


def bin_counts(model: ShapeModel, X) -> list[np.ndarray]:
    """Per-feature histogram of rows over the model's bins."""
    idx = model.bin_indices(X)
    return [np.bincount(idx[:, i], minlength=model.n_bins) for i in range(model.n_features)]


def render_boundary_svg(model: ShapeModel, X, y=None, features=(0, 1), resolution: int = 60, path=None) -> str:
    """Heat map of P(class 1) over two features, other features at their medians.

    Training points, if given, are overlaid coloured by label.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.n_base:
        raise ValueError(f"X has {X.shape[1]} features, model expects {model.n_base}")
    a, b = features
    lo, hi = X.min(0), X.max(0)
    ga = np.linspace(lo[a], hi[a], resolution)
    gb = np.linspace(lo[b], hi[b], resolution)
    grid = np.tile(np.median(X, axis=0), (resolution * resolution, 1))
    grid[:, a] = np.repeat(ga, resolution)
    grid[:, b] = np.tile(gb, resolution)
    prob = model.predict_proba(grid)[:, -1].reshape(resolution, resolution)
    size = 360
    cell = size / resolution
    body = ['<g class="boundary">']
    for i in range(resolution):
        for j in range(resolution):
            v = int(round(255 * (1 - prob[i, j])))
            body.append(
                f'<rect x="{PAD + i * cell:.2f}" y="{PAD + size - (j + 1) * cell:.2f}" '
                f'width="{cell + 0.05:.2f}" height="{cell + 0.05:.2f}" fill="rgb(255,{v},{v})"/>'
            )
    body.append("</g>")
    if y is not None:
        body.append('<g class="points">')
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        for row, lab in zip(X, np.asarray(y)):
            px = PAD + (row[a] - lo[a]) / span[a] * size
            py = PAD + size - (row[b] - lo[b]) / span[b] * size
            body.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="1.5" fill="{COLORS[int(lab) % len(COLORS)]}"/>')
        body.append("</g>")
    total = size + 2 * PAD
    svg = "\n".join(
        [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">',
            '<rect width="100%" height="100%" fill="white"/>',
            *body,
            "</svg>",
        ]
    )
    if path is not None:
        Path(path).write_text(svg)
    return svg
