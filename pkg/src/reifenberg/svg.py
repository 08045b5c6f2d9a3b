"""Static SVG figures with byte-deterministic output.

Coordinates are written in data units (``y`` flipped) with the shortest
round-trip float formatting, so identical inputs give identical files.
Points in ``R^n`` are drawn by their first two coordinates.
"""
from __future__ import annotations

import math

import numpy as np

CLASS_COLORS = {"good": "#2e7d32", "bad": "#c62828", "fin": "#1565c0"}


def _f(x) -> str:
    return repr(float(x) + 0.0)  # + 0.0 turns -0.0 into 0.0


def _header(xmin, ymin, w, h, width=800):
    height = max(1, int(round(width * h / w)))
    return (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
            f'viewBox="{_f(xmin)} {_f(ymin)} {_f(w)} {_f(h)}">\n')


def _frame(pts, pad=0.05):
    pts = np.asarray(pts, dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-9)
    m = pad * span
    return lo[0] - m, -(hi[1] + m), hi[0] - lo[0] + 2 * m, hi[1] - lo[1] + 2 * m


def _write(path, parts):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(parts))


def svg_curve(vertices, path, stroke=None) -> None:
    """One ``<path>`` through the polyline."""
    v = np.asarray(vertices, dtype=float)[:, :2]
    xmin, ymin, w, h = _frame(v)
    sw = _f(stroke if stroke is not None else max(w, h) / 500)
    d = "M" + " L".join(f"{_f(x)} {_f(-y)}" for x, y in v)
    _write(path, [_header(xmin, ymin, w, h),
                  f'<path d="{d}" fill="none" stroke="#000000" stroke-width="{sw}"/>\n', "</svg>\n"])


def svg_covering(hierarchy, scale: int, path) -> int:
    """Circles of one scale coloured by class; returns the number of circles."""
    rec = hierarchy.scales[scale]
    groups = [("good", rec.good), ("bad", rec.bad), ("fin", rec.fin)]
    r = rec.radius
    allc = [c[:, :2] for _, c in groups if len(c)]
    pts = np.vstack(allc + [np.array([[-1.0, -1.0], [1.0, 1.0]])])
    lo, hi = pts.min(axis=0) - r, pts.max(axis=0) + r
    xmin, ymin, w, h = lo[0], -hi[1], hi[0] - lo[0], hi[1] - lo[1]
    sw = _f(max(w, h) / 800)
    parts = [_header(xmin, ymin, w, h),
             f'<circle cx="0.0" cy="0.0" r="1.0" fill="none" stroke="#9e9e9e" stroke-width="{sw}" class="unit"/>\n']
    count = 0
    for name, cen in groups:
        col = CLASS_COLORS[name]
        for c in cen:
            parts.append(f'<circle cx="{_f(c[0])}" cy="{_f(-c[1])}" r="{_f(r)}" fill="none" '
                         f'stroke="{col}" stroke-width="{sw}" class="{name}"/>\n')
            count += 1
    parts.append("</svg>\n")
    _write(path, parts)
    return count


def svg_surface(mesh, path) -> None:
    """Mesh edges projected to the first two coordinates."""
    v = mesh.vertices[:, :2]
    xmin, ymin, w, h = _frame(v)
    sw = _f(max(w, h) / 1000)
    if mesh.k == 1:
        edges = mesh.cells
    else:
        c = mesh.cells
        edges = np.unique(np.sort(np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]]), axis=1), axis=0)
    d = " ".join(f"M{_f(v[a, 0])} {_f(-v[a, 1])} L{_f(v[b, 0])} {_f(-v[b, 1])}" for a, b in edges)
    _write(path, [_header(xmin, ymin, w, h),
                  f'<path d="{d}" fill="none" stroke="#000000" stroke-width="{sw}"/>\n', "</svg>\n"])


def svg_scaling_plot(x, y, slope: float, intercept: float, path, xlabel="delta0^2 + delta1^2",
                     ylabel="Lip - 1") -> None:
    """Log-log scatter with the fitted line ``log y = slope log x + intercept``."""
    lx, ly = np.log10(np.asarray(x, dtype=float)), np.log10(np.asarray(y, dtype=float))
    xmin, xmax = float(lx.min()), float(lx.max())
    ymin, ymax = float(ly.min()), float(ly.max())
    W, H, pad = 600.0, 400.0, 50.0
    sx = lambda t: pad + (t - xmin) / max(xmax - xmin, 1e-12) * (W - 2 * pad)
    sy = lambda t: H - pad - (t - ymin) / max(ymax - ymin, 1e-12) * (H - 2 * pad)
    parts = ['<?xml version="1.0" encoding="UTF-8"?>\n'
             '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="600" height="400" viewBox="0 0 600 400">\n',
             f'<rect x="{_f(pad)}" y="{_f(pad)}" width="{_f(W - 2 * pad)}" height="{_f(H - 2 * pad)}" '
             f'fill="none" stroke="#000000"/>\n']
    for a, b in zip(lx, ly):
        parts.append(f'<circle cx="{_f(sx(a))}" cy="{_f(sy(b))}" r="3.0" fill="#1565c0"/>\n')
    ln10 = math.log(10.0)
    fy = lambda t: (slope * t * ln10 + intercept) / ln10
    parts.append(f'<line x1="{_f(sx(xmin))}" y1="{_f(sy(fy(xmin)))}" x2="{_f(sx(xmax))}" y2="{_f(sy(fy(xmax)))}" '
                 f'stroke="#c62828"/>\n')
    parts.append(f'<text x="{_f(pad)}" y="30.0" font-size="14" class="slope">slope = {_f(slope)}</text>\n')
    parts.append(f'<text x="{_f(W / 2)}" y="{_f(H - 15)}" font-size="12" text-anchor="middle">log10 {xlabel}</text>\n')
    parts.append(f'<text x="15.0" y="{_f(H / 2)}" font-size="12" transform="rotate(-90 15 {_f(H / 2)})" '
                 f'text-anchor="middle">log10 {ylabel}</text>\n')
    parts.append("</svg>\n")
    _write(path, parts)


def emit_svg(kind: str, data, path):
    """Dispatch on ``kind`` in ``curve | covering | surface | scaling-plot``."""
    if kind == "curve":
        return svg_curve(data, path)
    if kind == "covering":
        hierarchy, scale = data
        return svg_covering(hierarchy, scale, path)
    if kind == "surface":
        return svg_surface(data, path)
    if kind == "scaling-plot":
        x, y, slope, intercept = data
        return svg_scaling_plot(x, y, slope, intercept, path)
    raise ValueError(f"unknown figure kind {kind!r}")
