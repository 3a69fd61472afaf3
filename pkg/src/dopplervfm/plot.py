"""Deterministic SVG quiver plots of polar velocity fields.

Cells are scan-converted to Cartesian coordinates with the probe at the top
(``x = r sin theta``, ``y = r cos theta`` pointing down). Arrows are coloured by
``v_r`` on a blue-white-red scale with a colour-bar legend.
"""

from __future__ import annotations

import numpy as np

from .domain import PolarGrid
from .phantom import VelocityField

WIDTH = 640
HEIGHT = 560
MARGIN = 40
LEGEND_W = 90


def _colour(t):
    """Blue (t=-1) to white (0) to red (t=1)."""
    t = float(np.clip(t, -1.0, 1.0))
    if t < 0:
        c = (round(255 * (1 + t)), round(255 * (1 + t)), 255)
    else:
        c = (255, round(255 * (1 - t)), round(255 * (1 - t)))
    return "#%02x%02x%02x" % c


def _fmt(v):
    return f"{v:.2f}"


def quiver_svg(field: VelocityField, grid: PolarGrid, mask=None, decimate=4, title="") -> str:
    if decimate < 1:
        raise ValueError("decimate must be >= 1")
    if field.shape != grid.shape:
        raise ValueError("field does not match grid")
    mask = np.ones(grid.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    R, T = grid.mesh()
    X, Y = R * np.sin(T), R * np.cos(T)
    x_min, x_max = float(X.min()), float(X.max())
    y_min, y_max = float(min(0.0, Y.min())), float(Y.max())
    plot_w = WIDTH - 2 * MARGIN - LEGEND_W
    plot_h = HEIGHT - 2 * MARGIN
    scale = min(plot_w / (x_max - x_min), plot_h / (y_max - y_min))

    def px(x, y):
        return MARGIN + (x - x_min) * scale, MARGIN + (y - y_min) * scale

    sel = np.zeros(grid.shape, dtype=bool)
    sel[::decimate, ::decimate] = True
    sel &= mask
    idx = np.argwhere(sel)
    vr = field.v_r[sel]
    vt = field.v_theta[sel]
    th = T[sel]
    vx = vr * np.sin(th) + vt * np.cos(th)
    vy = vr * np.cos(th) - vt * np.sin(th)
    speed = np.hypot(vx, vy)
    vmax = float(speed.max()) if speed.size else 0.0
    crange = float(np.abs(field.v_r[mask]).max()) if mask.any() else 0.0
    spacing = decimate * min(grid.dr, float(np.median(R[sel])) * grid.dtheta if sel.any() else grid.dr)
    arrow = 1.2 * spacing * scale / vmax if vmax > 0 else 0.0

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
    ]
    if title:
        out.append(f'<text x="{MARGIN}" y="{MARGIN / 2:.0f}" font-family="sans-serif" font-size="14">{title}</text>')
    # sector outline
    corners = [px(*p) for p in ((X[0, 0], Y[0, 0]), (X[-1, 0], Y[-1, 0]), (X[-1, -1], Y[-1, -1]), (X[0, -1], Y[0, -1]))]
    out.append(
        '<polygon fill="none" stroke="#999999" stroke-width="1" points="'
        + " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in corners)
        + '"/>'
    )
    for k in range(len(idx)):
        x0, y0 = px(X[tuple(idx[k])], Y[tuple(idx[k])])
        col = _colour(vr[k] / crange if crange > 0 else 0.0)
        dx, dy = vx[k] * arrow, vy[k] * arrow
        if dx == 0 and dy == 0:
            out.append(f'<circle cx="{_fmt(x0)}" cy="{_fmt(y0)}" r="1" fill="#555555"/>')
            continue
        x1, y1 = x0 + dx, y0 + dy
        ang = np.arctan2(dy, dx)
        head = 0.3 * np.hypot(dx, dy)
        hx1, hy1 = x1 - head * np.cos(ang - 0.4), y1 - head * np.sin(ang - 0.4)
        hx2, hy2 = x1 - head * np.cos(ang + 0.4), y1 - head * np.sin(ang + 0.4)
        out.append(
            f'<path d="M{_fmt(x0)},{_fmt(y0)} L{_fmt(x1)},{_fmt(y1)} M{_fmt(hx1)},{_fmt(hy1)} '
            f'L{_fmt(x1)},{_fmt(y1)} L{_fmt(hx2)},{_fmt(hy2)}" stroke="{col}" stroke-width="1.2" fill="none"/>'
        )
    # colour bar
    lx = WIDTH - LEGEND_W + 10
    n_steps = 20
    bar_h = plot_h * 0.6
    for s in range(n_steps):
        t = 1 - 2 * (s + 0.5) / n_steps
        y = MARGIN + s * bar_h / n_steps
        out.append(f'<rect x="{lx}" y="{_fmt(y)}" width="16" height="{_fmt(bar_h / n_steps + 0.5)}" fill="{_colour(t)}"/>')
    font = 'font-family="sans-serif" font-size="11"'
    out.append(f'<text x="{lx + 20}" y="{MARGIN + 10}" {font}>{crange:+.3g}</text>')
    out.append(f'<text x="{lx + 20}" y="{_fmt(MARGIN + bar_h / 2 + 4)}" {font}>0</text>')
    out.append(f'<text x="{lx + 20}" y="{_fmt(MARGIN + bar_h)}" {font}>{-crange:+.3g}</text>')
    out.append(f'<text x="{lx}" y="{_fmt(MARGIN + bar_h + 20)}" {font}>v_r [m/s]</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_quiver(path, field: VelocityField, grid: PolarGrid, mask=None, decimate=4, title="") -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(quiver_svg(field, grid, mask, decimate, title))
