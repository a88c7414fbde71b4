"""Static SVG output: accuracy-vs-compression curves and pixel masks.

Output is plain text assembled in a fixed order, so identical inputs give
identical bytes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["curves_svg", "masks_svg", "pixel_masks"]

_COLORS = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666")
_W, _H = 640, 420
_L, _R, _T, _B = 60, 170, 20, 50


def _xy(x, y):
    px = _L + x * (_W - _L - _R)
    py = _H - _B - y * (_H - _T - _B)
    return f"{px:.2f},{py:.2f}"


def curves_svg(curves):
    """``curves`` is a list of ``(label, compression_ratios, test_accuracies)``."""
    if not curves:
        raise ValueError("need at least one curve")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
    ]
    x0, y0 = _xy(0, 0).split(",")
    x1, y1 = _xy(1, 1).split(",")
    out.append(f'<rect x="{x0}" y="{y1}" width="{float(x1) - float(x0):.2f}" '
               f'height="{float(y0) - float(y1):.2f}" fill="none" stroke="black"/>')
    for t in np.linspace(0, 1, 6):
        px, py = _xy(t, 0).split(",")
        out.append(f'<text x="{px}" y="{float(py) + 18:.2f}" font-size="11" text-anchor="middle">{t:.1f}</text>')
        px, py = _xy(0, t).split(",")
        out.append(f'<text x="{float(px) - 6:.2f}" y="{float(py) + 4:.2f}" font-size="11" text-anchor="end">{t:.1f}</text>')
    out.append(f'<text x="{(_L + _W - _R) / 2:.2f}" y="{_H - 12}" font-size="12" text-anchor="middle">compression ratio</text>')
    out.append(f'<text x="14" y="{(_T + _H - _B) / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {(_T + _H - _B) / 2:.2f})">test accuracy</text>')
    for i, (label, xs, ys) in enumerate(curves):
        color = _COLORS[i % len(_COLORS)]
        pts = [_xy(float(x), float(y)) for x, y in zip(xs, ys)]
        if len(pts) > 1:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        for p in pts:
            cx, cy = p.split(",")
            out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>')
        ly = _T + 16 + 18 * i
        out.append(f'<rect x="{_W - _R + 12}" y="{ly - 9}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{_W - _R + 30}" y="{ly + 1}" font-size="11">{_escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def pixel_masks(groups, input_shape):
    """Boolean ``(channels, height, width)`` mask of surviving flat input coordinates."""
    h, w, c = input_shape
    mask = np.zeros(c * h * w, dtype=bool)
    mask[np.asarray(groups, dtype=np.int64)] = True
    return mask.reshape(c, h, w)


def masks_svg(masks, cell=6):
    """One panel per channel plus a panel with the per-pixel sum across channels."""
    masks = np.asarray(masks, dtype=bool)
    c, h, w = masks.shape
    panels = [masks[i].astype(int) for i in range(c)] + [masks.sum(axis=0)]
    names = [f"channel {i}" for i in range(c)] + ["sum"]
    pw, gap, top = w * cell, 12, 18
    width = len(panels) * (pw + gap) + gap
    height = h * cell + top + gap
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">', f'<rect width="{width}" height="{height}" fill="white"/>']
    for k, (panel, name) in enumerate(zip(panels, names)):
        x0 = gap + k * (pw + gap)
        peak = max(int(panel.max()), 1)
        out.append(f'<text x="{x0}" y="13" font-size="11">{name}</text>')
        out.append(f'<rect x="{x0}" y="{top}" width="{pw}" height="{h * cell}" fill="black"/>')
        for y, x in zip(*np.nonzero(panel)):
            level = int(round(255 * panel[y, x] / peak))
            out.append(f'<rect x="{x0 + x * cell}" y="{top + y * cell}" width="{cell}" height="{cell}" '
                       f'fill="rgb({level},{level},{level})"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
