"""Minimal SVG plots of a motion: top-down root path and per-joint heights."""

from __future__ import annotations

import numpy as np

from .motion import RawMotion

_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf")


def _polyline(xs, ys, box, lo, hi, color: str) -> str:
    x0, y0, w, h = box
    span = np.where(hi - lo > 1e-9, hi - lo, 1.0)
    px = x0 + (np.asarray(xs) - lo[0]) / span[0] * w
    py = y0 + h - (np.asarray(ys) - lo[1]) / span[1] * h
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'


def motion_svg(motion: RawMotion, title: str = "") -> str:
    """Left panel: root x/z path seen from above. Right panel: joint heights vs frame."""
    pad, pw, ph = 40, 320, 240
    width, height = 3 * pad + 2 * pw, 2 * pad + ph
    root = motion.root_position
    path_pts = root[:, [0, 2]]
    lo = path_pts.min(axis=0)
    hi = path_pts.max(axis=0)
    # equal aspect for the floor plan
    side = max(float((hi - lo).max()), 1e-3)
    mid = (lo + hi) / 2
    lo, hi = mid - side / 2, mid + side / 2
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<text x="{pad}" y="20" font-family="sans-serif" font-size="13">{_escape(title)}</text>',
             f'<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="#ccc"/>',
             f'<rect x="{2 * pad + pw}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="#ccc"/>',
             _polyline(path_pts[:, 0], path_pts[:, 1], (pad, pad, pw, ph), lo, hi, "#000")]
    heights = motion.global_positions()[:, :, 1]
    frames = np.arange(len(heights), dtype=float)
    hlo = np.array([0.0, heights.min()])
    hhi = np.array([max(frames[-1], 1.0), heights.max()])
    for j in range(heights.shape[1]):
        parts.append(_polyline(frames, heights[:, j], (2 * pad + pw, pad, pw, ph), hlo, hhi,
                               _COLORS[j % len(_COLORS)]))
    parts.append(f'<text x="{pad}" y="{pad + ph + 16}" font-family="sans-serif" '
                 'font-size="11">root path (top view)</text>')
    parts.append(f'<text x="{2 * pad + pw}" y="{pad + ph + 16}" font-family="sans-serif" '
                 'font-size="11">joint height per frame</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
