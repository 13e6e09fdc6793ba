"""Deterministic SVG figures: scalar heatmaps and residual histories.

Heatmaps are embedded as a PNG (written with zlib, no timestamps) so the
output bytes depend on the input data only.
"""
from __future__ import annotations

import base64
import struct
import zlib
from pathlib import Path

import numpy as np
from skimage.measure import find_contours

from .fields import ScalarChartField

# anchor colors of the fixed map (dark blue -> teal -> yellow)
_ANCHORS = np.array([
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
], dtype=float)


def colormap(x: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to uint8 RGB."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0) * (len(_ANCHORS) - 1)
    i = np.minimum(x.astype(int), len(_ANCHORS) - 2)
    w = (x - i)[..., None]
    return np.rint((1 - w) * _ANCHORS[i] + w * _ANCHORS[i + 1]).astype(np.uint8)


def _png(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[k].tobytes() for k in range(h))

    def chunk(tag, data):
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))


def _f(x: float) -> str:
    return f"{x:.3f}"


def heatmap_svg(field: ScalarChartField, width: int = 480, contour: float | None = 0.0) -> str:
    """Heatmap with axis 0 horizontal and axis 1 vertical (upwards).

    The ``contour`` level is drawn when the field crosses it.
    """
    v = np.asarray(field.values, dtype=float)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError("heatmap needs finite, non-empty data")
    lo, hi = float(v.min()), float(v.max())
    x = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    img = colormap(x.T[::-1])  # rows top to bottom = axis-1 descending
    n1, n2 = v.shape
    ext1, ext2 = (n1 - 1) * field.spacing[0] or 1.0, (n2 - 1) * field.spacing[1] or 1.0
    height = max(1, int(round(width * ext2 / ext1)))
    href = base64.b64encode(_png(img)).decode("ascii")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height + 24}" '
        f'viewBox="0 0 {width} {height + 24}">',
        f'<image x="0" y="0" width="{width}" height="{height}" preserveAspectRatio="none" '
        f'style="image-rendering:pixelated" href="data:image/png;base64,{href}"/>',
    ]
    if contour is not None and lo < contour < hi:
        sx, sy = width / max(n1 - 1, 1), height / max(n2 - 1, 1)
        for c in find_contours(v, contour):
            pts = " ".join(f"{_f(a * sx)},{_f(height - b * sy)}" for a, b in c)
            parts.append(f'<polyline points="{pts}" fill="none" stroke="white" stroke-width="1.5"/>')
    parts.append(f'<text x="4" y="{height + 17}" font-family="monospace" font-size="12">'
                 f'{field.name}: min {lo:.6g} max {hi:.6g}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def history_svg(history, width: int = 480, height: int = 300, label: str = "residual") -> str:
    """Polyline of log10(history) against the iteration index."""
    y = np.asarray(list(history), dtype=float)
    if y.size == 0:
        raise ValueError("empty history")
    y = np.log10(np.maximum(np.abs(y), 1e-300))
    pad = 40
    lo, hi = float(y.min()), float(y.max())
    span = hi - lo or 1.0
    xs = pad + (width - 2 * pad) * (np.arange(y.size) / max(y.size - 1, 1))
    ys = pad + (height - 2 * pad) * (hi - y) / span
    pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(xs, ys))
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>',
        f'<polyline points="{pts}" fill="none" stroke="#3b528b" stroke-width="1.5"/>',
        f'<text x="{pad}" y="{pad - 8}" font-family="monospace" font-size="12">log10 {label}: '
        f'{hi:.3f} .. {lo:.3f} over {y.size} iterations</text>',
        "</svg>\n",
    ])


def render_svg(obj, path, **kwargs) -> Path:
    """Write a heatmap (ScalarChartField) or a history plot (sequence of residuals)."""
    path = Path(path)
    if isinstance(obj, ScalarChartField):
        text = heatmap_svg(obj, **kwargs)
    else:
        text = history_svg(obj, **kwargs)
    path.write_text(text)
    return path
