"""Side-by-side match overlays."""
from __future__ import annotations

import colorsys

import cv2
import numpy as np

from gazepick.features import FeatureSet

_GAP = 8


def _bgr(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        return cv2.cvtColor(img, cv2.COLOR_GRAY2BGR)
    return img.copy()


def _color(i: int) -> tuple[int, int, int]:
    # golden-ratio hue walk, fixed saturation/value
    r, g, b = colorsys.hsv_to_rgb((i * 0.618033988749895) % 1.0, 0.85, 1.0)
    return int(b * 255), int(g * 255), int(r * 255)


def render_matches(a, b, fa: FeatureSet, fb: FeatureSet, matches) -> np.ndarray:
    """``a`` on the left, ``b`` on the right, one line per match."""
    a, b = _bgr(a), _bgr(b)
    h = max(a.shape[0], b.shape[0])
    w = a.shape[1] + _GAP + b.shape[1]
    canvas = np.zeros((h + 28, w, 3), np.uint8)
    canvas[: a.shape[0], : a.shape[1]] = a
    off = a.shape[1] + _GAP
    canvas[: b.shape[0], off : off + b.shape[1]] = b
    for i, m in enumerate(matches):
        if not (0 <= m.query_idx < len(fa) and 0 <= m.train_idx < len(fb)):
            raise IndexError(f"match {i} references a missing keypoint")
        xa, ya = fa.xy[m.query_idx]
        xb, yb = fb.xy[m.train_idx]
        p1 = (int(round(xa)), int(round(ya)))
        p2 = (int(round(xb)) + off, int(round(yb)))
        c = _color(i)
        cv2.circle(canvas, p1, 3, c, 1, cv2.LINE_AA)
        cv2.circle(canvas, p2, 3, c, 1, cv2.LINE_AA)
        cv2.line(canvas, p1, p2, c, 1, cv2.LINE_AA)
    cv2.putText(canvas, f"matches: {len(matches)}", (6, h + 20), cv2.FONT_HERSHEY_SIMPLEX, 0.6, (255, 255, 255), 1, cv2.LINE_AA)
    return canvas
