"""Canny edge detection on luminance images.

Non-maximum suppression quantizes the gradient direction into four bins and
breaks ties between equal neighbours asymmetrically (strictly greater than
the lower-index neighbour, at least the higher-index one), so a symmetric
step produces a single-pixel line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from nerfpc.assets_io import ImageBuffer
from nerfpc.errors import BadThresholds

_TAN_22_5 = np.tan(np.pi / 8)


@dataclass(frozen=True)
class EdgeMap:
    mask: np.ndarray  # (H, W) bool, True = edge

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def __call__(self, x: int, y: int) -> bool:
        return bool(self.mask[y, x])


def _luminance(image) -> np.ndarray:
    if isinstance(image, ImageBuffer):
        return image.gray()
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        return ImageBuffer(arr).gray()
    return arr


def gradient_magnitude(gray: np.ndarray, blur_sigma: float = 1.4):
    """Blurred-image Sobel gradients ``(gx, gy, magnitude)``; x along columns, y along rows."""
    smooth = ndimage.gaussian_filter(gray, blur_sigma, mode="mirror", truncate=3.0) if blur_sigma > 0 else gray
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    return gx, gy, np.hypot(gx, gy)


def non_maximum_suppression(gx: np.ndarray, gy: np.ndarray, mag: np.ndarray) -> np.ndarray:
    h, w = mag.shape
    pad = np.pad(mag, 1)
    c = (slice(1, h + 1), slice(1, w + 1))

    def shifted(dy: int, dx: int) -> np.ndarray:
        return pad[1 + dy : h + 1 + dy, 1 + dx : w + 1 + dx]

    ax, ay = np.abs(gx), np.abs(gy)
    horizontal = ay < ax * _TAN_22_5
    vertical = ay > ax / _TAN_22_5
    diagonal = ~(horizontal | vertical)
    same_sign = (gx * gy) >= 0
    m = pad[c]
    keep_h = (m > shifted(0, -1)) & (m >= shifted(0, 1))
    keep_v = (m > shifted(-1, 0)) & (m >= shifted(1, 0))
    keep_d_pos = (m > shifted(-1, -1)) & (m > shifted(1, 1))
    keep_d_neg = (m > shifted(-1, 1)) & (m > shifted(1, -1))
    keep_d = np.where(same_sign, keep_d_pos, keep_d_neg)
    return (horizontal & keep_h) | (vertical & keep_v) | (diagonal & keep_d)


def hysteresis(candidates: np.ndarray, strong: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(candidates, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        return np.zeros_like(candidates)
    seeded = np.zeros(count + 1, dtype=bool)
    seeded[np.unique(labels[strong & candidates])] = True
    seeded[0] = False
    return seeded[labels]


def detect_edges(image, blur_sigma: float = 1.4, low: float = 0.1, high: float = 0.2) -> EdgeMap:
    """Canny edges; ``low``/``high`` are fractions of the largest gradient magnitude."""
    if not (0 < low < high):
        raise BadThresholds(f"need 0 < low < high, got {low}, {high}")
    gray = _luminance(image)
    gx, gy, mag = gradient_magnitude(gray, blur_sigma)
    peak = float(mag.max()) if mag.size else 0.0
    if peak <= 1e-12:
        return EdgeMap(np.zeros(gray.shape, dtype=bool))
    # snap to a fine grid so mirror-symmetric neighbours tie exactly despite round-off
    snap = lambda a: np.round(a / peak * 1e9) / 1e9  # noqa: E731
    gx, gy, rel = snap(gx), snap(gy), snap(mag)
    candidates = non_maximum_suppression(gx, gy, rel) & (rel > low)
    return EdgeMap(hysteresis(candidates, rel > high))
