"""Bilinear image sampling shared by crops, pre-warps, and rendering."""

from __future__ import annotations

import numpy as np


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray, fill: float = 0.0):
    """Sample ``image`` at float coordinates; returns ``(values, valid)``.

    ``x`` and ``y`` may have any common shape.  Samples outside the image
    rectangle get ``fill`` and ``valid=False``.  The valid domain is the
    convex hull of pixel centers, [0, w-1] x [0, h-1].
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1) & np.isfinite(x) & np.isfinite(y)

    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.floor(xc).astype(int)
    y0 = np.floor(yc).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0

    v00 = image[y0, x0]
    v01 = image[y0, x1]
    v10 = image[y1, x0]
    v11 = image[y1, x1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    out = top * (1 - fy) + bot * fy
    out = np.where(valid, out, fill)
    return out, valid
