"""Attention map to bounding box: threshold, largest blob, scale to frame."""

from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .core import AttentionMap, BoundingBox

__all__ = ["Localization", "map_to_box", "threshold_sweep"]


class Localization(NamedTuple):
    box: BoundingBox
    fallback: bool  # set when nothing cleared the threshold


def map_to_box(m: AttentionMap, frame_w: float, frame_h: float,
               tau: float = 0.5) -> Localization:
    """Tight box around the largest 4-connected region with value >= tau.

    Map cells scale to frame coordinates by their edges, so a full-width blob
    yields a full-width box. An empty threshold set falls back to a one-cell
    box at the argmax, flagged in the result.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    v = m.numpy()
    h, w = v.shape
    sx, sy = frame_w / w, frame_h / h
    hot = v >= tau
    if not hot.any():
        iy, ix = np.unravel_index(np.argmax(v), v.shape)
        return Localization(BoundingBox(ix * sx, iy * sy, sx, sy), True)
    labels, count = ndimage.label(hot)  # default structure is 4-connectivity
    sizes = ndimage.sum_labels(hot, labels, index=np.arange(1, count + 1))
    best = int(np.argmax(sizes)) + 1
    ys, xs = np.nonzero(labels == best)
    x1, x2 = xs.min(), xs.max() + 1  # right/bottom edges of the last cell
    y1, y2 = ys.min(), ys.max() + 1
    return Localization(
        BoundingBox(x1 * sx, y1 * sy, (x2 - x1) * sx, (y2 - y1) * sy), False
    )


def threshold_sweep(m: AttentionMap, frame_w: float, frame_h: float, taus) -> dict:
    """Boxes for a range of thresholds, for picking tau on held-out data."""
    return {float(t): map_to_box(m, frame_w, frame_h, t) for t in taus}
