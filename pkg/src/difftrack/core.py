"""Shared value types and box geometry used across the tracking pipeline.

Boxes are continuous (x, y, w, h) rectangles in pixel coordinates, origin at the
top-left, no +1 pixel conventions anywhere. Frames and masks are plain numpy
arrays wrapped with just enough validation to catch unit mistakes early.
Attention containers accept either numpy arrays or torch tensors so the
differentiable path does not have to copy.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

EMBEDDING_DIM = 1024

__all__ = [
    "EMBEDDING_DIM",
    "BoundingBox",
    "FrameRGB",
    "BinaryMask",
    "AttentionMap",
    "SelfAttentionTensor",
    "EmbeddingVector",
    "Prompt",
    "TrackerState",
    "iou",
    "diou",
]


def _np_view(values: Any) -> np.ndarray:
    """Read-only numpy view of a numpy array or CPU torch tensor."""
    if isinstance(values, np.ndarray):
        return values
    # torch tensor; detach first so validation never touches the graph
    return values.detach().cpu().numpy()


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with strictly positive extent."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"box field {name} is not finite: {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive extent, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def clamp(self, frame_w: float, frame_h: float) -> "BoundingBox":
        """Clip to the frame; raises if nothing is left inside."""
        x1 = min(max(self.x, 0.0), frame_w)
        y1 = min(max(self.y, 0.0), frame_h)
        x2 = min(max(self.x2, 0.0), frame_w)
        y2 = min(max(self.y2, 0.0), frame_h)
        if x2 - x1 <= 0 or y2 - y1 <= 0:
            raise ValueError(f"box {self} lies outside a {frame_w}x{frame_h} frame")
        return BoundingBox(x1, y1, x2 - x1, y2 - y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # (x + w) - x rounds up for some floats, so cap identical boxes at 1.0
    return min(1.0, inter / (a.area + b.area - inter))


def diou(a: BoundingBox, b: BoundingBox) -> float:
    """Distance IoU: iou minus squared center distance over squared enclosing diagonal.

    Equals iou when the centers coincide, goes negative for far-apart boxes,
    and is bounded below by -1.
    """
    ax, ay = a.center
    bx, by = b.center
    d2 = (ax - bx) ** 2 + (ay - by) ** 2
    cw = max(a.x2, b.x2) - min(a.x, b.x)
    ch = max(a.y2, b.y2) - min(a.y, b.y)
    c2 = cw * cw + ch * ch
    return iou(a, b) - d2 / c2


@dataclass(frozen=True)
class FrameRGB:
    """One video frame, float pixels in [0, 1], shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if not np.issubdtype(px.dtype, np.floating):
            raise ValueError(f"pixels must be float, got {px.dtype}")
        lo, hi = float(px.min(initial=0.0)), float(px.max(initial=0.0))
        if lo < -1e-6 or hi > 1.0 + 1e-6:
            raise ValueError(f"pixel range [{lo}, {hi}] outside [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel {0, 1} mask, shape (H, W), stored as uint8."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {v.shape}")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("mask values must be exactly 0 or 1")
        v = v.astype(np.uint8, copy=False)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_box(cls, height: int, width: int, box: BoundingBox) -> "BinaryMask":
        """Rasterize a box: pixel (i, j) is set when its index falls in [round(edge) ...)."""
        m = np.zeros((height, width), dtype=np.uint8)
        x1 = max(0, int(round(box.x)))
        y1 = max(0, int(round(box.y)))
        x2 = min(width, int(round(box.x2)))
        y2 = min(height, int(round(box.y2)))
        m[y1:y2, x1:x2] = 1
        return cls(m)

    @property
    def area(self) -> int:
        return int(self.values.sum())

    def bbox(self) -> BoundingBox | None:
        """Tight box around the set pixels, or None for an empty mask."""
        ys, xs = np.nonzero(self.values)
        if ys.size == 0:
            return None
        x1, y1 = float(xs.min()), float(ys.min())
        return BoundingBox(x1, y1, float(xs.max()) + 1.0 - x1, float(ys.max()) + 1.0 - y1)


@dataclass(frozen=True)
class AttentionMap:
    """Single-channel spatial attention, nonnegative and finite.

    `values` may be a numpy array or a torch tensor; the differentiable path
    keeps tensors so gradients survive the wrapper.
    """

    values: Any

    def __post_init__(self):
        v = _np_view(self.values)
        if v.ndim != 2:
            raise ValueError(f"attention map must be 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("attention map contains non-finite values")
        if v.min() < -1e-7:
            raise ValueError(f"attention map has negative values (min {v.min()})")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(_np_view(self.values).shape)  # type: ignore[return-value]

    def numpy(self) -> np.ndarray:
        return np.asarray(_np_view(self.values), dtype=np.float64)


@dataclass(frozen=True)
class SelfAttentionTensor:
    """Pixel-to-pixel affinity, shape (h, w, h', w'); each (i, j) slice is a distribution."""

    values: Any

    def __post_init__(self):
        v = _np_view(self.values)
        if v.ndim != 4:
            raise ValueError(f"self-attention tensor must be 4-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("self-attention tensor contains non-finite values")
        if v.min() < -1e-7:
            raise ValueError("self-attention tensor has negative values")
        sums = v.reshape(v.shape[0] * v.shape[1], -1).sum(axis=1)
        err = np.abs(sums - 1.0).max()
        if err > 1e-5:
            raise ValueError(f"self-attention rows must sum to 1 (max deviation {err:.2e})")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(_np_view(self.values).shape)  # type: ignore[return-value]


def _short_hash(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).hexdigest()[:12]


@dataclass(frozen=True)
class EmbeddingVector:
    """A 1024-dim prompt embedding, tagged with its role ('shared' or 'specific')."""

    values: np.ndarray
    role: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (EMBEDDING_DIM,):
            raise ValueError(f"embedding must have shape ({EMBEDDING_DIM},), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("embedding contains non-finite values")
        if self.role not in ("shared", "specific"):
            raise ValueError(f"unknown embedding role {self.role!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def short_id(self) -> str:
        return _short_hash(self.values)


@dataclass(frozen=True)
class Prompt:
    """Conditioning tokens (K, D) handed to the attention backbone.

    provenance records (shared id, specific id, projector id) so a prompt can be
    traced back to the embeddings and projector weights that produced it.
    """

    tokens: Any
    provenance: tuple[str, str, str] = ("", "", "")

    def __post_init__(self):
        t = _np_view(self.tokens)
        if t.ndim != 2 or t.shape[0] < 1:
            raise ValueError(f"prompt tokens must be (K>=1, D), got shape {t.shape}")
        if not np.isfinite(t).all():
            raise ValueError("prompt tokens contain non-finite values")

    @property
    def token_count(self) -> int:
        return int(_np_view(self.tokens).shape[0])

    @property
    def dim(self) -> int:
        return int(_np_view(self.tokens).shape[1])

    def numpy(self) -> np.ndarray:
        return np.asarray(_np_view(self.tokens), dtype=np.float64)


@dataclass
class TrackerState:
    """Mutable per-sequence tracking state, owned by exactly one worker.

    history keeps up to `window` preceding (rgb view, frequency view) pairs,
    most recent last; frame_index is 1-based and counts frames already
    consumed.
    """

    prompt: Prompt
    frame_index: int
    template: Any
    window: int = 8
    history: deque = field(default_factory=deque)
    last_box: BoundingBox | None = None
    fallback_count: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("history window must be >= 1")
        self.history = deque(self.history, maxlen=self.window)

    def push_history(self, frame_rgb, frame_freq) -> None:
        self.history.append((frame_rgb, frame_freq))
