"""Box trajectories from optical flow, without any human labels.

Per frame: deviation-from-mean flow magnitude, relative binarization,
connected components filtered by size and shape, a center-biased score.
Across frames: dynamic programming picks the trajectory maximizing summed
scores plus an overlap-consistency reward, and a quality filter decides
whether (and how strongly) each frame supervises training.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BinaryMask, BoundingBox, diou

__all__ = [
    "FlowField",
    "CandidateBox",
    "QualityReport",
    "flow_distance_map",
    "binarize",
    "score_box",
    "boxes_from_mask",
    "select_sequence",
    "quality_filter",
    "label_video",
]

MIN_AREA = 50
MAX_ASPECT = 6.0
GAMMA = 4.1


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement in pixels, shape (H, W, 2) as (dx, dy)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise ValueError(f"flow must have shape (H, W, 2), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("flow contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]


@dataclass(frozen=True)
class CandidateBox:
    """A component box that survived the size and shape filters."""

    box: BoundingBox
    score: float

    def __post_init__(self):
        if self.box.area < MIN_AREA:
            raise ValueError(f"candidate area {self.box.area} below {MIN_AREA} px")
        long_side = max(self.box.w, self.box.h)
        short_side = min(self.box.w, self.box.h)
        if long_side > MAX_ASPECT * short_side + 1e-9:
            raise ValueError(
                f"candidate aspect {long_side / short_side:.2f} exceeds {MAX_ASPECT}"
            )
        if not np.isfinite(self.score):
            raise ValueError("candidate score must be finite")


@dataclass(frozen=True)
class QualityReport:
    """Per-frame qualities, the video-level score, and the training verdict."""

    qualities: tuple
    video_score: float
    keep: bool
    frame_weights: tuple

    def __post_init__(self):
        if not 0.0 <= self.video_score <= 1.0:
            raise ValueError(f"video score {self.video_score} outside [0, 1]")


def flow_distance_map(flow: FlowField) -> np.ndarray:
    """Per-pixel L2 deviation from the mean flow vector."""
    v = flow.values
    mu = v.mean(axis=(0, 1))
    return np.sqrt(((v - mu) ** 2).sum(axis=2))


def binarize(dmap: np.ndarray, alpha_thresh: float = 0.3,
             relative: bool = True) -> BinaryMask:
    """Threshold the deviation map; in relative mode against its maximum.

    An all-zero map stays all zero, so static videos produce no candidates
    instead of everything lighting up.
    """
    d = np.asarray(dmap, dtype=np.float64)
    if d.min() < 0:
        raise ValueError("deviation map must be nonnegative")
    if relative:
        if not 0.0 < alpha_thresh <= 1.0:
            raise ValueError(f"relative threshold must be in (0, 1], got {alpha_thresh}")
        peak = d.max()
        if peak == 0.0:
            return BinaryMask(np.zeros(d.shape, dtype=np.uint8))
        return BinaryMask((d >= alpha_thresh * peak).astype(np.uint8))
    if alpha_thresh < 0:
        raise ValueError(f"absolute threshold must be >= 0, got {alpha_thresh}")
    return BinaryMask((d >= alpha_thresh).astype(np.uint8))


def score_box(box: BoundingBox, frame_dims: tuple[int, int]) -> float:
    """Center bias: a Gaussian in the box-center distance from frame center."""
    h, w = frame_dims
    sigma = 0.25 * min(h, w)
    cx, cy = box.center
    d2 = (cx - w / 2.0) ** 2 + (cy - h / 2.0) ** 2
    return float(np.exp(-d2 / (2.0 * sigma * sigma)))


def boxes_from_mask(mask: BinaryMask, min_area: int = MIN_AREA,
                    max_aspect: float = MAX_ASPECT) -> list[CandidateBox]:
    """One scored candidate per 4-connected component passing the filters.

    min_area counts component pixels, not box pixels; the aspect rule is on
    the component's bounding box.
    """
    labels, count = ndimage.label(mask.values)
    if count == 0:
        return []
    dims = mask.values.shape
    sizes = ndimage.sum_labels(mask.values, labels, index=range(1, count + 1))
    out = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sizes[lab - 1] < min_area:
            continue
        ys, xs = sl
        w = xs.stop - xs.start
        h = ys.stop - ys.start
        if max(w, h) > max_aspect * min(w, h):
            continue
        box = BoundingBox(float(xs.start), float(ys.start), float(w), float(h))
        out.append(CandidateBox(box, score_box(box, dims)))
    return out


def select_sequence(per_frame_candidates, gamma: float = GAMMA) -> list[BoundingBox]:
    """Trajectory maximizing sum of scores plus gamma times summed overlap.

    Viterbi over frames that have candidates; candidate-free frames carry the
    previous selection forward (leading ones are backfilled).  Ties resolve
    to the earliest candidate index, frame by frame from the front: the
    value-to-go table is computed backward, then the path is read out
    forward, taking the first argmax at each frame.
    """
    frames = [list(c) for c in per_frame_candidates]
    if not frames:
        raise ValueError("no frames given")
    occupied = [t for t, c in enumerate(frames) if c]
    if not occupied:
        raise ValueError("every frame is empty; nothing to select")

    stages = [frames[t] for t in occupied]
    n = len(stages)
    future = [np.array([c.score for c in stages[-1]])]
    for t in range(n - 2, -1, -1):
        link = np.array([[gamma * diou(a.box, b.box) for b in stages[t + 1]]
                         for a in stages[t]])
        vals = np.array([c.score for c in stages[t]])
        vals = vals + (link + future[0][None, :]).max(axis=1)
        future.insert(0, vals)

    choice = [int(np.argmax(future[0]))]
    for t in range(1, n):
        prev = stages[t - 1][choice[-1]].box
        vals = np.array([gamma * diou(prev, c.box) for c in stages[t]]) + future[t]
        choice.append(int(np.argmax(vals)))

    picked = {occupied[t]: stages[t][choice[t]].box for t in range(n)}
    result: list[BoundingBox] = []
    last = picked[occupied[0]]  # leading empty frames borrow the first pick
    for t in range(len(frames)):
        last = picked.get(t, last)
        result.append(last)
    return result


def quality_filter(trajectory, scores, gamma: float = GAMMA,
                   video_thresh: float = 0.40, frame_low: float = 0.40,
                   frame_high: float = 0.45) -> QualityReport:
    """Per-frame normalized reward, the video mean, and training weights.

    Frame quality is (score + gamma * overlap-with-previous) / (1 + gamma),
    clipped to [0, 1]; the first frame has no predecessor and counts the
    overlap term as 1.  Frames below frame_low get weight 0, frames in
    [frame_low, frame_high) get 0.5, the rest 1.  A video whose mean quality
    falls below video_thresh is discarded entirely.
    """
    trajectory = list(trajectory)
    scores = [float(s) for s in scores]
    if len(trajectory) != len(scores):
        raise ValueError(f"{len(trajectory)} boxes but {len(scores)} scores")
    if not trajectory:
        raise ValueError("empty trajectory")
    qualities = []
    for t, (box, s) in enumerate(zip(trajectory, scores)):
        d = 1.0 if t == 0 else diou(trajectory[t - 1], box)
        q = (s + gamma * d) / (1.0 + gamma)
        qualities.append(float(np.clip(q, 0.0, 1.0)))
    video = float(np.mean(qualities))
    weights = tuple(
        0.0 if q < frame_low else (0.5 if q < frame_high else 1.0)
        for q in qualities
    )
    return QualityReport(tuple(qualities), video, video >= video_thresh, weights)


def label_video(flows, alpha_thresh: float = 0.3, gamma: float = GAMMA,
                min_area: int = MIN_AREA, max_aspect: float = MAX_ASPECT,
                video_thresh: float = 0.40, frame_low: float = 0.40,
                frame_high: float = 0.45):
    """Full pipeline for one video: flows in, (trajectory, quality report) out."""
    flows = list(flows)
    if not flows:
        raise ValueError("no flow fields given")
    dims = flows[0].shape
    candidates = []
    for flow in flows:
        if flow.shape != dims:
            raise ValueError(f"flow shape {flow.shape} differs from first {dims}")
        mask = binarize(flow_distance_map(flow), alpha_thresh)
        candidates.append(boxes_from_mask(mask, min_area, max_aspect))
    trajectory = select_sequence(candidates, gamma)
    scores = [score_box(b, dims) for b in trajectory]
    report = quality_filter(trajectory, scores, gamma, video_thresh,
                            frame_low, frame_high)
    return trajectory, report
