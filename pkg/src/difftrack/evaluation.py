"""Tracking metrics and the benchmark drivers that produce them.

Failure handling follows the VOT reset convention: a zero-overlap frame is a
failure, the tracker restarts from ground truth five frames later, and ten
frames after each restart are excluded from accuracy.  Failures and exclusion
windows are derived from the prediction trace alone, so every metric is a
pure function of (predictions, ground truth).
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np

from .core import BoundingBox, FrameRGB, iou

__all__ = [
    "REINIT_DELAY",
    "BURN_IN",
    "CONVENTIONS",
    "SequenceResult",
    "MetricReport",
    "success_auc",
    "success_curve",
    "precision",
    "norm_precision",
    "norm_precision_curve",
    "accuracy",
    "failure_frames",
    "robustness",
    "overlap_curves",
    "eao",
    "evaluate",
    "run_sequence",
    "run_benchmark",
    "EchoTracker",
    "StaticTracker",
]

REINIT_DELAY = 5
BURN_IN = 10

# threshold-inclusion conventions, stated once and stamped into report headers
CONVENTIONS = "success: iou > tau; precision: err <= 20px; norm-precision: nerr <= tau"


@dataclass(frozen=True)
class SequenceResult:
    """One tracked sequence: predictions, truth, per-frame wall time, resets."""

    pred: tuple
    gt: tuple
    times: tuple
    resets: tuple = ()

    def __post_init__(self):
        pred, gt, times = tuple(self.pred), tuple(self.gt), tuple(float(t) for t in self.times)
        if not (len(pred) == len(gt) == len(times)):
            raise ValueError(
                f"length mismatch: {len(pred)} pred, {len(gt)} gt, {len(times)} times"
            )
        if len(pred) == 0:
            raise ValueError("empty sequence result")
        if any(t <= 0 for t in times):
            raise ValueError("frame times must be positive")
        object.__setattr__(self, "pred", pred)
        object.__setattr__(self, "gt", gt)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "resets", tuple(self.resets))

    def overlaps(self) -> np.ndarray:
        return np.array([iou(p, g) for p, g in zip(self.pred, self.gt)])


@dataclass(frozen=True)
class MetricReport:
    """The seven summary numbers for one benchmark run."""

    suc: float
    pre: float
    npre: float
    acc: float
    rob: float
    eao: float
    fps: float

    def __post_init__(self):
        for name in ("suc", "pre", "npre", "acc", "eao"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.rob < 0:
            raise ValueError(f"rob={self.rob} must be >= 0")
        if self.fps <= 0:
            raise ValueError(f"fps={self.fps} must be positive")


def _pooled_overlaps(results) -> np.ndarray:
    return np.concatenate([r.overlaps() for r in results])


def success_auc(results) -> float:
    """Mean, over 21 overlap thresholds, of the strict-exceedance fraction."""
    ov = _pooled_overlaps(results)
    taus = np.linspace(0.0, 1.0, 21)
    return float(np.mean([(ov > t).mean() for t in taus]))


def success_curve(results):
    ov = _pooled_overlaps(results)
    taus = np.linspace(0.0, 1.0, 21)
    return taus, np.array([(ov > t).mean() for t in taus])


def _center_errors(results) -> np.ndarray:
    errs = []
    for r in results:
        for p, g in zip(r.pred, r.gt):
            (px, py), (gx, gy) = p.center, g.center
            errs.append(np.hypot(px - gx, py - gy))
    return np.array(errs)


def precision(results, radius: float = 20.0) -> float:
    """Fraction of frames whose center error stays within the radius."""
    return float((_center_errors(results) <= radius).mean())


def _norm_errors(results) -> np.ndarray:
    errs = []
    for r in results:
        for p, g in zip(r.pred, r.gt):
            (px, py), (gx, gy) = p.center, g.center
            errs.append(np.hypot((px - gx) / g.w, (py - gy) / g.h))
    return np.array(errs)


def norm_precision(results) -> float:
    """AUC of box-size-normalized center error over thresholds 0 to 0.5."""
    errs = _norm_errors(results)
    taus = np.arange(0.0, 0.5 + 1e-12, 0.005)
    return float(np.mean([(errs <= t).mean() for t in taus]))


def norm_precision_curve(results):
    errs = _norm_errors(results)
    taus = np.arange(0.0, 0.5 + 1e-12, 0.005)
    return taus, np.array([(errs <= t).mean() for t in taus])


def failure_frames(pred, gt, delay: int = REINIT_DELAY) -> tuple:
    """Failure frame indices under the reset protocol, scanned left to right.

    After a failure the next `delay` frames belong to the restart gap, so
    scanning resumes at the re-initialization frame.
    """
    fails = []
    i, n = 0, len(pred)
    while i < n:
        if iou(pred[i], gt[i]) == 0.0:
            fails.append(i)
            i += delay
        else:
            i += 1
    return tuple(fails)


def robustness(results, delay: int = REINIT_DELAY) -> float:
    """Mean failure count per sequence."""
    return float(np.mean([len(failure_frames(r.pred, r.gt, delay)) for r in results]))


def accuracy(results, delay: int = REINIT_DELAY, burn_in: int = BURN_IN) -> float:
    """Mean overlap over frames outside failure gaps and post-reset burn-in."""
    vals = []
    for r in results:
        n = len(r.pred)
        excluded = set()
        for f in failure_frames(r.pred, r.gt, delay):
            excluded.update(range(f, min(f + delay + burn_in, n)))
        ov = r.overlaps()
        vals.extend(ov[i] for i in range(n) if i not in excluded)
    if not vals:
        return 0.0
    return float(np.mean(vals))


def overlap_curves(results, delay: int = REINIT_DELAY):
    """Split each sequence at failures into post-(re)init overlap runs.

    Returns (overlaps, failed) pairs; a failed run is conceptually followed
    by zeros forever, a naturally-ended run just stops.
    """
    curves = []
    for r in results:
        ov = r.overlaps()
        n = len(ov)
        start = 0
        for f in failure_frames(r.pred, r.gt, delay):
            curves.append((tuple(ov[start:f]), True))
            start = f + delay
        if start < n:
            curves.append((tuple(ov[start:]), False))
    return curves


def _curve_value(overlaps, failed, n):
    if failed:
        return float(np.sum(overlaps[:n]) / n)
    if not overlaps:
        return None
    return float(np.mean(overlaps[:n]))


def eao(curves, interval: tuple[int, int] = (100, 356)) -> float:
    """Expected average overlap across the sequence-length interval.

    For each length N, failed runs are zero-padded out to N and naturally
    ended runs contribute the mean of the frames they have.
    """
    lo, hi = int(interval[0]), int(interval[1])
    if not 1 <= lo <= hi:
        raise ValueError(f"bad interval {interval}")
    curves = [(tuple(o), bool(f)) for o, f in curves]
    if not curves:
        raise ValueError("no overlap curves")
    per_length = []
    for n in range(lo, hi + 1):
        vals = [v for o, f in curves if (v := _curve_value(o, f, n)) is not None]
        if vals:
            per_length.append(float(np.mean(vals)))
    if not per_length:
        raise ValueError("no curve covers the requested interval")
    return float(np.mean(per_length))


def evaluate(results, eao_interval: tuple[int, int] = (100, 356),
             radius: float = 20.0) -> MetricReport:
    """Aggregate a list of SequenceResults into one report."""
    results = list(results)
    if not results:
        raise ValueError("no sequence results")
    total_time = sum(sum(r.times) for r in results)
    total_frames = sum(len(r.pred) for r in results)
    return MetricReport(
        suc=success_auc(results),
        pre=precision(results, radius=radius),
        npre=norm_precision(results),
        acc=accuracy(results),
        rob=robustness(results),
        eao=eao(overlap_curves(results), eao_interval),
        fps=total_frames / max(total_time, 1e-12),
    )


# --- protocol drivers -------------------------------------------------------


class EchoTracker:
    """Returns ground truth; the protocol-sanity upper bound."""

    def __init__(self, gt_boxes):
        self.gt = list(gt_boxes)

    def reset(self, frame: FrameRGB, box: BoundingBox, frame_index: int):
        pass

    def update(self, frame: FrameRGB, frame_index: int) -> BoundingBox:
        return self.gt[frame_index]


class StaticTracker:
    """Returns the initialization box forever; the no-motion baseline."""

    def __init__(self):
        self.box = None

    def reset(self, frame: FrameRGB, box: BoundingBox, frame_index: int):
        self.box = box

    def update(self, frame: FrameRGB, frame_index: int) -> BoundingBox:
        return self.box


def _tick(t0: float) -> float:
    return max(time.perf_counter() - t0, 1e-9)


def run_sequence(tracker, frames, gt_boxes, protocol: str = "otb",
                 delay: int = REINIT_DELAY) -> SequenceResult:
    """Drive one tracker over one sequence under the chosen protocol.

    Frame 0 is the initialization frame and scores its ground-truth box.
    Under "vot", a zero-overlap prediction triggers the reset cycle: the gap
    frames repeat the failed box (they are excluded from accuracy anyway)
    and the tracker restarts from ground truth.
    """
    frames, gt_boxes = list(frames), list(gt_boxes)
    if protocol not in ("otb", "vot"):
        raise ValueError(f"unknown protocol {protocol!r}")
    n = len(frames)
    if n == 0 or n != len(gt_boxes):
        raise ValueError(f"{n} frames but {len(gt_boxes)} ground-truth boxes")
    t0 = time.perf_counter()
    tracker.reset(frames[0], gt_boxes[0], 0)
    pred = [gt_boxes[0]]
    times = [_tick(t0)]
    resets = []
    i = 1
    while i < n:
        t0 = time.perf_counter()
        box = tracker.update(frames[i], i)
        pred.append(box)
        times.append(_tick(t0))
        if protocol == "vot" and iou(box, gt_boxes[i]) == 0.0:
            for j in range(i + 1, min(i + delay, n)):
                pred.append(box)
                times.append(1e-9)
            r = i + delay
            if r < n:
                t0 = time.perf_counter()
                tracker.reset(frames[r], gt_boxes[r], r)
                pred.append(gt_boxes[r])
                times.append(_tick(t0))
                resets.append(r)
            i = r + 1
        else:
            i += 1
    return SequenceResult(tuple(pred), tuple(gt_boxes), tuple(times), tuple(resets))


def run_benchmark(tracker_factory, sequences, protocol: str = "otb",
                  eao_interval: tuple[int, int] = (100, 356)) -> MetricReport:
    """Evaluate a tracker over many sequences and aggregate.

    tracker_factory(frames, gt_boxes) builds a fresh tracker per sequence;
    factories for real trackers simply ignore the ground truth.  A sequence
    that fails to run is skipped with a warning; all failing is an error.
    """
    results = []
    for idx, (frames, gt_boxes) in enumerate(sequences):
        try:
            results.append(run_sequence(tracker_factory(frames, gt_boxes),
                                        frames, gt_boxes, protocol))
        except (ValueError, OSError) as exc:
            warnings.warn(f"sequence {idx} skipped: {exc}")
    if not results:
        raise ValueError("every sequence failed to evaluate")
    return evaluate(results, eao_interval)
