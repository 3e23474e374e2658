"""Success/precision curve figures and attention overlays.

Everything renders through the Agg backend with pinned style parameters, so
the same inputs produce byte-identical image files on every run.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402
from matplotlib import patches  # noqa: E402

from .core import AttentionMap, BoundingBox, FrameRGB  # noqa: E402
from .evaluation import norm_precision_curve, success_curve  # noqa: E402

__all__ = [
    "curve_figure",
    "success_figure",
    "precision_figure",
    "attention_overlay",
]

_COLORS = ("#3465a4", "#cc0000", "#4e9a06", "#f57900", "#75507b", "#555753")
_FIGSIZE = (5.0, 4.0)
_DPI = 100


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, facecolor="white")
    plt.close(fig)


def curve_figure(curves: dict, path, xlabel: str, ylabel: str, title: str):
    """One line per entry of {label: (x values, y values)}; y axis [0, 1]."""
    if not curves:
        raise ValueError("no curves to plot")
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for i, (label, (xs, ys)) in enumerate(curves.items()):
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        if xs.shape != ys.shape:
            raise ValueError(f"curve {label!r}: x and y lengths differ")
        area = float(np.mean(ys))
        ax.plot(xs, ys, color=_COLORS[i % len(_COLORS)], linewidth=1.8,
                label=f"{label} [{area:.3f}]")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, linewidth=0.4, alpha=0.5)
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def success_figure(named_results: dict, path):
    """Success plot: fraction of frames with IoU above each threshold."""
    curves = {label: success_curve(results)
              for label, results in named_results.items()}
    curve_figure(curves, path, xlabel="overlap threshold",
                 ylabel="success rate", title="Success")


def precision_figure(named_results: dict, path):
    """Normalized-precision plot over center-error thresholds."""
    curves = {label: norm_precision_curve(results)
              for label, results in named_results.items()}
    curve_figure(curves, path, xlabel="normalized center error",
                 ylabel="precision", title="Normalized precision")


def attention_overlay(frame: FrameRGB, amap: AttentionMap, path,
                      box: BoundingBox = None, alpha: float = 0.55):
    """The frame with the attention map stretched over it as a heat layer."""
    h, w = frame.pixels.shape[:2]
    fig, ax = plt.subplots(figsize=(w / _DPI, h / _DPI))
    ax.set_axis_off()
    fig.subplots_adjust(left=0, right=1, top=1, bottom=0)
    ax.imshow(frame.pixels, extent=(0, w, h, 0), interpolation="nearest")
    values = amap.numpy()
    peak = values.max()
    if peak > 0:
        values = values / peak
    ax.imshow(values, extent=(0, w, h, 0), cmap="magma", alpha=alpha,
              vmin=0.0, vmax=1.0, interpolation="bilinear")
    if box is not None:
        ax.add_patch(patches.Rectangle((box.x, box.y), box.w, box.h,
                                       fill=False, edgecolor="#00ff66",
                                       linewidth=1.5))
    ax.set_xlim(0, w)
    ax.set_ylim(h, 0)
    _save(fig, path)
