"""Target-conditioned motion features in RGB and frequency domains.

Four encoders (rgb/freq x short/long) turn frame windows into feature vectors;
a frozen template embedding queries each encoder's spatial grid through
parameter-free scaled dot-product attention; two fusion heads collapse the
four conditioned features into one motion vector.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import BoundingBox, FrameRGB
from .frequency import freq_summary_map, rgb_to_frequency

__all__ = [
    "MOTION_DIM",
    "VIEW_SIZE",
    "MotionFeature",
    "MotionEncoder",
    "TemplateExtractor",
    "MotionFusionHead",
    "MotionModule",
    "FrameViews",
    "make_views",
    "rgb_view",
    "freq_view",
    "extract_short",
    "extract_long",
    "condition",
    "fuse_long_short",
    "fuse_rgb_freq",
]

MOTION_DIM = 256
VIEW_SIZE = 64

# the three summary bands live on very different scales; spread them so the
# encoder sees texture structure, not just luma
_FREQ_BAND_GAIN = (1.0, 8.0, 24.0)


def rgb_view(frame: FrameRGB, size: int = VIEW_SIZE) -> torch.Tensor:
    """Area-averaged resize to the encoder input resolution, channels first.

    Area pooling is the exact low-pass for block-commensurate patterns, which
    keeps the coarse-appearance channel honest about what survives downscaling.
    """
    t = torch.as_tensor(np.array(frame.pixels), dtype=torch.get_default_dtype())
    t = t.permute(2, 0, 1)[None]
    t = F.interpolate(t, size=(size, size), mode="area")
    return t[0]


def freq_view(frame: FrameRGB, size: int = VIEW_SIZE) -> torch.Tensor:
    """Per-block band-energy summary, band-balanced and resized."""
    summary = freq_summary_map(rgb_to_frequency(frame))
    t = torch.as_tensor(summary, dtype=torch.get_default_dtype()).permute(2, 0, 1)
    t = t * torch.as_tensor(_FREQ_BAND_GAIN, dtype=t.dtype)[:, None, None]
    t = F.interpolate(t[None], size=(size, size), mode="bilinear",
                      align_corners=False)[0]
    return t


_VIEWS = {"rgb": rgb_view, "freq": freq_view}


class FrameViews(NamedTuple):
    """Both domain views of one frame, computed once and reused.

    The frequency transform is the expensive part of the view pipeline, so
    anything that feeds the same frame to several encoders (the tracker's
    history window, updater training clips) should precompute these.
    """

    rgb: torch.Tensor
    freq: torch.Tensor


def make_views(frame: FrameRGB, size: int = VIEW_SIZE) -> FrameViews:
    return FrameViews(rgb_view(frame, size), freq_view(frame, size))


@dataclass(frozen=True)
class MotionFeature:
    """One motion descriptor: a vector plus the tags that restrict fusion."""

    vector: torch.Tensor
    domain: str
    term: str
    grid: Optional[torch.Tensor] = None  # (positions, dim), pre-pooling

    def __post_init__(self):
        if self.vector.ndim != 1:
            raise ValueError(f"motion feature must be a vector, got shape {tuple(self.vector.shape)}")
        if not torch.isfinite(self.vector.detach()).all():
            raise ValueError("motion feature contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


def _seeded_init(module: nn.Module, g: torch.Generator):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.copy_(torch.empty(m.weight.shape).uniform_(-bound, bound, generator=g))
                if m.bias is not None:
                    m.bias.zero_()


class MotionEncoder(nn.Module):
    """Per-frame conv stem followed by two 3-D convolutions over the stack."""

    def __init__(self, domain: str, term: str, dim: int = MOTION_DIM, seed: int = 0):
        super().__init__()
        if domain not in _VIEWS:
            raise ValueError(f"unknown domain {domain!r}")
        if term not in ("short", "long"):
            raise ValueError(f"unknown term {term!r}")
        self.domain = domain
        self.term = term
        self.dim = dim
        self.stem = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(),
        )
        self.temporal = nn.Sequential(
            nn.Conv3d(64, 128, (2, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)), nn.ReLU(),
            nn.Conv3d(128, dim, (1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)), nn.ReLU(),
        )
        _seeded_init(self, torch.Generator().manual_seed(seed))

    def view(self, frame) -> torch.Tensor:
        if isinstance(frame, tuple):  # (rgb view, freq view) pair, FrameViews or plain
            frame = frame[0] if self.domain == "rgb" else frame[1]
        if isinstance(frame, torch.Tensor):
            if frame.shape != (3, VIEW_SIZE, VIEW_SIZE):
                raise ValueError(
                    f"domain view must be (3, {VIEW_SIZE}, {VIEW_SIZE}), got {tuple(frame.shape)}"
                )
            return frame
        return _VIEWS[self.domain](frame)

    def forward(self, frames) -> MotionFeature:
        frames = list(frames)
        if not frames:
            raise ValueError("empty frame window")
        if len(frames) == 1:
            frames = frames * 2  # temporal kernel needs two slices
        views = torch.stack([self.view(f) for f in frames])      # (T, 3, s, s)
        per_frame = self.stem(views)                             # (T, 64, s/4, s/4)
        stack = per_frame.permute(1, 0, 2, 3)[None]              # (1, 64, T, ., .)
        grid3d = self.temporal(stack)[0]                         # (dim, T-1, g, g)
        grid = grid3d.mean(dim=1)                                # (dim, g, g)
        flat = grid.reshape(self.dim, -1).T                      # (positions, dim)
        return MotionFeature(flat.mean(dim=0), self.domain, self.term, grid=flat)


class TemplateExtractor(nn.Module):
    """Frozen random projection of the first-frame target crop.

    Stands in for a pretrained image feature extractor: fixed at construction,
    deterministic, never trained.
    """

    def __init__(self, dim: int = MOTION_DIM, crop_size: int = 32, seed: int = 0):
        super().__init__()
        self.crop_size = crop_size
        g = torch.Generator().manual_seed(seed)
        w = torch.randn(dim, 3 * crop_size * crop_size, generator=g)
        self.register_buffer("proj", w / math.sqrt(w.shape[1]))

    def forward(self, frame: FrameRGB, box: BoundingBox) -> torch.Tensor:
        h, w = frame.pixels.shape[:2]
        b = box.clamp(w, h)
        x1, y1 = int(b.x), int(b.y)
        x2, y2 = max(x1 + 1, int(math.ceil(b.x2))), max(y1 + 1, int(math.ceil(b.y2)))
        crop = np.array(frame.pixels[y1:y2, x1:x2])
        t = torch.as_tensor(crop, dtype=self.proj.dtype).permute(2, 0, 1)[None]
        t = F.interpolate(t, size=(self.crop_size, self.crop_size), mode="bilinear",
                          align_corners=False, antialias=True)
        v = self.proj @ t.reshape(-1)
        return v / (v.norm() + 1e-12)


def extract_short(f_k, f_km1, enc: MotionEncoder) -> MotionFeature:
    """Motion feature of one consecutive frame pair."""
    if enc.term != "short":
        raise ValueError(f"encoder term is {enc.term!r}, expected 'short'")
    return enc([f_km1, f_k])


def extract_long(window, enc: MotionEncoder) -> MotionFeature:
    """Motion feature of the trailing window, oldest frame first."""
    if enc.term != "long":
        raise ValueError(f"encoder term is {enc.term!r}, expected 'long'")
    window = list(window)
    if not window:
        raise ValueError("empty frame window")
    return enc(window)


def condition(template: torch.Tensor, motion: MotionFeature) -> MotionFeature:
    """Attend the template query over the encoder's spatial grid.

    Parameter-free single-head scaled dot-product attention; keys and values
    are both the grid (or the bare vector when no grid was kept).
    """
    kv = motion.grid if motion.grid is not None else motion.vector[None, :]
    d = kv.shape[1]
    if template.shape != (d,):
        raise ValueError(f"template must be ({d},), got {tuple(template.shape)}")
    logits = kv @ template.to(kv.dtype) / math.sqrt(d)
    attn = torch.softmax(logits, dim=0)
    out = attn @ kv
    return MotionFeature(out, motion.domain, motion.term)


class MotionFusionHead(nn.Module):
    """Two fully connected layers with a ReLU, merging two motion features."""

    def __init__(self, dim: int = MOTION_DIM, seed: int = 0):
        super().__init__()
        self.dim = dim
        self.fc1 = nn.Linear(2 * dim, 2 * dim)
        self.fc2 = nn.Linear(2 * dim, dim)
        _seeded_init(self, torch.Generator().manual_seed(seed))

    @classmethod
    def left_identity(cls, dim: int = MOTION_DIM) -> "MotionFusionHead":
        """Configured to return the first input exactly, for tests."""
        head = cls(dim=dim)
        with torch.no_grad():
            eye = torch.eye(dim)
            w1 = torch.zeros(2 * dim, 2 * dim)
            w1[:dim, :dim] = eye
            w1[dim:, :dim] = -eye
            head.fc1.weight.copy_(w1)
            head.fc1.bias.zero_()
            head.fc2.weight.copy_(torch.cat([eye, -eye], dim=1))
            head.fc2.bias.zero_()
        return head

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(torch.cat([a, b]))))


def fuse_long_short(long: MotionFeature, short: MotionFeature,
                    head: MotionFusionHead) -> MotionFeature:
    if long.term != "long" or short.term != "short":
        raise ValueError(f"expected (long, short) terms, got ({long.term!r}, {short.term!r})")
    if long.domain != short.domain:
        raise ValueError(f"domain mismatch: {long.domain!r} vs {short.domain!r}")
    return MotionFeature(head(long.vector, short.vector), long.domain, "fused")


def fuse_rgb_freq(rgb: MotionFeature, freq: MotionFeature,
                  head: MotionFusionHead) -> MotionFeature:
    if rgb.domain != "rgb" or freq.domain != "freq":
        raise ValueError(f"expected (rgb, freq) domains, got ({rgb.domain!r}, {freq.domain!r})")
    if rgb.term != freq.term:
        raise ValueError(f"term mismatch: {rgb.term!r} vs {freq.term!r}")
    return MotionFeature(head(rgb.vector, freq.vector), "fused", rgb.term)


@dataclass
class MotionModule:
    """The four encoders plus fusion heads, wired end to end."""

    short_rgb: MotionEncoder = field(default_factory=lambda: MotionEncoder("rgb", "short", seed=1))
    long_rgb: MotionEncoder = field(default_factory=lambda: MotionEncoder("rgb", "long", seed=2))
    short_freq: MotionEncoder = field(default_factory=lambda: MotionEncoder("freq", "short", seed=3))
    long_freq: MotionEncoder = field(default_factory=lambda: MotionEncoder("freq", "long", seed=4))
    ls_rgb: MotionFusionHead = field(default_factory=lambda: MotionFusionHead(seed=5))
    ls_freq: MotionFusionHead = field(default_factory=lambda: MotionFusionHead(seed=6))
    rf: MotionFusionHead = field(default_factory=lambda: MotionFusionHead(seed=7))
    template_extractor: TemplateExtractor = field(default_factory=TemplateExtractor)

    def trainable_modules(self):
        return (self.short_rgb, self.long_rgb, self.short_freq, self.long_freq,
                self.ls_rgb, self.ls_freq, self.rf)

    def parameters(self):
        for mod in self.trainable_modules():
            yield from mod.parameters()

    def motion_feature(self, window, template: torch.Tensor,
                       use_freq: bool = True) -> MotionFeature:
        """m_k for the given trailing window (oldest first, length >= 2).

        use_freq=False drops the frequency branch and returns the rgb
        long/short fusion alone (the ablation path).
        """
        window = list(window)
        if len(window) < 2:
            raise ValueError("motion needs at least the current and previous frame")
        pair = window[-2:]
        domains = (("rgb", self.short_rgb, self.long_rgb, self.ls_rgb),)
        if use_freq:
            domains += (("freq", self.short_freq, self.long_freq, self.ls_freq),)
        feats = {}
        for dom, enc_s, enc_l, head in domains:
            short = condition(template, extract_short(pair[1], pair[0], enc_s))
            long = condition(template, extract_long(window, enc_l))
            feats[dom] = fuse_long_short(long, short, head)
        if not use_freq:
            return feats["rgb"]
        return fuse_rgb_freq(feats["rgb"], feats["freq"], self.rf)
