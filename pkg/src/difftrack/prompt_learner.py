"""Prompt embeddings: offline shared training, first-frame adaptation, the loss.

Two 1024-dim embeddings feed the backbone. The shared one is learned offline
over many targets; the specific one is fit on the first frame of each sequence
(absent during offline training, encoded as a zero vector). Their concatenation
passes through a small projector to become conditioning tokens.
"""

import copy
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import (
    EMBEDDING_DIM,
    AttentionMap,
    BinaryMask,
    BoundingBox,
    EmbeddingVector,
    FrameRGB,
    Prompt,
)
from .fuse import FusionHead, fuse_maps
from .harmonize import HarmonizeParams, enhance_cross_attention, harmonize

__all__ = [
    "EmbeddingProjector",
    "TrainConfig",
    "SharedArtifacts",
    "build_prompt",
    "attention_forward",
    "attention_loss",
    "minmax_normalize",
    "train_shared",
    "adapt_specific",
]

_NULL_SPECIFIC = None  # built lazily; module-level so the id is stable


def null_specific() -> EmbeddingVector:
    """The zero vector standing in for a missing specific embedding."""
    global _NULL_SPECIFIC
    if _NULL_SPECIFIC is None:
        _NULL_SPECIFIC = EmbeddingVector(np.zeros(EMBEDDING_DIM), "specific")
    return _NULL_SPECIFIC


class EmbeddingProjector(nn.Module):
    """Two-layer perceptron from concat(shared, specific) to conditioning tokens."""

    def __init__(self, num_tokens: int = 2, token_dim: int = 64,
                 hidden_dim: int = 256, seed: int = 0):
        super().__init__()
        if num_tokens < 1 or token_dim < 1 or hidden_dim < 1:
            raise ValueError("projector dimensions must be positive")
        self.num_tokens = num_tokens
        self.token_dim = token_dim
        self.fc1 = nn.Linear(2 * EMBEDDING_DIM, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, num_tokens * token_dim)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for lin in (self.fc1, self.fc2):
                bound = 1.0 / np.sqrt(lin.in_features)
                lin.weight.copy_(torch.empty(lin.weight.shape).uniform_(-bound, bound, generator=g))
                lin.bias.zero_()

    @classmethod
    def identity(cls) -> "EmbeddingProjector":
        """Exact pass-through: tokens are the concatenated embeddings, reshaped.

        Only possible when num_tokens * token_dim == 2048, so this fixes two
        tokens of 1024 dims. relu(x) - relu(-x) recovers x of either sign.
        """
        d = 2 * EMBEDDING_DIM
        proj = cls(num_tokens=2, token_dim=EMBEDDING_DIM, hidden_dim=2 * d, seed=0)
        with torch.no_grad():
            eye = torch.eye(d)
            proj.fc1.weight.copy_(torch.cat([eye, -eye], dim=0))
            proj.fc1.bias.zero_()
            proj.fc2.weight.copy_(torch.cat([eye, -eye], dim=1))
            proj.fc2.bias.zero_()
        return proj

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != 2 * EMBEDDING_DIM:
            raise ValueError(
                f"projector expects {2 * EMBEDDING_DIM}-dim input, got {x.shape[-1]}"
            )
        y = self.fc2(torch.relu(self.fc1(x)))
        return y.reshape(*x.shape[:-1], self.num_tokens, self.token_dim)

    def version(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.parameters():
            h.update(p.detach().cpu().numpy().astype(np.float64).tobytes())
        return h.hexdigest()[:12]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for both embedding phases (optimizer is Adam)."""

    shared_lr: float = 5e-4
    shared_epochs: int = 20
    specific_lr: float = 5e-3
    specific_epochs: int = 3
    specific_iters: int = 25  # noise draws per specific-phase epoch
    lambda_dm: float = 1.0
    batch_size: int = 8
    num_tokens: int = 2
    projector_hidden: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.shared_lr < 0 or self.specific_lr < 0:
            raise ValueError("learning rates must be nonnegative")
        for name in ("shared_epochs", "specific_epochs", "specific_iters",
                     "batch_size", "num_tokens", "projector_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lambda_dm < 0:
            raise ValueError("lambda_dm must be nonnegative")


class SharedArtifacts(NamedTuple):
    """Everything the offline phase produces, ready to freeze."""

    e_sh: EmbeddingVector
    projector: EmbeddingProjector
    head: FusionHead
    harmonize: HarmonizeParams
    epoch_losses: tuple


def build_prompt(e_sh: EmbeddingVector,
                 e_sp: Optional[EmbeddingVector],
                 proj: EmbeddingProjector) -> Prompt:
    """Compose conditioning tokens from the two embeddings.

    A missing specific embedding is the zero vector, so the shared-phase and
    inference-phase paths run through one projector.
    """
    if e_sh.role != "shared":
        raise ValueError(f"first embedding must have role 'shared', got {e_sh.role!r}")
    if e_sp is None:
        e_sp = null_specific()
    if e_sp.role != "specific":
        raise ValueError(f"second embedding must have role 'specific', got {e_sp.role!r}")
    dtype = proj.fc1.weight.dtype
    x = torch.as_tensor(np.concatenate([e_sh.values, e_sp.values]), dtype=dtype)
    with torch.no_grad():
        tokens = proj(x).numpy()
    return Prompt(tokens, provenance=(e_sh.short_id(), e_sp.short_id(), proj.version()))


def minmax_normalize(m: AttentionMap) -> AttentionMap:
    """Rescale to [0, 1]; a constant map collapses to zeros."""
    v = m.values
    if isinstance(v, torch.Tensor):
        lo, hi = v.min(), v.max()
        span = hi - lo
        if float(span.detach()) < 1e-12:
            return AttentionMap(torch.zeros_like(v))
        return AttentionMap((v - lo) / span)
    lo, hi = v.min(), v.max()
    if hi - lo < 1e-12:
        return AttentionMap(np.zeros_like(v))
    return AttentionMap((v - lo) / (hi - lo))


def _forward_from_latent(latent, prompt, backbone, harmonize_params, head, timestep):
    bundle = backbone.attend(latent, prompt, timestep)
    blended = [
        harmonize(mc, enhance_cross_attention(mc, ms), harmonize_params)
        for mc, ms in zip(bundle.cross, bundle.self_)
    ]
    return minmax_normalize(fuse_maps(blended, head))


def attention_forward(frame: FrameRGB, prompt: Prompt, backbone,
                      harmonize_params: HarmonizeParams, head: FusionHead,
                      timestep: Optional[int] = None) -> AttentionMap:
    """Full map pipeline: attend, harmonize per layer, fuse, min-max normalize."""
    if timestep is None:
        timestep = backbone.default_timestep
    latent = backbone.encode_image(frame)
    return _forward_from_latent(latent, prompt, backbone, harmonize_params, head, timestep)


def _downsample_mask(mask: BinaryMask, shape, dtype) -> torch.Tensor:
    m = torch.as_tensor(np.array(mask.values), dtype=dtype)
    if tuple(m.shape) != tuple(shape):
        m = F.adaptive_avg_pool2d(m[None, None], tuple(shape))[0, 0]
        m = (m >= 0.5).to(dtype)  # area average, re-binarized
    return m


def attention_loss(map_: AttentionMap, mask: BinaryMask,
                   l_dm=0.0, lambda_dm: float = 1.0):
    """Mean squared error against the (downsampled) mask plus the denoising term.

    Returns a float for numpy-backed maps and a scalar tensor for torch-backed
    ones, so the same function serves evaluation and training.
    """
    v = map_.values
    is_torch = isinstance(v, torch.Tensor)
    t = v if is_torch else torch.as_tensor(v)
    target = _downsample_mask(mask, t.shape, t.dtype)
    total = torch.mean((target - t) ** 2)
    if lambda_dm:
        dm = l_dm if isinstance(l_dm, torch.Tensor) else torch.as_tensor(float(l_dm), dtype=t.dtype)
        total = total + lambda_dm * dm
    if is_torch:
        return total
    return float(total)


def _freeze(modules):
    saved = []
    for mod in modules:
        for p in mod.parameters():
            saved.append((p, p.requires_grad))
            p.requires_grad_(False)
    return saved


def _restore(saved):
    for p, flag in saved:
        p.requires_grad_(flag)


def train_shared(dataset, backbone, cfg: TrainConfig = TrainConfig(),
                 init: SharedArtifacts | None = None) -> SharedArtifacts:
    """Offline phase: fit the shared embedding, projector, fusion head and blend.

    dataset is an iterable of (FrameRGB, BinaryMask) pairs. The backbone is
    never touched; the specific embedding stays at zero throughout.  Passing
    ``init`` resumes from earlier artifacts: optimization continues from their
    weights and the returned loss history extends theirs.
    """
    samples = list(dataset)
    if not samples:
        raise ValueError("training dataset is empty")
    dtype = torch.get_default_dtype()
    g = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    latents = [backbone.encode_image(f) for f, _ in samples]
    masks = [m for _, m in samples]

    e_sh_raw = nn.Parameter(0.02 * torch.randn(EMBEDDING_DIM, generator=g, dtype=dtype))
    e_sp_zero = torch.zeros(EMBEDDING_DIM, dtype=dtype)
    proj = EmbeddingProjector(num_tokens=cfg.num_tokens,
                              token_dim=backbone.conditioning_dim,
                              hidden_dim=cfg.projector_hidden, seed=cfg.seed)
    head = FusionHead(num_layers=backbone.num_layers, seed=cfg.seed)
    hp = HarmonizeParams()
    epoch_losses = []
    if init is not None:
        if init.projector.token_dim != backbone.conditioning_dim:
            raise ValueError("resume artifacts project to a different token size")
        if init.head.num_layers != backbone.num_layers:
            raise ValueError("resume artifacts fuse a different layer count")
        proj, head, hp = (copy.deepcopy(m) for m in (init.projector, init.head, init.harmonize))
        with torch.no_grad():
            e_sh_raw.copy_(torch.as_tensor(np.array(init.e_sh.values), dtype=dtype))
        epoch_losses = list(init.epoch_losses)

    params = [e_sh_raw, *proj.parameters(), *head.parameters(), *hp.parameters()]
    opt = torch.optim.Adam(params, lr=cfg.shared_lr)
    for _ in range(cfg.shared_epochs):
        order = rng.permutation(len(samples))
        running = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            losses = []
            for idx in batch:
                lat = latents[idx]
                t = int(rng.integers(0, backbone.max_timestep))
                tokens = proj(torch.cat([e_sh_raw, e_sp_zero]))
                prompt = Prompt(tokens)
                m = _forward_from_latent(lat, prompt, backbone, hp, head, t)
                eps = torch.randn(tuple(lat.values.shape), generator=g, dtype=dtype)
                l_dm = backbone.denoise_loss(lat, prompt, eps, t)
                losses.append(attention_loss(m, masks[idx], l_dm, cfg.lambda_dm))
            batch_loss = torch.stack(losses).mean()
            opt.zero_grad()
            batch_loss.backward()
            opt.step()
            running.append(float(batch_loss.detach()))
        epoch_losses.append(float(np.mean(running)))

    e_sh = EmbeddingVector(e_sh_raw.detach().numpy(), "shared")
    return SharedArtifacts(e_sh, proj, head, hp, tuple(epoch_losses))


def adapt_specific(first_frame: FrameRGB, gt_box: BoundingBox,
                   shared: SharedArtifacts, backbone,
                   cfg: TrainConfig = TrainConfig(), seed: int = 0) -> EmbeddingVector:
    """First-frame phase: fit only the specific embedding to the given box."""
    h, w = first_frame.pixels.shape[:2]
    box = gt_box.clamp(w, h)  # raises when the box lies outside the frame
    mask = BinaryMask.from_box(h, w, box)
    if mask.area == 0:
        raise ValueError(f"box {gt_box} rasterizes to an empty mask")

    dtype = torch.get_default_dtype()
    g = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    latent = backbone.encode_image(first_frame)
    sh_t = torch.as_tensor(np.array(shared.e_sh.values), dtype=dtype)

    e_sp_raw = nn.Parameter(0.02 * torch.randn(EMBEDDING_DIM, generator=g, dtype=dtype))
    opt = torch.optim.Adam([e_sp_raw], lr=cfg.specific_lr)

    saved = _freeze([shared.projector, shared.head, shared.harmonize])
    try:
        for _ in range(cfg.specific_epochs):
            for _ in range(cfg.specific_iters):
                t = int(rng.integers(0, backbone.max_timestep))
                tokens = shared.projector(torch.cat([sh_t, e_sp_raw]))
                prompt = Prompt(tokens)
                m = _forward_from_latent(latent, prompt, backbone,
                                         shared.harmonize, shared.head, t)
                eps = torch.randn(tuple(latent.values.shape), generator=g, dtype=dtype)
                l_dm = backbone.denoise_loss(latent, prompt, eps, t)
                loss = attention_loss(m, mask, l_dm, cfg.lambda_dm)
                opt.zero_grad()
                loss.backward()
                opt.step()
    finally:
        _restore(saved)
    return EmbeddingVector(e_sp_raw.detach().numpy(), "specific")
