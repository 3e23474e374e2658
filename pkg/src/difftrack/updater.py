"""Online prompt updating: residual motion blend plus the frame schedule.

The prompt learned on the first frame goes stale as the target moves and its
appearance drifts.  From frame 6 on, a small blend head folds the current
motion feature into the prompt through a residual connection; a schedule
decides which frames update and which reuse the prompt as-is.
"""

from dataclasses import dataclass
from typing import Any, NamedTuple, Optional

import numpy as np
import torch
from torch import nn

from .core import AttentionMap, BinaryMask, BoundingBox, FrameRGB, Prompt, TrackerState
from .localize import map_to_box
from .motion import MOTION_DIM, MotionFeature, MotionModule, make_views
from .prompt_learner import (
    SharedArtifacts,
    _forward_from_latent,
    _freeze,
    _restore,
    attention_loss,
    build_prompt,
)

__all__ = [
    "BlendHead",
    "UpdateSchedule",
    "TrackerModules",
    "UpdaterTrainConfig",
    "update_prompt",
    "step",
    "train_updater",
]


class BlendHead(nn.Module):
    """Two-layer perceptron proposing a refreshed prompt from motion.

    Input is the flattened previous prompt concatenated with the motion
    vector; output is prompt-shaped.  The first two blocks of hidden units
    start as a +/- copy of the prompt (relu(x) - relu(-x) = x), so with the
    blend weight at its 0.5 init the head begins as a near-identity and
    training only has to learn the motion-driven correction.
    """

    def __init__(self, num_tokens: int = 2, token_dim: int = 64,
                 motion_dim: int = MOTION_DIM, hidden_extra: int = 64,
                 init_scale: float = 1e-2, beta: float = 0.5, seed: int = 0):
        super().__init__()
        if num_tokens < 1 or token_dim < 1 or motion_dim < 1:
            raise ValueError("blend head dimensions must be positive")
        if not 0.0 < beta < 1.0:
            raise ValueError(f"beta must lie strictly inside (0, 1), got {beta}")
        self.num_tokens = num_tokens
        self.token_dim = token_dim
        self.motion_dim = motion_dim
        p = num_tokens * token_dim
        hidden = 2 * p + hidden_extra
        self.fc1 = nn.Linear(p + motion_dim, hidden)
        self.fc2 = nn.Linear(hidden, p)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            w1 = init_scale * torch.randn(hidden, p + motion_dim, generator=g)
            eye = torch.eye(p)
            w1[:p, :p] += eye
            w1[p:2 * p, :p] -= eye
            self.fc1.weight.copy_(w1)
            self.fc1.bias.zero_()
            w2 = init_scale * torch.randn(p, hidden, generator=g)
            w2[:, :p] += eye
            w2[:, p:2 * p] -= eye
            self.fc2.weight.copy_(w2)
            self.fc2.bias.zero_()
        # store the logit so the learned weight stays in (0, 1) by construction
        self.raw_beta = nn.Parameter(torch.tensor(float(np.log(beta / (1.0 - beta)))))

    @classmethod
    def identity(cls, num_tokens: int = 2, token_dim: int = 64,
                 motion_dim: int = MOTION_DIM, beta: float = 0.5) -> "BlendHead":
        """Exact pass-through of the prompt, ignoring motion; for tests."""
        return cls(num_tokens=num_tokens, token_dim=token_dim,
                   motion_dim=motion_dim, init_scale=0.0, beta=beta)

    @property
    def beta(self) -> float:
        return float(torch.sigmoid(self.raw_beta.detach()))

    def forward(self, prompt_flat: torch.Tensor, motion_vec: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(torch.cat([prompt_flat, motion_vec]))))


def update_prompt(p_prev: Prompt, m_k: MotionFeature, head: BlendHead) -> Prompt:
    """Residual refresh: (1 - beta) * head(p, m) + beta * p, per coordinate.

    Output tokens stay torch when the input tokens were torch (gradients
    survive the unroll); numpy in, numpy out otherwise.
    """
    tokens = p_prev.tokens
    was_torch = isinstance(tokens, torch.Tensor)
    dtype = head.fc1.weight.dtype
    t = tokens.to(dtype) if was_torch else torch.as_tensor(np.array(tokens), dtype=dtype)
    expected = (head.num_tokens, head.token_dim)
    if tuple(t.shape) != expected:
        raise ValueError(f"prompt shape {tuple(t.shape)} does not match head {expected}")
    if m_k.dim != head.motion_dim:
        raise ValueError(f"motion dim {m_k.dim} does not match head {head.motion_dim}")
    flat = t.reshape(-1)
    refreshed = head(flat, m_k.vector.to(dtype))
    beta = torch.sigmoid(head.raw_beta)
    out = ((1.0 - beta) * refreshed + beta * flat).reshape(expected)
    if not was_torch:
        out = out.detach().numpy()
    return Prompt(out, provenance=p_prev.provenance)


@dataclass(frozen=True)
class UpdateSchedule:
    """Which frames refresh the prompt: from start_frame, every interval-th."""

    start_frame: int = 6
    interval: int = 1

    def __post_init__(self):
        if self.start_frame < 2:
            raise ValueError(f"start_frame must be >= 2, got {self.start_frame}")
        if self.interval < 1:
            raise ValueError(f"interval must be >= 1, got {self.interval}")

    def should_update(self, frame_index: int) -> bool:
        # frames 1-5 always run on the first-frame prompt, whatever start_frame says
        if frame_index <= 5 or frame_index < self.start_frame:
            return False
        return (frame_index - self.start_frame) % self.interval == 0

    def updated_frames(self, length: int) -> tuple:
        return tuple(k for k in range(1, length + 1) if self.should_update(k))


@dataclass
class TrackerModules:
    """Everything step() needs, bundled so callers pass one handle."""

    backbone: Any
    shared: SharedArtifacts
    motion: MotionModule
    blend: BlendHead
    schedule: UpdateSchedule = UpdateSchedule()
    tau: float = 0.5
    timestep: Optional[int] = None
    use_freq: bool = True


def step(state: TrackerState, frame_k: FrameRGB, modules: TrackerModules,
         frame_index: Optional[int] = None):
    """Consume one frame: maybe refresh the prompt, then localize.

    Returns (state, box, attention map).  The state is mutated in place and
    also returned for call-site convenience.  frame_index, when given, must
    be exactly one past the last consumed frame.
    """
    k = state.frame_index + 1
    if frame_index is not None and frame_index != k:
        raise ValueError(
            f"out-of-order frame: expected index {k}, got {frame_index}"
        )
    views = make_views(frame_k)
    if modules.schedule.should_update(k):
        window = list(state.history) + [views]
        m_k = modules.motion.motion_feature(window, state.template,
                                            use_freq=modules.use_freq)
        state.prompt = update_prompt(state.prompt, m_k, modules.blend)
    amap = _attention_map(frame_k, state.prompt, modules)
    h, w = frame_k.pixels.shape[:2]
    loc = map_to_box(amap, w, h, tau=modules.tau)
    state.push_history(views.rgb, views.freq)
    state.frame_index = k
    state.last_box = loc.box
    if loc.fallback:
        state.fallback_count += 1
    return state, loc.box, amap


def _attention_map(frame: FrameRGB, prompt: Prompt, modules: TrackerModules) -> AttentionMap:
    t = modules.timestep if modules.timestep is not None else modules.backbone.default_timestep
    latent = modules.backbone.encode_image(frame)
    return _forward_from_latent(latent, prompt, modules.backbone,
                                modules.shared.harmonize, modules.shared.head, t)


@dataclass(frozen=True)
class UpdaterTrainConfig:
    """Knobs for the motion-and-blend training phase."""

    lr: float = 1e-4
    epochs: int = 60
    window: int = 8
    clip_len: Optional[int] = None  # defaults to window + 2
    clips_per_epoch: int = 2
    seed: int = 0
    timestep: Optional[int] = None

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.clip_len is not None and self.clip_len < 2:
            raise ValueError("clips need at least two frames")
        if self.clips_per_epoch < 1:
            raise ValueError("clips_per_epoch must be >= 1")

    @property
    def effective_clip_len(self) -> int:
        return self.clip_len if self.clip_len is not None else self.window + 2


class _PreparedSequence(NamedTuple):
    latents: list
    views: list
    masks: list
    tokens: torch.Tensor
    template: torch.Tensor


def _prepare_sequence(seq, shared: SharedArtifacts, backbone,
                      motion: MotionModule, dtype) -> _PreparedSequence:
    if len(seq) == 3:
        frames, masks, e_sp = seq
    else:
        frames, masks = seq
        e_sp = None
    frames, masks = list(frames), list(masks)
    if len(frames) < 2:
        raise ValueError("training sequences need at least two frames")
    if len(frames) != len(masks):
        raise ValueError(f"{len(frames)} frames but {len(masks)} masks")
    box = masks[0].bbox()
    if box is None:
        raise ValueError("first mask of a training sequence is empty")
    prompt = build_prompt(shared.e_sh, e_sp, shared.projector)
    with torch.no_grad():
        template = motion.template_extractor(frames[0], box)
    return _PreparedSequence(
        latents=[backbone.encode_image(f) for f in frames],
        views=[make_views(f) for f in frames],
        masks=masks,
        tokens=torch.as_tensor(prompt.numpy(), dtype=dtype),
        template=template,
    )


def _clip_loss(prep: _PreparedSequence, start: int, length: int,
               shared: SharedArtifacts, backbone, motion: MotionModule,
               blend: BlendHead, window: int, timestep: int):
    """Unroll the update over one clip and average the mask MSE.

    The prompt enters each clip detached, so backpropagation through time is
    truncated at clip boundaries; motion windows may still look further back
    because frames are constants.
    """
    tokens = prep.tokens.clone()
    total, count = None, 0
    for i in range(start + 1, start + length):
        lo = max(0, i - window)
        m_k = motion.motion_feature(prep.views[lo:i + 1], prep.template)
        p = update_prompt(Prompt(tokens), m_k, blend)
        tokens = p.tokens
        amap = _forward_from_latent(prep.latents[i], p, backbone,
                                    shared.harmonize, shared.head, timestep)
        term = attention_loss(amap, prep.masks[i], l_dm=0.0, lambda_dm=0.0)
        total = term if total is None else total + term
        count += 1
    return total / count


def train_updater(sequences, shared: SharedArtifacts, backbone,
                  cfg: UpdaterTrainConfig = UpdaterTrainConfig(),
                  motion: Optional[MotionModule] = None,
                  blend: Optional[BlendHead] = None):
    """Fit the motion encoders, fusion heads and blend head on labeled clips.

    Each sequence is (frames, masks) or (frames, masks, specific_embedding);
    masks supervise every updated frame through the same MSE term the prompt
    learner used.  Everything from the offline phase stays frozen.  Returns
    (motion, blend, per-epoch mean losses).
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("no training sequences given")
    dtype = torch.get_default_dtype()
    if motion is None:
        motion = MotionModule()
    if blend is None:
        blend = BlendHead(num_tokens=shared.projector.num_tokens,
                          token_dim=shared.projector.token_dim)
    prepared = [_prepare_sequence(s, shared, backbone, motion, dtype) for s in sequences]
    t_step = cfg.timestep if cfg.timestep is not None else backbone.default_timestep
    rng = np.random.default_rng(cfg.seed)
    params = list(motion.parameters()) + list(blend.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    epoch_losses = []
    saved = _freeze([shared.projector, shared.head, shared.harmonize])
    try:
        for _ in range(cfg.epochs):
            batch = []
            for prep in prepared:
                n = len(prep.latents)
                length = min(cfg.effective_clip_len, n)
                for _ in range(cfg.clips_per_epoch):
                    s = int(rng.integers(0, n - length + 1))
                    loss = _clip_loss(prep, s, length, shared, backbone,
                                      motion, blend, cfg.window, t_step)
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                    batch.append(float(loss.detach()))
            epoch_losses.append(float(np.mean(batch)))
    finally:
        _restore(saved)
    return motion, blend, tuple(epoch_losses)
