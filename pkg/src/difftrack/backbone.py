"""Attention backbone contract: the pluggable image-conditioning engine.

A backbone encodes frames into latents and, given conditioning tokens, exposes
per-layer cross-attention maps, self-attention affinity tensors, and a noise
prediction loss that is differentiable with respect to the tokens. Two
implementations ship: a deterministic synthetic oracle (difftrack.synthetic)
used by every hermetic test, and an adapter for a real pretrained
text-to-image model (difftrack.diffusion_adapter) that needs downloaded
weights and a GPU to be useful.
"""

from __future__ import annotations

import abc
import hashlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .core import AttentionMap, FrameRGB, Prompt, SelfAttentionTensor

__all__ = ["LatentCode", "AttentionBundle", "AttentionBackbone", "create_backbone"]


@dataclass(frozen=True)
class LatentCode:
    """Encoded frame representation; `values` is backbone-specific (torch tensor)."""

    values: Any
    backbone_id: str = ""

    def bytes_key(self) -> bytes:
        v = self.values
        arr = v.detach().cpu().numpy() if not isinstance(v, np.ndarray) else v
        return np.ascontiguousarray(arr).tobytes()


@dataclass(frozen=True)
class AttentionBundle:
    """Index-paired per-layer attention: cross[n] goes with self_[n]."""

    cross: Sequence[AttentionMap]
    self_: Sequence[SelfAttentionTensor]

    def __post_init__(self):
        if len(self.cross) != len(self.self_):
            raise ValueError(
                f"cross ({len(self.cross)}) and self ({len(self.self_)}) layer counts differ"
            )
        if not self.cross:
            raise ValueError("bundle must contain at least one layer")
        for n, (c, s) in enumerate(zip(self.cross, self.self_)):
            if c.shape != s.shape[:2]:
                raise ValueError(
                    f"layer {n}: cross map {c.shape} does not match self tensor rows {s.shape[:2]}"
                )

    @property
    def num_layers(self) -> int:
        return len(self.cross)


class AttentionBackbone(abc.ABC):
    """Contract every conditioning backbone implements.

    Implementations declare their conditioning dimension, layer count, input
    resolution, and timestep range; all are fixed for the backbone's lifetime.
    """

    @property
    @abc.abstractmethod
    def conditioning_dim(self) -> int: ...

    @property
    @abc.abstractmethod
    def num_layers(self) -> int: ...

    @property
    @abc.abstractmethod
    def input_resolution(self) -> int: ...

    @property
    @abc.abstractmethod
    def max_timestep(self) -> int: ...

    @abc.abstractmethod
    def encode_image(self, frame: FrameRGB) -> LatentCode: ...

    @abc.abstractmethod
    def attend(self, latent: LatentCode, prompt: Prompt, t: int) -> AttentionBundle: ...

    @abc.abstractmethod
    def denoise_loss(self, latent: LatentCode, prompt: Prompt, noise, t: int): ...

    def parameters(self) -> Iterable:
        """Trainable parameters; empty for the synthetic oracle."""
        return ()

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Fixed buffers defining the backbone, for checksumming."""
        return {}

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.state_tensors()):
            arr = np.ascontiguousarray(self.state_tensors()[name], dtype=np.float64)
            h.update(name.encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def check_timestep(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.max_timestep:
            raise ValueError(f"timestep {t} outside [0, {self.max_timestep})")
        return t

    def check_prompt(self, prompt: Prompt) -> None:
        if prompt.dim != self.conditioning_dim:
            raise ValueError(
                f"prompt dim {prompt.dim} does not match backbone conditioning dim "
                f"{self.conditioning_dim}"
            )

    def check_frame(self, frame: FrameRGB) -> None:
        res = self.input_resolution
        if frame.height != res or frame.width != res:
            raise ValueError(
                f"frame is {frame.height}x{frame.width}, backbone expects {res}x{res}; "
                "resize on ingest"
            )


def create_backbone(cfg) -> AttentionBackbone:
    """Build a backbone from a BackboneConfig (see difftrack.config)."""
    if cfg.kind == "synthetic":
        from .synthetic import SyntheticBackbone

        return SyntheticBackbone.from_config(cfg)
    if cfg.kind == "diffusion-adapter":
        from .diffusion_adapter import DiffusionAdapter

        return DiffusionAdapter.from_config(cfg)
    raise ValueError(f"unknown backbone kind {cfg.kind!r}")
