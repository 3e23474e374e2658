"""Fusion of per-layer attention maps into one 64x64 map."""

import torch
from torch import nn
from torch.nn import functional as F

from .core import AttentionMap

__all__ = ["FUSED_SIZE", "FusionHead", "fuse_maps"]

FUSED_SIZE = 64


class FusionHead(nn.Module):
    """Per-pixel two-layer perceptron plus one scalar weight per source layer.

    The head acts on each pixel value independently, so it is agnostic to the
    resolution of the maps it receives. Initialization embeds the exact
    identity (relu(x) - relu(-x) = x) in the first two hidden units and
    perturbs all weights by ``init_scale`` noise: training starts from
    "pass maps through unchanged".
    """

    def __init__(self, num_layers: int = 8, hidden_dim: int = 8,
                 init_scale: float = 1e-2, seed: int = 0):
        super().__init__()
        if num_layers < 1:
            raise ValueError("num_layers must be at least 1")
        if hidden_dim < 2:
            raise ValueError("hidden_dim must be at least 2 to embed the identity")
        self.fc1 = nn.Linear(1, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, 1)
        self.layer_weights = nn.Parameter(torch.ones(num_layers))
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            w1 = torch.zeros(hidden_dim, 1)
            w1[0, 0], w1[1, 0] = 1.0, -1.0
            w2 = torch.zeros(1, hidden_dim)
            w2[0, 0], w2[0, 1] = 1.0, -1.0
            b1 = torch.zeros(hidden_dim)
            b2 = torch.zeros(1)
            if init_scale:
                w1 += init_scale * torch.randn(w1.shape, generator=g)
                w2 += init_scale * torch.randn(w2.shape, generator=g)
                b1 += init_scale * torch.randn(b1.shape, generator=g)
                b2 += init_scale * torch.randn(b2.shape, generator=g)
            self.fc1.weight.copy_(w1)
            self.fc1.bias.copy_(b1)
            self.fc2.weight.copy_(w2)
            self.fc2.bias.copy_(b2)

    @classmethod
    def identity(cls, num_layers: int = 8) -> "FusionHead":
        """Exact pass-through head with unit layer weights."""
        return cls(num_layers=num_layers, hidden_dim=2, init_scale=0.0)

    @property
    def num_layers(self) -> int:
        return self.layer_weights.numel()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(x.unsqueeze(-1)))).squeeze(-1)


def fuse_maps(maps, head: FusionHead) -> AttentionMap:
    """Weighted mean of per-layer head outputs, at the common 64x64 resolution.

    Maps at other resolutions are bilinearly resized first. The combination is
    clamped at zero so the result remains a valid attention map even for
    trained (non-identity) heads.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("need at least one attention map to fuse")
    if len(maps) != head.num_layers:
        raise ValueError(
            f"got {len(maps)} maps for a head with {head.num_layers} layer weights"
        )
    dtype = head.fc1.weight.dtype
    any_torch = False
    stacked = []
    for m in maps:
        v = m.values
        if isinstance(v, torch.Tensor):
            any_torch = True
        else:
            v = torch.as_tensor(v)
        v = v.to(dtype)
        if v.shape != (FUSED_SIZE, FUSED_SIZE):
            v = F.interpolate(v[None, None], size=(FUSED_SIZE, FUSED_SIZE),
                              mode="bilinear", align_corners=False)[0, 0]
        stacked.append(v)
    x = torch.stack(stacked)
    y = head(x)
    w = head.layer_weights.to(dtype)
    fused = torch.clamp((w[:, None, None] * y).mean(dim=0), min=0.0)
    if any_torch:
        return AttentionMap(fused)
    return AttentionMap(fused.detach().numpy())
