"""Cross-attention harmonization: self-attention propagation plus a learned blend."""

import math

import torch
from torch import nn
from torch.nn import functional as F

from .core import AttentionMap, SelfAttentionTensor

__all__ = ["HarmonizeParams", "enhance_cross_attention", "harmonize"]


def _as_tensor(values):
    if isinstance(values, torch.Tensor):
        return values, True
    return torch.as_tensor(values), False


class HarmonizeParams(nn.Module):
    """Blend weight between a cross-attention map and its propagated version.

    Stored as an unconstrained scalar pushed through a sigmoid, so gradient
    updates can never leave [0, 1].
    """

    def __init__(self, alpha: float = 0.5):
        super().__init__()
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"initial alpha must lie strictly inside (0, 1), got {alpha}")
        raw = math.log(alpha / (1.0 - alpha))
        self.raw_alpha = nn.Parameter(torch.tensor(raw, dtype=torch.get_default_dtype()))

    @property
    def alpha(self) -> torch.Tensor:
        return torch.sigmoid(self.raw_alpha)


def enhance_cross_attention(mc: AttentionMap, ms: SelfAttentionTensor) -> AttentionMap:
    """Propagate a cross-attention map through per-cell self-attention maps.

    Each cell's weight redistributes over that cell's self-attention map:
    out = sum_ij mc[i, j] * ms[i, j, :, :].
    """
    c, c_torch = _as_tensor(mc.values)
    s, s_torch = _as_tensor(ms.values)
    if tuple(s.shape[:2]) != tuple(c.shape):
        raise ValueError(
            f"self-attention leading dims {tuple(s.shape[:2])} do not match "
            f"cross-attention shape {tuple(c.shape)}"
        )
    out = torch.einsum("ij,ijxy->xy", c, s.to(c.dtype))
    if c_torch or s_torch:
        return AttentionMap(out)
    return AttentionMap(out.numpy())


def harmonize(mc: AttentionMap, mc_enh: AttentionMap, params: HarmonizeParams) -> AttentionMap:
    """Blend the raw and enhanced maps: (1 - alpha) * enhanced + alpha * raw.

    The enhanced map is bilinearly resized to the raw map's resolution first.
    """
    c, c_torch = _as_tensor(mc.values)
    e, e_torch = _as_tensor(mc_enh.values)
    e = e.to(c.dtype)
    if e.shape != c.shape:
        e = F.interpolate(
            e[None, None], size=tuple(c.shape), mode="bilinear", align_corners=False
        )[0, 0]
    a = params.alpha.to(c.dtype)
    out = (1.0 - a) * e + a * c
    if c_torch or e_torch:
        return AttentionMap(out)
    return AttentionMap(out.detach().numpy())
