"""Blockwise 8x8 DCT frequency representation of video frames.

Frames are converted to YCbCr, padded by edge replication to a multiple of the
block size, and each 8x8 block is transformed with the orthonormal 2-D DCT-II

    Y(u, v) = (2 / sqrt(MN)) C(u) C(v) sum_m sum_n X(m, n)
              cos((2m+1) u pi / 2M) cos((2n+1) v pi / 2N),

C(0) = 1/sqrt(2), C(k>0) = 1. The transform is realized as B @ X @ B.T with a
precomputed basis matrix, which is algebraically identical to the quadruple sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

BLOCK = 8

__all__ = ["BLOCK", "FrameFreq", "dct_block", "idct_block", "rgb_to_frequency", "freq_summary_map"]


@lru_cache(maxsize=None)
def _basis(n: int = BLOCK) -> np.ndarray:
    """Orthonormal DCT-II basis, rows indexed by frequency."""
    u = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    b = np.sqrt(2.0 / n) * np.cos((2 * m + 1) * u * np.pi / (2 * n))
    b[0, :] /= np.sqrt(2.0)
    return b


def dct_block(block: np.ndarray) -> np.ndarray:
    """Forward orthonormal DCT of one 8x8 block. A constant block of 1s has DC 8."""
    x = np.asarray(block, dtype=np.float64)
    if x.shape != (BLOCK, BLOCK):
        raise ValueError(f"expected an {BLOCK}x{BLOCK} block, got shape {x.shape}")
    b = _basis()
    return b @ x @ b.T


def idct_block(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct_block (exact up to float rounding)."""
    y = np.asarray(coeffs, dtype=np.float64)
    if y.shape != (BLOCK, BLOCK):
        raise ValueError(f"expected an {BLOCK}x{BLOCK} coefficient block, got shape {y.shape}")
    b = _basis()
    return b.T @ y @ b


# JPEG-style full-range YCbCr for float RGB in [0, 1]
_RGB_TO_YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCBCR_OFFSET = np.array([0.0, 0.5, 0.5])


def _to_ycbcr(pixels: np.ndarray) -> np.ndarray:
    return pixels @ _RGB_TO_YCBCR.T + _YCBCR_OFFSET


@dataclass(frozen=True)
class FrameFreq:
    """Blockwise DCT coefficients of a frame, shape (H, W, 3) in YCbCr channel order.

    H and W are the padded frame dimensions (multiples of the block size); each
    8x8 tile of a channel holds that block's coefficient grid.
    """

    coeffs: np.ndarray
    original_shape: tuple[int, int]
    normalized: bool = True

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.ndim != 3 or c.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) coefficients, got {c.shape}")
        if c.shape[0] % BLOCK or c.shape[1] % BLOCK:
            raise ValueError(f"coefficient grid {c.shape[:2]} is not a multiple of {BLOCK}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def blocks_shape(self) -> tuple[int, int]:
        return (self.coeffs.shape[0] // BLOCK, self.coeffs.shape[1] // BLOCK)


def rgb_to_frequency(frame, normalize: bool = True) -> FrameFreq:
    """Blockwise DCT of a frame in YCbCr space.

    Args:
        frame: FrameRGB (or any object with a `pixels` (H, W, 3) float array).
        normalize: divide every block by 8 so a constant block of 1s has DC 1.
            This keeps coefficient magnitudes commensurate with pixel values.

    Returns:
        FrameFreq with coefficients on the edge-replicated padded grid.
    """
    pixels = np.asarray(frame.pixels, dtype=np.float64)
    h, w = pixels.shape[:2]
    pad_h = (-h) % BLOCK
    pad_w = (-w) % BLOCK
    ycc = _to_ycbcr(pixels)
    if pad_h or pad_w:
        ycc = np.pad(ycc, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    hp, wp = ycc.shape[:2]
    b = _basis()
    tiles = ycc.reshape(hp // BLOCK, BLOCK, wp // BLOCK, BLOCK, 3)
    out = np.einsum("um,imjnc,vn->iujvc", b, tiles, b, optimize=True)
    if normalize:
        out = out / float(BLOCK)
    coeffs = out.reshape(hp, wp, 3)
    return FrameFreq(coeffs=coeffs, original_shape=(h, w), normalized=normalize)


def freq_summary_map(freq: FrameFreq) -> np.ndarray:
    """Per-block spectral summary, shape (H/8, W/8, 3).

    Channels: luma DC, mean |AC| over low frequencies (1 <= u+v <= 4), and mean
    |AC| over high frequencies (u+v >= 5), all from the Y channel. Two textures
    with identical mean color but different spatial scale separate here even
    when a plain downsample of the RGB frame washes them out.
    """
    nb_h, nb_w = freq.blocks_shape
    y = freq.coeffs[:, :, 0].reshape(nb_h, BLOCK, nb_w, BLOCK).transpose(0, 2, 1, 3)
    u = np.arange(BLOCK)[:, None]
    v = np.arange(BLOCK)[None, :]
    s = u + v
    low = (s >= 1) & (s <= 4)
    high = s >= 5
    out = np.empty((nb_h, nb_w, 3))
    out[:, :, 0] = y[:, :, 0, 0]
    ay = np.abs(y)
    out[:, :, 1] = ay[:, :, low].mean(axis=2)
    out[:, :, 2] = ay[:, :, high].mean(axis=2)
    return out
