"""Blockwise DCT against a direct quadruple-sum oracle, plus transform invariants."""

import numpy as np
import pytest

from difftrack.core import FrameRGB
from difftrack.frequency import BLOCK, dct_block, freq_summary_map, idct_block, rgb_to_frequency


def oracle_dct(block):
    """Literal quadruple-sum evaluation of the transform definition."""
    m_dim, n_dim = block.shape
    out = np.zeros((m_dim, n_dim))
    for u in range(m_dim):
        cu = 1.0 / np.sqrt(2.0) if u == 0 else 1.0
        for v in range(n_dim):
            cv = 1.0 / np.sqrt(2.0) if v == 0 else 1.0
            acc = 0.0
            for m in range(m_dim):
                for n in range(n_dim):
                    acc += (
                        block[m, n]
                        * np.cos((2 * m + 1) * u * np.pi / (2 * m_dim))
                        * np.cos((2 * n + 1) * v * np.pi / (2 * n_dim))
                    )
            out[u, v] = 2.0 / np.sqrt(m_dim * n_dim) * cu * cv * acc
    return out


def test_constant_block_dc():
    y = dct_block(np.ones((8, 8)))
    assert y[0, 0] == pytest.approx(8.0, abs=1e-9)
    assert np.abs(y[1:, :]).max() < 1e-12
    assert np.abs(y[0, 1:]).max() < 1e-12


def test_dct_matches_oracle():
    rng = np.random.default_rng(7)
    for _ in range(25):
        x = rng.normal(size=(8, 8))
        np.testing.assert_allclose(dct_block(x), oracle_dct(x), atol=1e-8)


def test_round_trip_and_parseval():
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = rng.random((8, 8))
        y = dct_block(x)
        np.testing.assert_allclose(idct_block(y), x, atol=1e-9)
        assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x), abs=1e-6)


def test_linearity():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
    lhs = dct_block(2.5 * a - 0.5 * b)
    rhs = 2.5 * dct_block(a) - 0.5 * dct_block(b)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_block_shape_enforced():
    with pytest.raises(ValueError):
        dct_block(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        idct_block(np.zeros((8, 4)))


def test_frame_conversion_shapes_and_padding():
    rng = np.random.default_rng(5)
    frame = FrameRGB(rng.random((30, 21, 3)))
    freq = rgb_to_frequency(frame)
    # padded up to multiples of 8 by edge replication
    assert freq.coeffs.shape == (32, 24, 3)
    assert freq.original_shape == (30, 21)
    assert freq.blocks_shape == (4, 3)


def test_uniform_gray_frame_is_dc_only():
    frame = FrameRGB(np.full((16, 16, 3), 0.5))
    freq = rgb_to_frequency(frame)
    # normalized: DC of a constant block equals the constant channel value
    y_dc = freq.coeffs[0, 0, 0]
    assert y_dc == pytest.approx(0.5, abs=1e-9)  # luma of mid gray is 0.5
    tiles = freq.coeffs.reshape(2, 8, 2, 8, 3)
    ac = tiles.copy()
    ac[:, 0, :, 0, :] = 0.0
    assert np.abs(ac).max() < 1e-9


def test_normalization_flag():
    frame = FrameRGB(np.ones((8, 8, 3)))
    raw = rgb_to_frequency(frame, normalize=False)
    norm = rgb_to_frequency(frame, normalize=True)
    assert raw.coeffs[0, 0, 0] == pytest.approx(8.0, abs=1e-9)
    assert norm.coeffs[0, 0, 0] == pytest.approx(1.0, abs=1e-9)


def test_blockwise_matches_per_block_dct():
    rng = np.random.default_rng(13)
    frame = FrameRGB(rng.random((24, 16, 3)))
    freq = rgb_to_frequency(frame, normalize=False)
    # recompute one interior block by hand through the same color transform
    px = frame.pixels
    ycc = px @ np.array(
        [[0.299, 0.587, 0.114], [-0.168736, -0.331264, 0.5], [0.5, -0.418688, -0.081312]]
    ).T + np.array([0.0, 0.5, 0.5])
    blk = ycc[8:16, 8:16, 0]
    np.testing.assert_allclose(freq.coeffs[8:16, 8:16, 0], oracle_dct(blk), atol=1e-8)


def test_striped_texture_has_more_ac_energy_than_flat():
    xx = np.arange(64)
    stripes = 0.5 + 0.4 * np.sign(np.sin(2 * np.pi * xx / 8.0))
    striped = FrameRGB(np.repeat(stripes[None, :, None], 64, axis=0).repeat(3, axis=2))
    flat = FrameRGB(np.full((64, 64, 3), 0.5))

    def ac_energy(freq):
        tiles = freq.coeffs.reshape(8, 8, 8, 8, 3).copy()
        tiles[:, 0, :, 0, :] = 0.0
        return float(np.square(tiles).sum())

    assert ac_energy(rgb_to_frequency(striped)) > ac_energy(rgb_to_frequency(flat)) + 1.0


def test_summary_map_separates_texture_scale():
    rng = np.random.default_rng(2)
    xx = np.arange(64)
    fine = 0.5 + 0.3 * np.sign(np.sin(2 * np.pi * (xx + 0.25) / 4.0))
    coarse = 0.5 + 0.3 * np.sign(np.sin(2 * np.pi * (xx + 0.25) / 32.0))
    f_fine = FrameRGB(np.repeat(fine[None, :, None], 64, axis=0).repeat(3, axis=2))
    f_coarse = FrameRGB(np.repeat(coarse[None, :, None], 64, axis=0).repeat(3, axis=2))
    s_fine = freq_summary_map(rgb_to_frequency(f_fine))
    s_coarse = freq_summary_map(rgb_to_frequency(f_coarse))
    # same mean color: DC channels agree; energy lands in different bands
    assert s_fine[:, :, 0].mean() == pytest.approx(s_coarse[:, :, 0].mean(), abs=1e-6)
    assert s_fine[:, :, 2].mean() > s_coarse[:, :, 2].mean()
