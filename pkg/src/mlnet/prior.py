"""Learned coarse prior: bilinear-kernel upsampling and pixel-wise application."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, mul


def prior_shape(w: int, h: int, divisor: int = 10) -> tuple[int, int]:
    """Mask size (w', h') for a w x h map; never smaller than 1 x 1."""
    return max(1, w // divisor), max(1, h // divisor)


def grid_coords(n_coarse: int, n_fine: int) -> np.ndarray:
    """Half-pixel-centred positions of the coarse cells on the fine axis."""
    spacing = n_fine / n_coarse
    return (np.arange(n_coarse) + 0.5) * spacing - 0.5


def sampling_grid(w_coarse: int, h_coarse: int, w: int, h: int) -> np.ndarray:
    """Grid G of shape (w', h', 2) holding (x_ij, y_ij)."""
    gx = grid_coords(w_coarse, w)
    gy = grid_coords(h_coarse, h)
    return np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1)


def kernel_matrix(n_coarse: int, n_fine: int, normalized: bool = True) -> np.ndarray:
    """Weights A[fine, coarse] = k(x - x_i) for the tent kernel max(0, s - |d|).

    Pixel positions are clamped into the grid's span so no weight falls
    outside it. Normalizing divides by the spacing s.
    """
    spacing = n_fine / n_coarse
    centers = grid_coords(n_coarse, n_fine)
    pos = np.clip(np.arange(n_fine, dtype=np.float64), centers[0], centers[-1])
    k = np.maximum(0.0, spacing - np.abs(pos[:, None] - centers[None, :]))
    return k / spacing if normalized else k


def upsample_prior(U: Tensor, target: tuple[int, int], normalized: bool = True) -> Tensor:
    """Upsample a (1, 1, h', w') mask to (1, 1, h, w) with separable tent kernels.

    ``target`` is (w, h). Differentiable with respect to ``U``.
    """
    w, h = target
    hc, wc = U.shape[-2:]
    if U.data.ndim != 4 or U.shape[:2] != (1, 1):
        raise ValueError(f"prior mask must have shape (1, 1, h', w'), got {U.shape}")
    if w < wc or h < hc:
        raise ValueError(f"target {w}x{h} smaller than prior mask {wc}x{hc}")
    ay = kernel_matrix(hc, h, normalized)
    ax = kernel_matrix(wc, w, normalized)
    out = ay @ U.data[0, 0] @ ax.T

    def bw(g):
        return ((ay.T @ g[0, 0] @ ax)[None, None],)

    return Tensor.from_op(out[None, None], (U,), bw)


def apply_prior(pre_prior_map: Tensor, V: Tensor) -> Tensor:
    """Pixel-wise product of (N, 1, h, w) maps with a (1, 1, h, w) prior."""
    if pre_prior_map.shape[-2:] != V.shape[-2:]:
        raise ValueError(f"prior {V.shape} does not match map {pre_prior_map.shape}")
    return mul(pre_prior_map, V)
