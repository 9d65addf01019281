"""Image preprocessing, ground-truth preparation and dataset loading."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import pnm

IMAGE_SUFFIXES = (".pnm", ".ppm", ".pgm")


class DataError(Exception):
    """Dataset files are missing, mismatched or malformed."""


# ----------------------------------------------------------------------------
# resampling


def area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows give the fractional overlap of each output cell with the input cells."""
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
    m = np.clip(hi - lo, 0.0, None)
    return m / m.sum(axis=1, keepdims=True)


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Half-pixel-aligned linear interpolation with edge clamping; rows sum to 1."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    if n_out == n_in:
        return np.eye(n_in)
    return area_matrix(n_in, n_out) if n_out < n_in else bilinear_matrix(n_in, n_out)


def resize(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize an (H, W) or (H, W, C) array to ``size`` = (W, H), per axis."""
    W, H = size
    ry = resize_matrix(arr.shape[0], H)
    rx = resize_matrix(arr.shape[1], W)
    out = np.tensordot(ry, arr.astype(np.float64), axes=(1, 0))
    out = np.tensordot(rx, out, axes=(1, 1)).swapaxes(0, 1)
    return out


# ----------------------------------------------------------------------------
# preprocessing


@dataclass(frozen=True)
class Transform:
    """Pad-then-resize record mapping model pixels back to the original image."""

    orig_size: tuple[int, int]  # (W, H)
    pad_left: int
    pad_top: int
    padded_size: tuple[int, int]
    target_size: tuple[int, int]

    def to_original(self, row: float, col: float, scale: int = 1) -> tuple[float, float]:
        """Map pixel (row, col) of a map that is 1/``scale`` of the target size."""
        sy = self.padded_size[1] / (self.target_size[1] / scale)
        sx = self.padded_size[0] / (self.target_size[0] / scale)
        y = (row + 0.5) * sy - 0.5 - self.pad_top
        x = (col + 0.5) * sx - 0.5 - self.pad_left
        return (float(np.clip(y, 0, self.orig_size[1] - 1)),
                float(np.clip(x, 0, self.orig_size[0] - 1)))

    def to_model(self, row: float, col: float, scale: int = 1) -> tuple[float, float]:
        sy = self.padded_size[1] / (self.target_size[1] / scale)
        sx = self.padded_size[0] / (self.target_size[0] / scale)
        return (row + self.pad_top + 0.5) / sy - 0.5, (col + self.pad_left + 0.5) / sx - 0.5

    def fixations_to_model(self, fixations: np.ndarray, scale: int = 1) -> np.ndarray:
        """Integer (row, col) fixations at the (downscaled) model resolution."""
        h = self.target_size[1] // scale
        w = self.target_size[0] // scale
        out = []
        for r, c in np.asarray(fixations).reshape(-1, 2):
            mr, mc = self.to_model(r, c, scale)
            out.append((int(np.clip(round(mr), 0, h - 1)), int(np.clip(round(mc), 0, w - 1))))
        return np.array(out, dtype=int).reshape(-1, 2)

    def map_to_original(self, saliency: np.ndarray) -> np.ndarray:
        """Resample a model-resolution map onto the original image grid."""
        padded = resize(saliency, self.padded_size)
        W, H = self.orig_size
        return padded[self.pad_top:self.pad_top + H, self.pad_left:self.pad_left + W]


def pad_to_aspect(image: np.ndarray, aspect: tuple[int, int] = (4, 3)):
    """Zero-pad symmetrically so width:height = aspect. Returns (padded, left, top)."""
    h, w = image.shape[:2]
    aw, ah = aspect
    if w * ah >= h * aw:
        new_w, new_h = w, -(-w * ah // aw)
    else:
        new_w, new_h = -(-h * aw // ah), h
    left = (new_w - w) // 2
    top = (new_h - h) // 2
    pad = [(top, new_h - h - top), (left, new_w - w - left)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pad), left, top


def preprocess(image: np.ndarray, target_size: tuple[int, int] = (64, 48),
               channel_means=(0.5, 0.5, 0.5), maxval: int = 255):
    """Pad to 4:3, resize to ``target_size`` (W, H), scale to [0, 1], subtract means.

    Grayscale input is replicated to three channels. Returns ((3, H, W) array,
    Transform).
    """
    W, H = target_size
    if W * 3 != H * 4 or W % 8 or H % 8:
        raise ValueError(f"target size {W}x{H} must be 4:3 and divisible by 8")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    padded, left, top = pad_to_aspect(img)
    out = resize(padded, target_size) / maxval
    out = out - np.asarray(channel_means, dtype=np.float64)[None, None, :]
    tf = Transform((img.shape[1], img.shape[0]), left, top,
                   (padded.shape[1], padded.shape[0]), (W, H))
    return out.transpose(2, 0, 1), tf


def prepare_map(gt: np.ndarray, tf: Transform, scale: int = 8) -> np.ndarray:
    """Ground-truth map padded/resized like its image, area-averaged to 1/``scale``, max-normalized."""
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim == 3:
        gt = gt.mean(axis=2)
    padded, _, _ = pad_to_aspect(gt)
    W, H = tf.target_size
    small = resize(padded, (W // scale, H // scale))
    peak = small.max()
    if peak <= 0:
        raise DataError("ground-truth map has no positive value")
    return small / peak


def fixation_map(fixations: np.ndarray, shape: tuple[int, int], sigma: float = 0.0) -> np.ndarray:
    """Fixation counts on an (H, W) grid, optionally Gaussian-blurred, max-normalized."""
    m = np.zeros(shape)
    fx = np.asarray(fixations, dtype=int).reshape(-1, 2)
    np.add.at(m, (fx[:, 0], fx[:, 1]), 1.0)
    if sigma > 0:
        m = gaussian_filter(m, sigma, mode="constant")
    peak = m.max()
    return m / peak if peak > 0 else m


# ----------------------------------------------------------------------------
# files


def read_fixations(path: str | Path) -> np.ndarray:
    """Read "row,col" lines (zero-based) into an (n, 2) int array."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or not "".join(rec).strip():
                continue
            try:
                r, c = (int(v) for v in rec)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: expected 'row,col', got {rec!r}") from exc
            rows.append((r, c))
    return np.array(rows, dtype=int).reshape(-1, 2)


def write_fixations(path: str | Path, fixations) -> None:
    with open(path, "w") as fh:
        for r, c in np.asarray(fixations, dtype=int).reshape(-1, 2):
            fh.write(f"{r},{c}\n")


def list_stems(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.iterdir())
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}


@dataclass
class Sample:
    stem: str
    image: np.ndarray
    gt_map: np.ndarray | None
    fixations: np.ndarray | None


def load_dataset(root: str | Path, need_maps: bool = True) -> list[Sample]:
    """Read images/, maps/ and fixations/ under ``root``; stems must match."""
    root = Path(root)
    img_dir = root / "images"
    if not img_dir.is_dir():
        raise DataError(f"missing directory {img_dir}")
    images = list_stems(img_dir)
    if not images:
        raise DataError(f"no PNM images in {img_dir}")
    maps = list_stems(root / "maps") if (root / "maps").is_dir() else {}
    fix_dir = root / "fixations"
    samples = []
    for stem, path in images.items():
        if need_maps and stem not in maps:
            raise DataError(f"no ground-truth map for image {stem!r} in {root / 'maps'}")
        fix_path = fix_dir / f"{stem}.csv"
        samples.append(Sample(
            stem,
            pnm.read_pnm(path),
            pnm.read_pnm(maps[stem]) if stem in maps else None,
            read_fixations(fix_path) if fix_path.is_file() else None,
        ))
    return samples


def training_arrays(samples: list[Sample], target_size, channel_means):
    """Stack preprocessed images (M, 3, H, W) and targets (M, 1, H/8, W/8)."""
    images, targets = [], []
    for s in samples:
        x, tf = preprocess(s.image, target_size, channel_means)
        images.append(x)
        try:
            targets.append(prepare_map(s.gt_map, tf)[None])
        except DataError as exc:
            raise DataError(f"{s.stem}: {exc}") from exc
    return np.stack(images), np.stack(targets)
