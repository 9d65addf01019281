"""Small synthetic saliency set: coloured Gaussian blobs on a noisy background."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import data, pnm


def gaussian_blob(shape, center, sigma):
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    return np.exp(-((yy - center[0]) ** 2 + (xx - center[1]) ** 2) / (2.0 * sigma ** 2))


def blob_images(n: int = 5, size=(64, 48), seed: int = 0, n_fixations: int = 30):
    """Return (images uint8 (n, H, W, 3), maps uint8 (n, H, W), fixation lists).

    Each image holds one bright blob over low-contrast noise; its map is the
    same blob and its fixations are drawn from it.
    """
    W, H = size
    rng = np.random.default_rng(seed)
    images, maps, fixations = [], [], []
    for _ in range(n):
        center = (rng.uniform(0.2, 0.8) * H, rng.uniform(0.2, 0.8) * W)
        sigma = rng.uniform(0.08, 0.14) * W
        blob = gaussian_blob((H, W), center, sigma)
        colour = rng.uniform(0.5, 1.0, size=3)
        img = 0.15 + 0.1 * rng.random((H, W, 3)) + 0.7 * blob[:, :, None] * colour
        images.append(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8))
        maps.append(np.round(blob / blob.max() * 255).astype(np.uint8))
        p = (blob / blob.sum()).ravel()
        idx = rng.choice(p.size, size=n_fixations, p=p)
        fixations.append(np.stack(np.unravel_index(idx, (H, W)), axis=1))
    return np.stack(images), np.stack(maps), fixations


def write_dataset(root: str | Path, n: int = 5, size=(64, 48), seed: int = 0) -> Path:
    """Write images/, maps/ and fixations/ in the layout `load_dataset` reads."""
    root = Path(root)
    for sub in ("images", "maps", "fixations"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    images, maps, fixations = blob_images(n, size, seed)
    for i, (img, m, fx) in enumerate(zip(images, maps, fixations)):
        stem = f"img{i:03d}"
        pnm.write_pnm(root / "images" / f"{stem}.ppm", img)
        pnm.write_pnm(root / "maps" / f"{stem}.pgm", m)
        data.write_fixations(root / "fixations" / f"{stem}.csv", fx)
    return root


def training_set(n: int = 5, size=(64, 48), seed: int = 0, channel_means=(0.5, 0.5, 0.5)):
    """Preprocessed (images, targets) arrays ready for `training.train`."""
    images, maps, _ = blob_images(n, size, seed)
    samples = [data.Sample(f"img{i:03d}", img, m, None)
               for i, (img, m) in enumerate(zip(images, maps))]
    return data.training_arrays(samples, size, channel_means)
