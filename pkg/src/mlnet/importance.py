"""Gradient-based relative importance of the conv3/conv4/conv5 taps.

For each image, the gradient of the mean (or population variance) of the
final saliency map is taken with respect to every tap activation. Absolute
values are averaged over images, then over all entries of each tap, and the
three level scores are L1-normalized.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .network import TAP_NAMES, Model
from .prior import apply_prior
from .tensor import Tensor

TARGETS = ("mean", "variance")


@dataclass
class ImportanceProfile:
    mean: tuple[float, float, float] | None = None
    variance: tuple[float, float, float] | None = None
    n_images: int = 0
    seed: int | None = None
    levels: tuple[str, ...] = field(default=TAP_NAMES)

    def to_dict(self) -> dict:
        d = {"n_images": self.n_images, "seed": self.seed}
        for target in TARGETS:
            triple = getattr(self, target)
            if triple is not None:
                d[target] = dict(zip(self.levels, triple))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"n_images = {self.n_images}", f"seed = {self.seed}"]
        for target in TARGETS:
            triple = getattr(self, target)
            if triple is not None:
                lines += [f"{target}.{lvl} = {v!r}" for lvl, v in zip(self.levels, triple)]
        return "\n".join(lines) + "\n"


def target_scalar(saliency: Tensor, target: str) -> Tensor:
    if target == "mean":
        return T.mean(saliency)
    if target == "variance":
        return T.variance(saliency)
    raise ValueError(f"target must be one of {TARGETS}, got {target!r}")


def saliency_from_taps(model: Model, taps) -> Tensor:
    """Final map (prior applied) computed from tap activations, dropout off."""
    pre = model.encode(taps, training=False)
    return apply_prior(pre, model.prior_map((pre.shape[3], pre.shape[2])))


def tap_gradients(model: Model, image: np.ndarray, target: str) -> list[np.ndarray]:
    """d target / d tap for one (3, H, W) image, one array per tap."""
    with T.no_grad():
        taps = model.extract(Tensor(image[None]))
    leaves = [Tensor(t.data, requires_grad=True) for t in taps]
    out = target_scalar(saliency_from_taps(model, leaves), target)
    T.backward(out, inputs=leaves)
    return [leaf.grad for leaf in leaves]


def feature_importance(model: Model, images: np.ndarray, target: str = "mean") -> tuple[float, float, float]:
    """L1-normalized importance of (conv3, conv4, conv5) for ``target``."""
    if len(images) == 0:
        raise ValueError("importance analysis needs at least one image")
    acc = None
    for image in images:
        grads = tap_gradients(model, image, target)
        if acc is None:
            acc = [np.abs(g) for g in grads]
        else:
            acc = [a + np.abs(g) for a, g in zip(acc, grads)]
    levels = np.array([float(np.mean(a / len(images))) for a in acc])
    tot = levels.sum()
    if tot == 0:
        raise ValueError("all tap gradients are zero; importance is undefined")
    return tuple(float(v) for v in levels / tot)


def importance_profile(model: Model, images: np.ndarray, targets=TARGETS,
                       seed: int | None = None) -> ImportanceProfile:
    profile = ImportanceProfile(n_images=len(images), seed=seed)
    for target in targets:
        setattr(profile, target, feature_importance(model, images, target))
    return profile
