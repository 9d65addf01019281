"""Saliency evaluation measures: Similarity, CC, NSS, AUC (Judd, Borji, shuffled), EMD."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .data import area_matrix
from .tensor import RngState

METRICS = ("similarity", "cc", "nss", "auc_judd", "auc_borji", "auc_shuffled", "emd")


class MetricError(ValueError):
    """A metric is undefined for the given inputs."""


def _as_map(sm) -> np.ndarray:
    m = np.asarray(sm, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise MetricError(f"saliency maps must be non-empty 2-D arrays, got shape {m.shape}")
    return m


def _as_distribution(sm, what: str) -> np.ndarray:
    m = _as_map(sm)
    if np.any(m < 0):
        raise MetricError(f"{what} has negative values")
    s = m.sum()
    if not s > 0:
        raise MetricError(f"{what} sums to zero")
    return m / s


def _fixation_index(fixations, shape) -> tuple[np.ndarray, np.ndarray]:
    fx = np.asarray(fixations, dtype=int).reshape(-1, 2)
    if len(fx) == 0:
        raise MetricError("fixation set is empty")
    if np.any(fx < 0) or np.any(fx[:, 0] >= shape[0]) or np.any(fx[:, 1] >= shape[1]):
        raise MetricError(f"fixation outside map bounds {shape}")
    return fx[:, 0], fx[:, 1]


def similarity(sm, fm) -> float:
    """Sum of pixel-wise minima after normalizing both maps to sum 1."""
    a = _as_distribution(sm, "saliency map")
    b = _as_distribution(fm, "fixation map")
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.minimum(a, b).sum())


def cc(sm, fm) -> float:
    a, b = _as_map(sm).ravel(), _as_map(fm).ravel()
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {np.shape(sm)} vs {np.shape(fm)}")
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        raise MetricError("correlation undefined for a constant map")
    return float(a @ b) / den


def nss(sm, fixations) -> float:
    """Mean z-scored saliency at the fixated pixels (population std)."""
    m = _as_map(sm)
    sd = m.std()
    if sd == 0:
        raise MetricError("NSS undefined for a constant map")
    rows, cols = _fixation_index(fixations, m.shape)
    return float(np.mean((m[rows, cols] - m.mean()) / sd))


# ----------------------------------------------------------------------------
# ROC area


def roc_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """Trapezoidal ROC area, thresholds at every distinct score.

    Accumulated in integer counts, so it equals pair counting with ties
    worth one half exactly.
    """
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise MetricError("ROC area needs at least one positive and one negative")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    # counts of scores >= t
    tp = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    tp = np.concatenate([[0], tp]).astype(np.int64)
    fp = np.concatenate([[0], fp]).astype(np.int64)
    area2 = int(np.sum((tp[1:] + tp[:-1]) * (fp[1:] - fp[:-1])))
    return area2 / (2 * pos.size * neg.size)


def auc_judd(sm, fixations) -> float:
    """Positives at fixations; negatives at every non-fixated pixel."""
    m = _as_map(sm)
    rows, cols = _fixation_index(fixations, m.shape)
    fixated = np.zeros(m.shape, dtype=bool)
    fixated[rows, cols] = True
    if fixated.all():
        raise MetricError("every pixel is fixated; no negatives left")
    return roc_auc(m[rows, cols], m[~fixated])


def auc_borji(sm, fixations, n_splits: int = 100, rng: RngState | None = None,
              exclude_fixations: bool = False) -> float:
    """Mean ROC area over splits of |fixations| uniformly drawn negative pixels."""
    m = _as_map(sm)
    rows, cols = _fixation_index(fixations, m.shape)
    fixated = np.zeros(m.shape, dtype=bool)
    fixated[rows, cols] = True
    if fixated.all():
        raise MetricError("every pixel is fixated; no negatives left")
    rng = rng or RngState(0)
    pos = m[rows, cols]
    candidates = m[~fixated] if exclude_fixations else m.ravel()
    draws = rng.generator.integers(0, candidates.size, size=(n_splits, pos.size))
    return float(np.mean([roc_auc(pos, candidates[d]) for d in draws]))


def auc_shuffled(sm, fixations, other_fixations, n_splits: int = 100,
                 rng: RngState | None = None) -> float:
    """As auc_borji, but negatives are drawn from other images' fixation locations."""
    m = _as_map(sm)
    rows, cols = _fixation_index(fixations, m.shape)
    pool = [np.asarray(f, dtype=int).reshape(-1, 2) for f in other_fixations]
    pool = np.concatenate(pool) if pool else np.zeros((0, 2), dtype=int)
    if len(pool) == 0:
        raise MetricError("shuffled AUC needs a non-empty pool of other fixations")
    prow, pcol = _fixation_index(pool, m.shape)
    candidates = m[prow, pcol]
    rng = rng or RngState(0)
    pos = m[rows, cols]
    draws = rng.generator.integers(0, candidates.size, size=(n_splits, pos.size))
    return float(np.mean([roc_auc(pos, candidates[d]) for d in draws]))


# ----------------------------------------------------------------------------
# Earth mover's distance


def _downsample_to_budget(m: np.ndarray, max_bins: int) -> np.ndarray:
    h, w = m.shape
    f = math.ceil(math.sqrt(h * w / max_bins))
    while math.ceil(h / f) * math.ceil(w / f) > max_bins:
        f += 1
    out = area_matrix(h, math.ceil(h / f)) @ m @ area_matrix(w, math.ceil(w / f)).T
    return out / out.sum()


def transport_cost(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> float:
    """Exact minimum-cost transport between mass vectors ``a`` and ``b``.

    HiGHS finds an optimal basis; the basic flows are then re-solved from the
    equality constraints so the value is accurate to rounding error.
    """
    m, n = cost.shape
    flow = np.arange(m * n)
    rows = sparse.csc_array(
        (np.ones(2 * m * n), (np.concatenate([flow // n, m + flow % n]), np.tile(flow, 2))),
        shape=(m + n, m * n))
    rhs = np.concatenate([a, b])
    res = linprog(cost.ravel(), A_eq=rows, b_eq=rhs, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise MetricError(f"transport LP failed: {res.message}")
    x = res.x
    basis = x > 1e-12
    block = rows[:, np.flatnonzero(basis)].toarray()
    sub, *_ = np.linalg.lstsq(block, rhs, rcond=None)
    if np.all(sub >= -1e-12) and np.allclose(block @ sub, rhs, atol=1e-13):
        return float(cost.ravel()[basis] @ sub)
    return float(res.fun)


def emd(sm, fm, max_bins: int = 1024, downsample: bool = True) -> float:
    """Earth mover's distance between two maps on the unit pixel grid.

    Both maps are normalized to sum 1. Ground distance is Euclidean between
    pixel centres. Maps with more than ``max_bins`` pixels are area-averaged
    down first when ``downsample`` is set, otherwise rejected.
    """
    a = _as_distribution(sm, "saliency map")
    b = _as_distribution(fm, "fixation map")
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size > max_bins:
        if not downsample:
            raise MetricError(f"{a.size} bins exceed the budget of {max_bins}; "
                              "enable downsampling or raise max_bins")
        a = _downsample_to_budget(a, max_bins)
        b = _downsample_to_budget(b, max_bins)
    coords = np.stack(np.unravel_index(np.arange(a.size), a.shape), axis=1).astype(float)
    ia = np.flatnonzero(a.ravel() > 0)
    ib = np.flatnonzero(b.ravel() > 0)
    cost = np.sqrt(((coords[ia, None, :] - coords[None, ib, :]) ** 2).sum(-1))
    return transport_cost(a.ravel()[ia], b.ravel()[ib], cost)


# ----------------------------------------------------------------------------
# reports


@dataclass
class MetricConfig:
    seed: int = 0
    n_splits: int = 100
    emd_max_bins: int = 1024
    emd_downsample: bool = True
    borji_exclude_fixations: bool = False


@dataclass
class MetricReport:
    names: list[str] = field(default_factory=list)
    per_image: list[dict[str, float | None]] = field(default_factory=list)
    errors: list[dict[str, str]] = field(default_factory=list)
    seed: int = 0
    n_splits: int = 100

    @property
    def aggregate(self) -> dict[str, float | None]:
        out = {}
        for metric in METRICS:
            vals = [r[metric] for r in self.per_image if r.get(metric) is not None]
            out[metric] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aggregate"] = self.aggregate
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"seed = {self.seed}", f"n_splits = {self.n_splits}",
                 f"n_images = {len(self.per_image)}"]
        for metric, v in self.aggregate.items():
            lines.append(f"mean.{metric} = {'NA' if v is None else repr(v)}")
        for name, row in zip(self.names, self.per_image):
            for metric in METRICS:
                v = row.get(metric)
                lines.append(f"{name}.{metric} = {'NA' if v is None else repr(v)}")
        return "\n".join(lines) + "\n"


def evaluate_all(sm, fm, fixations, pool, cfg: MetricConfig | None = None,
                 index: int = 0) -> tuple[dict[str, float | None], dict[str, str]]:
    """All seven metrics for one image. Failed metrics come back as None plus a message."""
    cfg = cfg or MetricConfig()
    base = RngState(cfg.seed)
    calls = {
        "similarity": lambda: similarity(sm, fm),
        "cc": lambda: cc(sm, fm),
        "nss": lambda: nss(sm, fixations),
        "auc_judd": lambda: auc_judd(sm, fixations),
        "auc_borji": lambda: auc_borji(sm, fixations, cfg.n_splits, base.child(index, 0),
                                       cfg.borji_exclude_fixations),
        "auc_shuffled": lambda: auc_shuffled(sm, fixations, pool, cfg.n_splits,
                                             base.child(index, 1)),
        "emd": lambda: emd(sm, fm, cfg.emd_max_bins, cfg.emd_downsample),
    }
    values, errors = {}, {}
    for name, fn in calls.items():
        try:
            values[name] = fn()
        except MetricError as exc:
            values[name] = None
            errors[name] = str(exc)
    return values, errors


def evaluate_dataset(saliency_maps, fixation_maps, fixation_sets, names=None,
                     pools=None, cfg: MetricConfig | None = None) -> MetricReport:
    """Evaluate every image. Without explicit ``pools`` the shuffled-AUC pool of
    image i is the fixations of all other images."""
    cfg = cfg or MetricConfig()
    n = len(saliency_maps)
    names = list(names) if names is not None else [f"image{i}" for i in range(n)]
    report = MetricReport(names=names, seed=cfg.seed, n_splits=cfg.n_splits)
    for i in range(n):
        pool = pools[i] if pools is not None else [f for j, f in enumerate(fixation_sets) if j != i]
        values, errors = evaluate_all(saliency_maps[i], fixation_maps[i], fixation_sets[i],
                                      pool, cfg, index=i)
        report.per_image.append(values)
        report.errors.append(errors)
    return report
