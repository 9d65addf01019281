"""Central finite-difference checks of the loss gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .network import Model, conv_plan, forward
from .tensor import RngState, Tensor
from .training import LossConfig, model_loss


def rel_error(analytic: float, numeric: float, floor: float = 0.0) -> float:
    """|a - n| / max(|a|, |n|, floor); 0 when both are exactly zero."""
    den = max(abs(analytic), abs(numeric), floor)
    return 0.0 if den == 0 else abs(analytic - numeric) / den


@dataclass
class GradCheckResult:
    max_rel_error: float = 0.0
    checks: int = 0
    redraws: int = 0
    shrunk: int = 0
    unresolved: list[str] = field(default_factory=list)
    worst: str = ""
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.unresolved

    def record(self, label: str, tensor_name: str, err: float):
        self.checks += 1
        self.per_tensor[tensor_name] = max(self.per_tensor.get(tensor_name, 0.0), err)
        if err >= self.max_rel_error:
            self.max_rel_error = err
            self.worst = label


def nudge_off_kinks(model: Model, rng: RngState, scale: float = 1e-2) -> None:
    """Give every bias a random sign and a magnitude in [scale/2, scale].

    Freshly built models have zero biases, so units whose receptive field is
    all zeros sit exactly on the ReLU kink and central differences straddle it.
    """
    for name, p in model.params.items():
        if name.endswith(".bias"):
            mag = rng.generator.uniform(scale / 2, scale, size=p.shape)
            p.data = np.where(rng.generator.random(p.shape) < 0.5, -mag, mag)


def unit_scale(model: Model, images: np.ndarray) -> None:
    """Rescale each conv layer, in order, so its pre-activations have unit RMS on ``images``.

    Glorot-initialized ReLU stacks shrink activations to ~1e-3 by the last
    layers, where a 1e-4 step is no longer small. The gradient identity being
    checked holds at any parameter point, so the check runs at this one. The
    readout bias is then shifted so every map has a positive maximum.
    """
    model.record = {}
    try:
        for name, *_ in conv_plan(model.config):
            with T.no_grad():
                forward(model, Tensor(images))
            rms = float(np.sqrt(np.mean(model.record[name] ** 2)))
            if rms > 0:
                model.params[f"{name}.weight"].data /= rms
                model.params[f"{name}.bias"].data /= rms
        with T.no_grad():
            pre, _ = forward(model, Tensor(images))
    finally:
        model.record = None
    lowest_peak = pre.data.reshape(len(images), -1).max(axis=1).min()
    if lowest_peak < 1.0:
        model.params["readout.bias"].data += 1.0 - lowest_peak


def check_model_gradients(model: Model, images: np.ndarray, targets: np.ndarray,
                          loss_cfg: LossConfig | None = None, eps: float = 1e-4,
                          probes: int | None = 8, rng: RngState | None = None,
                          floor: float | None = None, max_redraws: int = 50,
                          min_eps: float = 1e-8, stencil: int = 5) -> GradCheckResult:
    """Compare backprop against central differences for every parameter tensor.

    Per tensor this checks one random unit direction (all entries at once)
    plus ``probes`` random single entries; ``probes=None`` checks every entry.
    Dropout is off so the loss is deterministic.

    ``stencil=5`` uses the five-point central difference
    (8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h, whose truncation error
    is O(h^4); the three-point rule (``stencil=3``) is O(h^2), which at
    h = 1e-4 is already visible relative to entries with small gradients.

    A probe whose +eps or -eps evaluation switches any relu/max branch
    straddles a kink, where the derivative is not defined. The step is then
    divided by 10 until it is kink-free or below ``min_eps``; bias steps move
    a whole channel and hit some kink at almost any size. A probe that stays
    straddled is redrawn (a new direction or entry) up to ``max_redraws``
    times; with ``probes=None`` it is listed in ``unresolved`` instead.
    Relative errors use a denominator of at least ``floor``. The default,
    1e-6 * max(1, |loss|), sits about 1e5 times above the rounding noise of a
    difference quotient at h = 1e-4 (~1e-12 |loss|), so exactly-zero
    gradients (the prior mask under a scale-invariant loss) compare sanely.
    """
    loss_cfg = loss_cfg or LossConfig()
    rng = rng or RngState(0)
    x, y = Tensor(images), Tensor(targets)
    params = model.named_parameters()
    loss = model_loss(model, x, y, loss_cfg)
    T.backward(loss, inputs=params.values())
    grads = {k: p.grad.copy() for k, p in params.items()}
    if floor is None:
        floor = 1e-6 * max(1.0, abs(loss.item()))

    def evaluate():
        with T.no_grad(), T.trace_kinks() as trace:
            value = model_loss(model, x, y, loss_cfg).item()
        return value, trace

    _, base_trace = evaluate()

    if stencil not in (3, 5):
        raise ValueError(f"stencil must be 3 or 5, got {stencil}")
    multiples = (1, 2) if stencil == 5 else (1,)

    def probe(p, unit):
        """Central difference along ``unit``; None if every step size straddles a kink."""
        base = p.data
        h = eps
        while h >= min_eps:
            diffs, smooth = [], True
            for k in multiples:
                p.data = base + k * h * unit
                plus, tp = evaluate()
                p.data = base - k * h * unit
                minus, tm = evaluate()
                smooth &= T.same_branches(tp, base_trace) and T.same_branches(tm, base_trace)
                diffs.append(plus - minus)
            p.data = base
            if smooth:
                result.shrunk += h < eps
                if stencil == 3:
                    return diffs[0] / (2 * h)
                return (8 * diffs[0] - diffs[1]) / (12 * h)
            h /= 10
        return None

    result = GradCheckResult()
    for name, p in params.items():
        g = grads[name]
        for _ in range(max_redraws + 1):
            d = rng.generator.standard_normal(p.shape)
            d /= np.linalg.norm(d)
            numeric = probe(p, d)
            if numeric is not None:
                result.record(f"{name} direction", name,
                              rel_error(float(np.sum(g * d)), numeric, floor))
                break
            result.redraws += 1
        else:
            result.unresolved.append(f"{name} direction")

        exhaustive = probes is None or probes >= p.size
        order = (np.arange(p.size) if exhaustive
                 else rng.generator.permutation(p.size))
        wanted = p.size if exhaustive else probes
        done = 0
        for attempt, flat in enumerate(order):
            if done == wanted or (not exhaustive and attempt > wanted + max_redraws):
                break
            idx = np.unravel_index(flat, p.shape)
            step = np.zeros(p.shape)
            step[idx] = 1.0
            numeric = probe(p, step)
            if numeric is None:
                if exhaustive:
                    result.unresolved.append(f"{name}{[int(i) for i in idx]}")
                else:
                    result.redraws += 1
                continue
            result.record(f"{name}{[int(i) for i in idx]}", name,
                          rel_error(float(g[idx]), numeric, floor))
            done += 1
        if done < wanted and not exhaustive:
            result.unresolved.append(f"{name}: only {done}/{wanted} kink-free probes")
    return result
