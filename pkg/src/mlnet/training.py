"""Max-normalized weighted loss and SGD with Nesterov momentum."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from . import tensor as T
from .network import Model, forward
from .prior import apply_prior
from .tensor import RngState, Tensor


class TrainingError(RuntimeError):
    """Raised when a training step cannot proceed (degenerate map, non-finite gradient)."""


@dataclass
class LossConfig:
    alpha: float = 1.1
    lam: float | None = None  # None -> 1 / (w' * h')
    batch_size: int = 10
    flow_through_max: bool = True

    def __post_init__(self):
        if not self.alpha > 1.0:
            raise ValueError(f"alpha must exceed 1 (the largest target value), got {self.alpha}")
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be positive, got {self.batch_size}")

    def resolved_lambda(self, mask_shape: tuple[int, ...]) -> float:
        if self.lam is not None:
            return self.lam
        return 1.0 / float(np.prod(mask_shape))


@dataclass
class OptimizerState:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    no_decay: tuple[str, ...] = ("prior.U",)
    # Global L2 clip on the loss gradient. Max-normalization makes the loss blind
    # to output scale, so the first steps from a tiny-output init otherwise
    # blow the weight scale up and stall learning. None disables it.
    max_grad_norm: float | None = 10.0


def compute_loss(pre_prior_maps: Tensor, V: Tensor, targets: Tensor, U: Tensor,
                 cfg: LossConfig) -> Tensor:
    """Mean over samples of ||(phi/max phi - y) / (alpha - y)||^2 plus lambda ||1 - U||^2.

    phi = pre_prior_maps * V. The gradient flows through each sample's max
    (to its first argmax) unless ``cfg.flow_through_max`` is off.
    """
    if pre_prior_maps.shape != targets.shape:
        raise ValueError(f"prediction {pre_prior_maps.shape} vs targets {targets.shape}")
    phi = apply_prior(pre_prior_maps, V)
    peak = T.amax_per_sample(phi)
    bad = np.flatnonzero(peak.data.reshape(-1) <= 0)
    if bad.size:
        raise TrainingError(f"sample {int(bad[0])} has a non-positive prediction "
                            f"(max {float(peak.data.reshape(-1)[bad[0]]):.3g}); cannot normalize")
    if not cfg.flow_through_max:
        peak = peak.detach()
    y = targets.data
    weights = 1.0 / (cfg.alpha - y)
    residual = T.mul(T.sub(T.div(phi, peak), y), weights)
    data_term = T.mul(T.total(T.square(residual)), 1.0 / phi.shape[0])
    lam = cfg.resolved_lambda(U.shape)
    reg = T.mul(T.total(T.square(T.sub(1.0, U))), lam)
    return T.add(data_term, reg)


def sgd_nesterov_step(params: dict[str, Tensor], state: OptimizerState) -> None:
    """In-place update, gradients taken from ``param.grad``.

    v <- mu v - lr (g + wd p);  p <- p + mu v - lr (g + wd p)

    g is the loss gradient after optional global-norm clipping; weight decay
    is skipped for names in ``state.no_decay`` (the prior mask).
    """
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name} at step {state.step}")
        grads[name] = g
    if state.max_grad_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > state.max_grad_norm:
            grads = {k: g * (state.max_grad_norm / norm) for k, g in grads.items()}
    mu, lr = state.momentum, state.learning_rate
    for name, p in params.items():
        wd = 0.0 if name in state.no_decay else state.weight_decay
        d = grads[name] + wd * p.data if wd else grads[name]
        v = state.velocity.get(name)
        v = -lr * d if v is None else mu * v - lr * d
        state.velocity[name] = v
        p.data = p.data + mu * v - lr * d
    state.step += 1


def model_loss(model: Model, images: Tensor, targets: Tensor, cfg: LossConfig,
               training: bool = False, rng: RngState | None = None) -> Tensor:
    pre, _ = forward(model, images, training, rng)
    V = model.prior_map((pre.shape[3], pre.shape[2]))
    return compute_loss(pre, V, targets, model.prior, cfg)


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [f"step {s} loss {l!r}" for s, l in zip(self.steps, self.losses)]


def train(model: Model, images: np.ndarray, targets: np.ndarray, cfg: LossConfig,
          opt: OptimizerState, epochs: int = 1, rng: RngState | None = None,
          steps: int | None = None, log: TextIO | None = None) -> TrainLog:
    """Minibatch training with samples drawn uniformly with replacement.

    ``images`` is (M, 3, H, W) and ``targets`` (M, 1, H/8, W/8). One epoch is
    ceil(M / batch_size) steps unless ``steps`` is given. Each step prints
    "step <n> loss <value>" to ``log`` when set.
    """
    n_items = len(images)
    if n_items == 0:
        raise ValueError("training set is empty")
    if len(targets) != n_items:
        raise ValueError(f"{n_items} images but {len(targets)} targets")
    rng = rng or RngState(model.config.seed)
    if steps is None:
        steps = epochs * -(-n_items // cfg.batch_size)
    params = model.named_parameters()
    history = TrainLog()
    for _ in range(steps):
        idx = np.sort(rng.generator.integers(0, n_items, size=cfg.batch_size))
        loss = model_loss(model, Tensor(images[idx]), Tensor(targets[idx]), cfg,
                          training=True, rng=rng)
        T.backward(loss, inputs=params.values())
        sgd_nesterov_step(params, opt)
        history.steps.append(opt.step)
        history.losses.append(loss.item())
        if log is not None:
            print(history.lines()[-1], file=log)
    return history


def dataset_loss(model: Model, images: np.ndarray, targets: np.ndarray, cfg: LossConfig) -> float:
    """Loss over the whole set in inference mode (dropout off)."""
    with T.no_grad():
        return model_loss(model, Tensor(images), Tensor(targets), cfg).item()
