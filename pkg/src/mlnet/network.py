"""Feature extraction and encoding networks.

The extractor is the 13-conv VGG-16 trunk with the fifth pooling stage
removed and the fourth pooling stage run at stride 1, so the output is 1/8
of the input. Taps are read after the third pool (conv3), after the fourth
pool (conv4) and after the last conv (conv5).
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .prior import apply_prior, prior_shape, upsample_prior
from .tensor import RngState, Tensor

FULL_STAGE_CHANNELS = (64, 128, 256, 512, 512)
CONVS_PER_STAGE = (2, 2, 3, 3, 3)
TAP_NAMES = ("conv3", "conv4", "conv5")


@dataclass
class ModelConfig:
    stage_channels: tuple[int, ...] = FULL_STAGE_CHANNELS
    encode_channels: int = 64
    input_size: tuple[int, int] = (640, 480)  # (W, H)
    dropout_retain: float = 0.5
    seed: int = 0
    channel_means: tuple[float, float, float] = (0.5, 0.5, 0.5)
    prior_size: tuple[int, int] | None = None  # (w', h'); None -> max(1, floor(w/10))
    normalized_prior: bool = True

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.input_size = tuple(int(v) for v in self.input_size)
        self.channel_means = tuple(float(m) for m in self.channel_means)
        if self.prior_size is not None:
            self.prior_size = tuple(int(v) for v in self.prior_size)
        self.validate()

    def validate(self):
        if len(self.stage_channels) != 5:
            raise ValueError(f"need 5 stage widths, got {self.stage_channels}")
        if min(self.stage_channels) < 1 or self.encode_channels < 1:
            raise ValueError("all channel counts must be >= 1")
        W, H = self.input_size
        if W % 8 or H % 8 or W <= 0 or H <= 0:
            raise ValueError(f"input size {W}x{H} must be divisible by 8; "
                             "pad the images (see mlnet.data.preprocess) first")
        if not 0.0 < self.dropout_retain <= 1.0:
            raise ValueError(f"dropout_retain must lie in (0, 1], got {self.dropout_retain}")
        if self.prior_size is not None:
            w, h = self.map_size
            if not (1 <= self.prior_size[0] <= w and 1 <= self.prior_size[1] <= h):
                raise ValueError(f"prior size {self.prior_size} must fit in map {w}x{h}")

    @classmethod
    def desk(cls, width_divisor: int = 8, **kw) -> "ModelConfig":
        """Narrow preset: every width divided by ``width_divisor``, 64x48 input."""
        kw.setdefault("input_size", (64, 48))
        return cls(stage_channels=tuple(max(1, c // width_divisor) for c in FULL_STAGE_CHANNELS),
                   encode_channels=max(1, 64 // width_divisor), **kw)

    @property
    def map_size(self) -> tuple[int, int]:
        return self.input_size[0] // 8, self.input_size[1] // 8

    @property
    def mask_size(self) -> tuple[int, int]:
        return self.prior_size or prior_shape(*self.map_size)

    @property
    def tap_channels(self) -> tuple[int, int, int]:
        return self.stage_channels[2], self.stage_channels[3], self.stage_channels[4]

    def to_dict(self) -> dict:
        return asdict(self)


def conv_plan(cfg: ModelConfig) -> list[tuple[str, int, int, int]]:
    """(name, in_channels, out_channels, kernel) for every conv layer in order."""
    plan = []
    cin = 3
    for s, (cout, reps) in enumerate(zip(cfg.stage_channels, CONVS_PER_STAGE), start=1):
        for r in range(1, reps + 1):
            plan.append((f"conv{s}_{r}", cin, cout, 3))
            cin = cout
    plan.append(("encode", sum(cfg.tap_channels), cfg.encode_channels, 3))
    plan.append(("readout", cfg.encode_channels, 1, 1))
    return plan


def glorot_uniform(rng: RngState, cout: int, cin: int, k: int) -> np.ndarray:
    fan_in, fan_out = cin * k * k, cout * k * k
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.generator.uniform(-bound, bound, size=(cout, cin, k, k))


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    prior: Tensor | None = None
    # when a dict, every conv stores its pre-activation output here by layer name
    record: dict | None = field(default=None, repr=False, compare=False)

    def named_parameters(self) -> dict[str, Tensor]:
        """Conv weights/biases plus the prior mask under ``prior.U``."""
        out = dict(self.params)
        out["prior.U"] = self.prior
        return out

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def layer_parameter_counts(self) -> dict[str, int]:
        return {name: self.params[f"{name}.weight"].size + self.params[f"{name}.bias"].size
                for name, *_ in conv_plan(self.config)}

    def extract(self, images: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Feature extraction network; returns the conv3, conv4, conv5 taps."""
        if images.data.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected images of shape (N, 3, H, W), got {images.shape}")
        H, W = images.shape[2:]
        if W % 8 or H % 8:
            raise ValueError(f"image size {W}x{H} must be divisible by 8; pad the images first")
        x = images
        taps = []
        for s, reps in enumerate(CONVS_PER_STAGE, start=1):
            for r in range(1, reps + 1):
                x = self._conv(f"conv{s}_{r}", x, padding=1, activate=True)
            if s <= 3:
                x = T.maxpool2d(x, 2, 2)
            elif s == 4:
                x = T.maxpool2d(x, 2, 1, same_pad=True)
            if s >= 3:
                taps.append(x)
        return tuple(taps)

    def encode(self, taps, training: bool = False, rng: RngState | None = None) -> Tensor:
        """Encoding network on the taps; returns the pre-prior map (N, 1, h, w)."""
        x = T.concat_channels(list(taps))
        x = T.dropout(x, self.config.dropout_retain, rng, training)
        x = self._conv("encode", x, padding=1, activate=True)
        return self._conv("readout", x, padding=0, activate=False)

    def prior_map(self, map_size: tuple[int, int] | None = None) -> Tensor:
        """Upsampled prior V at ``map_size`` (w, h); defaults to the configured map size."""
        return upsample_prior(self.prior, map_size or self.config.map_size,
                              self.config.normalized_prior)

    def predict(self, images: Tensor) -> Tensor:
        """Final saliency map (prior applied), inference mode."""
        pre, _ = forward(self, images, training=False)
        return apply_prior(pre, self.prior_map((pre.shape[3], pre.shape[2])))

    def _conv(self, name, x, padding, activate):
        y = T.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], 1, padding)
        if self.record is not None:
            self.record[name] = y.data
        return T.relu(y) if activate else y


def build_model(config: ModelConfig, rng: RngState | None = None) -> Model:
    """Fresh model: Glorot-uniform conv weights, zero biases, prior mask of ones."""
    config.validate()
    rng = rng or RngState(config.seed)
    params = {}
    for name, cin, cout, k in conv_plan(config):
        params[f"{name}.weight"] = Tensor(glorot_uniform(rng, cout, cin, k), requires_grad=True,
                                          name=f"{name}.weight")
        params[f"{name}.bias"] = Tensor(np.zeros(cout), requires_grad=True, name=f"{name}.bias")
    wc, hc = config.mask_size
    prior = Tensor(np.ones((1, 1, hc, wc)), requires_grad=True, name="prior.U")
    return Model(config, params, prior)


def forward(model: Model, images: Tensor, training: bool = False,
            rng: RngState | None = None) -> tuple[Tensor, tuple[Tensor, Tensor, Tensor]]:
    """Run both networks. Returns (pre_prior_map, (conv3, conv4, conv5))."""
    taps = model.extract(images)
    return model.encode(taps, training, rng), taps
