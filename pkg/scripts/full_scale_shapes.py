"""Forward one random 640x480 image through the full-width network and print shapes."""
import time

import numpy as np

from mlnet import tensor as T
from mlnet.network import ModelConfig, build_model, forward
from mlnet.tensor import Tensor


def main():
    model = build_model(ModelConfig())
    print(f"parameters: {model.parameter_count():,}")
    x = np.random.default_rng(0).uniform(-0.5, 0.5, (1, 3, 480, 640))
    start = time.perf_counter()
    with T.no_grad():
        pre, taps = forward(model, Tensor(x))
    for name, t in zip(("conv3", "conv4", "conv5"), taps):
        print(f"{name}: {t.shape}")
    print(f"pre-prior map: {pre.shape}  ({time.perf_counter() - start:.1f} s)")


if __name__ == "__main__":
    main()
