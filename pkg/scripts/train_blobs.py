"""Train the desk-scale model on the synthetic blob set and report per-image CC.

    python scripts/train_blobs.py [--steps 500] [--seed 0] [--out blobs.ckpt]
"""
import argparse
import time

from mlnet import tensor as T
from mlnet.checkpoint import save_checkpoint
from mlnet.metrics import cc
from mlnet.network import ModelConfig, build_model
from mlnet.synthetic import training_set
from mlnet.tensor import RngState, Tensor
from mlnet.training import LossConfig, OptimizerState, dataset_loss, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--images", type=int, default=5)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    X, Y = training_set(n=args.images)
    model = build_model(ModelConfig.desk(seed=args.seed))
    cfg, opt = LossConfig(), OptimizerState()
    initial = dataset_loss(model, X, Y, cfg)
    start = time.perf_counter()
    log = train(model, X, Y, cfg, opt, steps=args.steps, rng=RngState(args.seed).child(1))
    final = dataset_loss(model, X, Y, cfg)
    for line in log.lines()[::50]:
        print(line)
    with T.no_grad():
        pred = model.predict(Tensor(X)).data
    print(f"loss {initial:.4g} -> {final:.4g} in {time.perf_counter() - start:.1f} s")
    for i in range(len(X)):
        print(f"image {i}: cc {cc(pred[i, 0], Y[i, 0]):.4f}")
    if args.out:
        save_checkpoint(model, args.out, opt)
        print(f"saved {args.out}")


if __name__ == "__main__":
    main()
