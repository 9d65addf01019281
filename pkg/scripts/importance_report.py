"""Relative importance of the three feature levels for a checkpoint.

    python scripts/importance_report.py model.ckpt [--images 5] [--json]

Images are drawn from the synthetic blob set at the checkpoint's input size.
"""
import argparse

from mlnet.checkpoint import load_checkpoint
from mlnet.importance import importance_profile
from mlnet.synthetic import training_set


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("ckpt")
    ap.add_argument("--images", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    model, _ = load_checkpoint(args.ckpt)
    X, _ = training_set(n=args.images, size=model.config.input_size,
                        channel_means=model.config.channel_means)
    profile = importance_profile(model, X)
    print(profile.to_json() if args.json else profile.to_text(), end="")


if __name__ == "__main__":
    main()
