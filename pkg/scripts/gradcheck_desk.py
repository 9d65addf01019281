"""Finite-difference check of every parameter tensor of the desk model.

    python scripts/gradcheck_desk.py [--seed 0] [--probes 8] [--all]

``--all`` checks every entry instead of sampled ones (slow at desk scale).
"""
import argparse
import time

from mlnet.gradcheck import check_model_gradients, nudge_off_kinks, unit_scale
from mlnet.network import ModelConfig, build_model
from mlnet.synthetic import training_set
from mlnet.tensor import RngState


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--probes", type=int, default=8)
    ap.add_argument("--eps", type=float, default=1e-4)
    ap.add_argument("--all", action="store_true")
    args = ap.parse_args()

    X, Y = training_set(n=2)
    model = build_model(ModelConfig.desk(seed=args.seed))
    nudge_off_kinks(model, RngState(args.seed).child(1))
    unit_scale(model, X)
    start = time.perf_counter()
    res = check_model_gradients(model, X, Y, eps=args.eps, probes=None if args.all else args.probes,
                                rng=RngState(args.seed).child(2))
    for name, err in res.per_tensor.items():
        print(f"{name:24s} {err:.2e}")
    print(f"checks {res.checks}  redraws {res.redraws}  shrunk {res.shrunk}  "
          f"max {res.max_rel_error:.2e} at {res.worst}  {time.perf_counter() - start:.1f} s")
    for item in res.unresolved:
        print("unresolved:", item)


if __name__ == "__main__":
    main()
