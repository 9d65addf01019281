"""Command-line entry point: train, predict, evaluate, importance, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint, config, data, metrics, pnm
from . import tensor as T
from .gradcheck import check_model_gradients, nudge_off_kinks, unit_scale
from .importance import TARGETS, importance_profile
from .network import build_model
from .synthetic import training_set
from .tensor import RngState, Tensor
from .training import TrainingError, dataset_loss, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _cmd_train(args, out) -> int:
    run = config.load(args.config, seed=args.seed)
    samples = data.load_dataset(args.data, need_maps=True)
    X, Y = data.training_arrays(samples, run.model.input_size, run.model.channel_means)
    rng = RngState(args.seed)
    model = build_model(run.model, rng.child(0))
    print(f"training on {len(X)} images, initial loss {dataset_loss(model, X, Y, run.loss)!r}",
          file=out)
    train(model, X, Y, run.loss, run.optimizer, epochs=args.epochs, rng=rng.child(1), log=out)
    print(f"final loss {dataset_loss(model, X, Y, run.loss)!r}", file=out)
    checkpoint.save_checkpoint(model, args.out, run.optimizer)
    print(f"wrote {args.out}", file=out)
    return EXIT_OK


def _cmd_predict(args, out) -> int:
    model, _ = checkpoint.load_checkpoint(args.ckpt)
    cfg = model.config
    x, tf = data.preprocess(pnm.read_pnm(args.image), cfg.input_size, cfg.channel_means)
    with T.no_grad():
        sal = model.predict(Tensor(x[None])).data[0, 0]
    if args.upscale_to_input:
        sal = tf.map_to_original(sal)
    pnm.write_pnm(args.out, pnm.to_gray8(sal))
    print(f"wrote {args.out} ({sal.shape[1]}x{sal.shape[0]})", file=out)
    return EXIT_OK


def _fixation_dir(directory: Path) -> dict[str, np.ndarray]:
    if not directory.is_dir():
        raise data.DataError(f"missing directory {directory}")
    return {p.stem: data.read_fixations(p) for p in sorted(directory.glob("*.csv"))}


def _cmd_evaluate(args, out) -> int:
    run = config.load(args.config, seed=args.seed)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise data.DataError(f"missing directory {d}")
    preds, gts = data.list_stems(pred_dir), data.list_stems(gt_dir)
    fixes = _fixation_dir(Path(args.fix))
    stems = sorted(preds)
    if not stems:
        raise data.DataError(f"no predicted maps in {pred_dir}")
    sms, fms, fsets = [], [], []
    for stem in stems:
        if stem not in gts:
            raise data.DataError(f"no ground-truth map for prediction {stem!r} in {gt_dir}")
        if stem not in fixes:
            raise data.DataError(f"no fixation file {stem}.csv in {args.fix}")
        fm = pnm.read_pnm(gts[stem]).astype(np.float64)
        fm = fm.mean(axis=2) if fm.ndim == 3 else fm
        sm = pnm.read_pnm(preds[stem]).astype(np.float64)
        sm = sm.mean(axis=2) if sm.ndim == 3 else sm
        # predictions come at model resolution; compare at ground-truth resolution
        sms.append(data.resize(sm, (fm.shape[1], fm.shape[0])))
        fms.append(fm)
        fsets.append(fixes[stem])
    pools = None
    if args.pool:
        pool = list(_fixation_dir(Path(args.pool)).values())
        pools = [pool] * len(stems)
    report = metrics.evaluate_dataset(sms, fms, fsets, names=stems, pools=pools,
                                      cfg=run.metrics)
    text = report.to_json() if args.report and args.report.endswith(".json") else report.to_text()
    if args.report:
        Path(args.report).write_text(text)
        print(f"wrote {args.report}", file=out)
    else:
        out.write(text)
    for name, errs in zip(report.names, report.errors):
        for metric, msg in errs.items():
            print(f"warning: {name}.{metric}: {msg}", file=sys.stderr)
    return EXIT_OK


def _cmd_importance(args, out) -> int:
    model, _ = checkpoint.load_checkpoint(args.ckpt)
    cfg = model.config
    samples = data.load_dataset(args.data, need_maps=False)
    X = np.stack([data.preprocess(s.image, cfg.input_size, cfg.channel_means)[0] for s in samples])
    profile = importance_profile(model, X, targets=(args.target,), seed=cfg.seed)
    out.write(profile.to_text())
    return EXIT_OK


def _cmd_gradcheck(args, out) -> int:
    run = config.load(args.config, seed=args.seed)
    X, Y = training_set(n=2, size=run.model.input_size, seed=args.seed,
                        channel_means=run.model.channel_means)
    rng = RngState(args.seed)
    model = build_model(run.model, rng.child(0))
    nudge_off_kinks(model, rng.child(1))
    unit_scale(model, X)
    start = time.perf_counter()
    res = check_model_gradients(model, X, Y, run.loss, eps=args.eps, probes=args.probes,
                                rng=rng.child(2))
    print(f"checks = {res.checks}", file=out)
    print(f"redraws = {res.redraws}", file=out)
    print(f"shrunk_steps = {res.shrunk}", file=out)
    print(f"max_rel_error = {res.max_rel_error!r}", file=out)
    print(f"worst = {res.worst}", file=out)
    print(f"seconds = {time.perf_counter() - start:.2f}", file=out)
    for item in res.unresolved:
        print(f"unresolved = {item}", file=out)
    ok = res.passed and res.max_rel_error < GRADCHECK_TOLERANCE
    print("PASS" if ok else "FAIL", file=out)
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a model on a dataset directory")
    s.add_argument("--data", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=_cmd_train)

    s = sub.add_parser("predict", help="write the saliency map of one image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--upscale-to-input", action="store_true")
    s.set_defaults(fn=_cmd_predict)

    s = sub.add_parser("evaluate", help="score predicted maps with all metrics")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--fix", required=True)
    s.add_argument("--pool", default=None)
    s.add_argument("--config", default=None, help="metric keys: n_splits, emd_max_bins")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", default=None, help="*.json for JSON, anything else for key = value")
    s.set_defaults(fn=_cmd_evaluate)

    s = sub.add_parser("importance", help="relative importance of the three feature levels")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--target", choices=TARGETS, default="mean")
    s.set_defaults(fn=_cmd_importance)

    s = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps", type=float, default=1e-4)
    s.add_argument("--probes", type=int, default=8)
    s.set_defaults(fn=_cmd_gradcheck)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args, out)
    except (UsageError, config.ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, metrics.MetricError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (data.DataError, pnm.PNMError, checkpoint.CheckpointError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
