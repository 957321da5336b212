"""Command-line interface.

Subcommands: train, eval, particle-curve, scan-c, oracle-check, sample.
Global options live before the subcommand name is irrelevant; they are
attached to every subcommand: --seed, --threads, --out-dir, --config.

--threads must take effect before the numeric libraries load, so this module
imports only the standard library at the top and pulls in the heavy modules
inside the handlers.

--config points at a JSON file whose keys are option names of the invoked
subcommand (dashes as underscores); unknown keys are a hard error. Explicit
command-line flags override config values, which override defaults.

Every run writes out_dir/manifest.json recording the command, arguments,
resolved configuration, seed, timestamps, and sha256 checksums of outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

VARIANT_ALIASES = {
    "a": "deterministic",
    "b": "det-stochastic-eval",
    "c": "hybrid",
    "d": "hybrid-fixed",
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads (set before numpy loads)")
    p.add_argument("--out-dir", default=None,
                   help="output directory (default runs/<command>-<timestamp>)")
    p.add_argument("--config", default=None, help="JSON file of option defaults")


def _add_data_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=("halves", "classify", "synthetic"), required=True)
    p.add_argument("--data-dir", default=None,
                   help="directory of IDX files (halves/classify) or CSVs (synthetic)")
    p.add_argument("--train-prefix", default="train")
    p.add_argument("--test-prefix", default="t10k")
    p.add_argument("--limit-train", type=int, default=None)
    p.add_argument("--limit-test", type=int, default=None)
    p.add_argument("--groups-train", type=int, default=100)
    p.add_argument("--groups-test", type=int, default=31)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--modes", type=int, default=5)
    p.add_argument("--examples-per-group", type=int, default=10)
    p.add_argument("--target-noise-sd", type=float, default=0.1)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="sfnn",
        description="Stochastic feedforward networks with binary hidden units",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("train", help="train a network and save a checkpoint")
    _add_common(p)
    _add_data_options(p)
    p.add_argument("--hidden", default="100,100", help="hidden layer sizes, comma separated")
    p.add_argument("--variant", default="stochastic",
                   help="stochastic | deterministic (a) | det-stochastic-eval (b) | "
                        "hybrid (c) | hybrid-fixed (d)")
    p.add_argument("--hybrid-split", default=None,
                   help="per-layer 'ns,nd' pairs joined by ';', e.g. '40,60;40,60'")
    p.add_argument("--output", default="auto",
                   choices=("auto", "softmax", "bernoulli", "gaussian"))
    p.add_argument("--output-reads-stochastic", action="store_true")
    p.add_argument("--estimator", default="g3",
                   choices=("g1", "g2", "g3", "g4", "g5", "backprop"))
    p.add_argument("--m", type=int, default=1, help="training particles")
    p.add_argument("--m-test", type=int, default=100)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--max-lr", type=float, default=0.01)
    p.add_argument("--grid", action="store_true", help="search the learning-rate grid")
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--noise-sd", type=float, default=0.0,
                   help="Gaussian input noise (classification only)")
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--eval-examples", type=int, default=None)
    p.add_argument("--g5-c", type=float, default=None)
    subparsers["train"] = p

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    _add_data_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--eval-examples", type=int, default=None)
    subparsers["eval"] = p

    p = sub.add_parser("particle-curve", help="criterion versus particle count")
    _add_common(p)
    _add_data_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--m-list", default="1,2,5,10,20,40,70,100")
    p.add_argument("--max-examples", type=int, default=500)
    subparsers["particle-curve"] = p

    p = sub.add_parser("scan-c", help="first-layer gradient norm versus centering")
    _add_common(p)
    _add_data_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--cm-grid", default="0:3:0.25",
                   help="comma list or start:stop:step of multiples of 1/M")
    p.add_argument("--n-examples", type=int, default=100)
    subparsers["scan-c"] = p

    p = sub.add_parser("oracle-check", help="verify estimators against enumeration")
    _add_common(p)
    p.add_argument("--check", default="all",
                   choices=("all", "theorem1", "score-zero", "g1-single-unit",
                            "g4-g5-expectation", "variance-order", "backprop-fd",
                            "exact-fd", "mc-consistency"))
    p.add_argument("--max-hidden", type=int, default=16)
    subparsers["oracle-check"] = p

    p = sub.add_parser("sample", help="render completion samples as a PGM grid")
    _add_common(p)
    _add_data_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--indices", default=None, help="comma list; default first --count")
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--n-samples", type=int, default=6)
    subparsers["sample"] = p

    return parser, subparsers


def _apply_config(argv, parser, subparsers):
    """Re-parse with config-file values installed as subcommand defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    with open(args.config) as f:
        conf = json.load(f)
    if not isinstance(conf, dict):
        raise SystemExit(f"config {args.config}: expected a JSON object")
    sp = subparsers[args.command]
    known = {a.dest for a in sp._actions}
    conf = {k.replace("-", "_"): v for k, v in conf.items()}
    unknown = sorted(set(conf) - known)
    if unknown:
        raise SystemExit(
            f"config {args.config}: unknown keys for '{args.command}': {', '.join(unknown)}"
        )
    sp.set_defaults(**conf)
    return parser.parse_args(argv)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class RunContext:
    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        stamp = datetime.now(timezone.utc)
        default = f"runs/{args.command}-{stamp.strftime('%Y%m%d-%H%M%S')}"
        self.out_dir = Path(args.out_dir or default)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.started = stamp
        self.outputs: list[Path] = []

    def register(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def finish(self) -> None:
        skip = {"config", "threads", "out_dir"}
        resolved = {
            k: v for k, v in vars(self.args).items() if k not in skip and k != "command"
        }
        manifest = {
            "command": self.args.command,
            "argv": self.argv,
            "seed": self.args.seed,
            "config": resolved,
            "started_utc": self.started.isoformat(),
            "finished_utc": datetime.now(timezone.utc).isoformat(),
            "outputs": [
                {"path": str(p), "sha256": _sha256(p)} for p in self.outputs
            ],
        }
        with open(self.out_dir / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=2, default=str)
            f.write("\n")


def _parse_int_list(text: str):
    return [int(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _parse_grid(text: str):
    if ":" in text:
        parts = [float(t) for t in text.split(":")]
        if len(parts) != 3:
            raise SystemExit(f"grid spec {text!r} must be start:stop:step")
        import numpy as np

        start, stop, step = parts
        return list(np.arange(start, stop + step / 2, step))
    return [float(t) for t in text.split(",") if t.strip()]


def _load_task(args, seed):
    """Build train/test TaskSplits for the selected task."""
    import numpy as np

    from . import data as dmod
    from .rng import RngStream
    from .training import TaskSplit

    root = RngStream(seed)
    if args.task == "synthetic":
        data_dir = Path(args.data_dir) if args.data_dir else None
        if data_dir and (data_dir / "train.csv").exists():
            train_pairs = dmod.load_synthetic_csv(data_dir / "train.csv")
            test_pairs = dmod.load_synthetic_csv(data_dir / "test.csv")
        else:
            train_pairs, test_pairs = dmod.synthetic_multimodal(
                root.substream("synthetic"),
                n_train_groups=args.groups_train, n_test_groups=args.groups_test,
                dim=args.dim, modes_per_group=args.modes,
                examples_per_group=args.examples_per_group,
                noise_sd=args.target_noise_sd,
            )
        return {
            "train": TaskSplit.from_pairs(train_pairs),
            "test": TaskSplit.from_pairs(test_pairs),
            "output_kind": "gaussian",
            "pairs": (train_pairs, test_pairs),
        }

    if not args.data_dir:
        raise SystemExit(f"--data-dir is required for task {args.task!r}")
    data_dir = Path(args.data_dir)
    train_ds = dmod.load_idx_images(
        data_dir / f"{args.train_prefix}-images-idx3-ubyte",
        data_dir / f"{args.train_prefix}-labels-idx1-ubyte" if args.task == "classify" else None,
    )
    test_ds = dmod.load_idx_images(
        data_dir / f"{args.test_prefix}-images-idx3-ubyte",
        data_dir / f"{args.test_prefix}-labels-idx1-ubyte" if args.task == "classify" else None,
    )
    if args.limit_train:
        train_ds.images = train_ds.images[: args.limit_train]
        if train_ds.labels is not None:
            train_ds.labels = train_ds.labels[: args.limit_train]
    if args.limit_test:
        test_ds.images = test_ds.images[: args.limit_test]
        if test_ds.labels is not None:
            test_ds.labels = test_ds.labels[: args.limit_test]

    if args.task == "classify":
        train_x, test_x, _ = dmod.preprocess_classification(train_ds.images, test_ds.images)
        return {
            "train": TaskSplit(inputs=train_x, targets=train_ds.labels),
            "test": TaskSplit(inputs=test_x, targets=test_ds.labels),
            "output_kind": "softmax",
        }

    h = train_ds.meta["height"]
    w = train_ds.meta["width"]
    train_bin = dmod.binarize(train_ds.images / 255.0, root.substream("binarize", "train"))
    test_bin = dmod.binarize(test_ds.images / 255.0, root.substream("binarize", "test"))
    train_pairs = dmod.split_halves(train_bin, h, w)
    test_pairs = dmod.split_halves(test_bin, h, w)
    return {
        "train": TaskSplit.from_pairs(train_pairs),
        "test": TaskSplit.from_pairs(test_pairs),
        "output_kind": "bernoulli",
        "image_size": (h, w),
    }


def _build_arch(args, d_in, d_out, output_kind):
    from .network import Architecture

    variant = VARIANT_ALIASES.get(args.variant, args.variant)
    hidden = _parse_int_list(args.hidden)
    split = None
    if args.hybrid_split:
        split = tuple(
            tuple(int(v) for v in pair.split(",")) for pair in args.hybrid_split.split(";")
        )
    kind = output_kind if args.output == "auto" else args.output
    return Architecture(
        layer_sizes=(d_in, *hidden, d_out),
        output_kind=kind,
        variant=variant,
        hybrid_split=split,
        output_reads_stochastic=args.output_reads_stochastic,
    )


def cmd_train(args, argv) -> int:
    import numpy as np

    from .network import save_checkpoint
    from .rng import RngStream
    from .training import (
        AllDivergedError, TaskSplit, TrainConfig, grid_search, train, write_metrics_csv,
    )

    ctx = RunContext(args, argv)
    task = _load_task(args, args.seed)
    train_split, test_split = task["train"], task["test"]
    if task["output_kind"] == "softmax":
        d_out = int(max(train_split.targets.max(), test_split.targets.max())) + 1
    else:
        d_out = train_split.targets.shape[1]
    arch = _build_arch(args, train_split.inputs.shape[1], d_out, task["output_kind"])

    val_split = None
    if args.val_fraction > 0 and arch.output_kind == "softmax":
        n = train_split.n
        k = int(round(n * args.val_fraction))
        perm = RngStream(args.seed).substream("val-split").permutation(n)
        val_ids, train_ids = perm[:k], perm[k:]
        val_split = TaskSplit(train_split.inputs[val_ids], train_split.targets[val_ids])
        train_split = TaskSplit(train_split.inputs[train_ids], train_split.targets[train_ids])

    config = TrainConfig(
        estimator=args.estimator, m_train=args.m, m_test=args.m_test,
        epochs=args.epochs, max_lr=args.max_lr, batch_size=args.batch_size,
        input_noise_sd=args.noise_sd, g5_c=args.g5_c, seed=args.seed,
        eval_every=args.eval_every, eval_examples=args.eval_examples,
    )

    if args.grid:
        try:
            gres = grid_search(arch, config, train_split, test_split, val_split)
        except AllDivergedError as e:
            print(f"grid search failed: {e}", file=sys.stderr)
            return 1
        results = [r for _, r in gres.runs]
        run_ids = [f"lr{lr:g}" for lr, _ in gres.runs]
        best = gres.best_result
        print(f"grid best max_lr={gres.best_lr:g} ({gres.selection_metric})")
        for lr, r in gres.runs:
            tag = "diverged" if r.diverged else ", ".join(
                f"{k}={v:.6g}" for k, v in r.final_metrics.items()
            )
            print(f"  max_lr={lr:<8g} {tag}")
    else:
        best = train(arch, config, train_split, test_split)
        results, run_ids = [best], ["run0"]
        if best.diverged:
            print(f"run diverged: {best.divergence_reason}", file=sys.stderr)

    ckpt = ctx.register(ctx.out_dir / "final.ckpt")
    save_checkpoint(ckpt, arch, best.params)
    metrics = ctx.register(ctx.out_dir / "metrics.csv")
    write_metrics_csv(metrics, results, run_ids)
    for k, v in best.final_metrics.items():
        print(f"final test {k} = {v:.6g}")
    ctx.finish()
    return 1 if (not args.grid and best.diverged) else 0


def cmd_eval(args, argv) -> int:
    import csv as csvmod

    from .network import load_checkpoint
    from .rng import RngStream
    from .training import evaluate

    ctx = RunContext(args, argv)
    arch, params = load_checkpoint(args.checkpoint)
    task = _load_task(args, args.seed)
    split = task[args.split]
    metrics = evaluate(
        params, arch, split, args.m,
        RngStream(args.seed).substream("eval"), args.eval_examples,
    )
    out = ctx.register(ctx.out_dir / "metrics.csv")
    with open(out, "w", newline="") as f:
        writer = csvmod.writer(f)
        writer.writerow(["split", "m", "metric", "value"])
        for k, v in metrics.items():
            writer.writerow([args.split, args.m, k, f"{v:.17g}"])
            print(f"{args.split} {k} = {v:.6g}")
    ctx.finish()
    return 0


def cmd_particle_curve(args, argv) -> int:
    import csv as csvmod

    from .analysis import particle_curve
    from .network import load_checkpoint
    from .rng import RngStream

    ctx = RunContext(args, argv)
    arch, params = load_checkpoint(args.checkpoint)
    task = _load_task(args, args.seed)
    curve = particle_curve(
        params, arch, task["test"], _parse_int_list(args.m_list),
        RngStream(args.seed).substream("eval"), args.max_examples,
    )
    out = ctx.register(ctx.out_dir / "particle_curve.csv")
    with open(out, "w", newline="") as f:
        writer = csvmod.writer(f)
        writer.writerow(["m", "mean_criterion", "se"])
        for k, m in enumerate(curve.m_values):
            writer.writerow([m, f"{curve.mean[k]:.17g}", f"{curve.se[k]:.17g}"])
            print(f"M={m:<6d} criterion {curve.mean[k]:.6f} (se {curve.se[k]:.6f})")
    ctx.finish()
    return 0


def cmd_scan_c(args, argv) -> int:
    import csv as csvmod

    from .analysis import scan_centering
    from .network import load_checkpoint
    from .rng import RngStream

    ctx = RunContext(args, argv)
    arch, params = load_checkpoint(args.checkpoint)
    task = _load_task(args, args.seed)
    try:
        rows = scan_centering(
            params, arch, task["test"], args.m, _parse_grid(args.cm_grid),
            RngStream(args.seed).substream("eval"), args.n_examples,
        )
    except ValueError as e:
        print(f"scan-c: {e}", file=sys.stderr)
        return 1
    out = ctx.register(ctx.out_dir / "scan_c.csv")
    with open(out, "w", newline="") as f:
        writer = csvmod.writer(f)
        writer.writerow(["cm", "mean_norm", "se"])
        for r in rows:
            writer.writerow([f"{r['cm']:.17g}", f"{r['mean_norm']:.17g}", f"{r['se']:.17g}"])
            print(f"cM={r['cm']:<5g} mean gradient norm {r['mean_norm']:.6g}")
    best = min(rows, key=lambda r: r["mean_norm"])
    print(f"minimum at cM={best['cm']:g}")
    ctx.finish()
    return 0


def cmd_sample(args, argv) -> int:
    import numpy as np

    from .analysis import build_sample_grid, pairwise_distances, write_pgm
    from .network import load_checkpoint
    from .rng import RngStream

    ctx = RunContext(args, argv)
    arch, params = load_checkpoint(args.checkpoint)
    if arch.output_kind == "softmax":
        print("sample: classification checkpoints have no target image to draw",
              file=sys.stderr)
        return 1
    task = _load_task(args, args.seed)
    split = task["test"]
    if args.indices:
        indices = _parse_int_list(args.indices)
    else:
        indices = list(range(min(args.count, split.n)))
    size = task.get("image_size", (28, 28))
    if args.task == "synthetic":
        dim = split.inputs.shape[1] + split.targets.shape[1]
        side = int(np.sqrt(dim))
        size = (side, side) if side * side == dim else (2, dim // 2)
    grid, samples = build_sample_grid(
        params, arch, split, indices, args.n_samples,
        RngStream(args.seed).substream("sample"), height=size[0], width=size[1],
    )
    out = ctx.register(ctx.out_dir / "samples.pgm")
    write_pgm(out, grid)
    dists = [float(pairwise_distances(samples[i]).mean()) for i in range(len(indices))]
    print(f"wrote {out} ({len(indices)} rows x {args.n_samples} samples)")
    print(f"mean pairwise sample distance = {np.mean(dists):.6g}")
    ctx.finish()
    return 0


def cmd_oracle_check(args, argv) -> int:
    from . import oracle_checks

    ctx = RunContext(args, argv)
    results = oracle_checks.run_checks(args.check, args.seed, args.max_hidden)
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"{status} {name}: {detail}")
        failed += 0 if ok else 1
    ctx.finish()
    return 1 if failed else 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--threads", type=int, default=None)
    known, _ = pre.parse_known_args(argv)
    if known.threads:
        for var in _THREAD_VARS:
            os.environ[var] = str(known.threads)

    parser, subparsers = build_parser()
    args = _apply_config(argv, parser, subparsers)

    handlers = {
        "train": cmd_train,
        "eval": cmd_eval,
        "particle-curve": cmd_particle_curve,
        "scan-c": cmd_scan_c,
        "oracle-check": cmd_oracle_check,
        "sample": cmd_sample,
    }
    try:
        return handlers[args.command](args, argv)
    except ValueError as e:
        # invalid option combinations surface here (bad epochs, estimator
        # particle minimums, ...); keep the message, drop the traceback
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
