"""Command-line entry point.

Exit codes: 0 success, 2 invalid spec/flags, 3 I/O or file-format error.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import arch, cost, data, toyfit
from .errors import FormatError, ShapeError, SpecError
from .ops import softmax
from .network import load_checkpoint, materialize, restore, save_checkpoint
from .train import TrainConfig, sweep, train, write_sweep_csv

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3

log = logging.getLogger("ghostconv")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _hw(text):
    parts = text.lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if len(dims) == 1:
        dims *= 2
    if len(dims) != 2:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return tuple(dims)


def _add_arch_args(p, spec_action="store"):
    p.add_argument("--spec", action=spec_action, help="network spec file")
    p.add_argument("--arch", choices=sorted(arch.ARCHITECTURES), help="built-in architecture")
    p.add_argument("--alpha", type=float, default=1.0, help="width multiplier (ghostnet, vgg16)")
    p.add_argument("--classes", type=int, default=None, help="number of output classes")
    p.add_argument("--input-size", type=int, default=None, help="square input size for --arch")


def _add_train_args(p):
    p.add_argument("--dataset", choices=("mnist", "cifar10"), default="mnist")
    p.add_argument("--data", default=None, help=f"dataset directory (default ${data.DATA_DIR_ENV} or ./data)")
    p.add_argument("--subset", type=int, default=None, help="train on a seeded subset of this many examples")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--schedule", choices=("step", "constant"), default="step")
    p.add_argument("--augment", action="store_true", help="random crop (pad 4) and horizontal mirroring")
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")


def build_parser():
    parser = argparse.ArgumentParser(prog="ghostconv", description="Ghost module / GhostNet toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="write a network spec file")
    _add_arch_args(p)
    p.add_argument("--ghostify", action="store_true", help="replace convs by Ghost modules")
    p.add_argument("--s", type=int, default=2, help="ghost ratio")
    p.add_argument("--d", type=int, default=3, help="cheap depthwise kernel size")
    p.add_argument("--out", default=None, help="output path (default stdout)")

    p = sub.add_parser("analyze", help="per-layer parameter/FLOP report")
    _add_arch_args(p)
    p.add_argument("--input", type=_hw, default=None, help="input size HxW (default from spec)")
    p.add_argument("--csv", default=None)

    p = sub.add_parser("compare", help="baseline vs variant cost comparison")
    _add_arch_args(p, spec_action="append")
    p.add_argument("--input", type=_hw, default=None)
    p.add_argument("--csv", default=None)

    p = sub.add_parser("train", help="train a network and write history + checkpoints")
    _add_arch_args(p)
    _add_train_args(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("infer", help="classify one PGM/PPM image")
    _add_arch_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--top-k", type=int, default=5)

    p = sub.add_parser("sweep", help="ghost ratio / kernel size sweep")
    _add_arch_args(p)
    _add_train_args(p)
    p.add_argument("--param", choices=("s", "d"), required=True)
    p.add_argument("--values", type=_int_list, required=True)
    p.add_argument("--fixed-s", type=int, default=2)
    p.add_argument("--fixed-d", type=int, default=3)
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--csv", required=True)

    p = sub.add_parser("toyfit", help="fit depthwise kernels between feature-map pairs")
    _add_arch_args(p)
    p.add_argument("--source", help="source map (PGM) for an explicit pair")
    p.add_argument("--target", help="target map (PGM) for an explicit pair")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--dataset", choices=("mnist", "cifar10"), default="mnist")
    p.add_argument("--data", default=None)
    p.add_argument("--layer", type=int, default=2)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--ds", type=_int_list, default=list(toyfit.DEFAULT_DS))
    p.add_argument("--csv", required=True)
    p.add_argument("--pgm-dir", default=None, help="dump source/target/fitted maps here")
    return parser


def resolve_spec(args, spec_path=None):
    path = spec_path if spec_path is not None else args.spec
    if path:
        return arch.load_spec(path)
    if not args.arch:
        raise SpecError("give --spec FILE or --arch NAME")
    kwargs = {}
    if args.classes is not None:
        kwargs["num_classes"] = args.classes
    if args.input_size is not None:
        kwargs["input_size"] = args.input_size
    if args.arch in ("ghostnet", "vgg16"):
        kwargs["alpha"] = args.alpha
    elif args.alpha != 1.0:
        raise SpecError(f"--alpha is not supported for --arch {args.arch}")
    return arch.ARCHITECTURES[args.arch](**kwargs)


def cmd_build(args):
    spec = resolve_spec(args)
    if args.ghostify:
        spec = arch.ghostify(spec, s=args.s, d=args.d)
    text = arch.format_spec(spec)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_analyze(args):
    spec = resolve_spec(args)
    if args.input:
        spec = spec.with_input(*args.input)
    report = cost.count_spec(spec)
    if args.csv:
        cost.write_report_csv(args.csv, report)
    print(report.summary_line())
    print(report.detail_line())
    return EXIT_OK


def cmd_compare(args):
    paths = args.spec or []
    if len(paths) == 1 and args.arch:
        specs = [resolve_spec(args, ""), arch.load_spec(paths[0])]
    elif len(paths) == 2:
        specs = [arch.load_spec(p) for p in paths]
    else:
        raise SpecError("compare needs two --spec files (or --arch plus one --spec)")
    if args.input:
        specs = [s.with_input(*args.input) for s in specs]
    rows = cost.compare(*specs)
    if args.csv:
        cost.write_compare_csv(args.csv, rows)
    total = rows[-1]
    print(f"params_a={total[3]} params_b={total[4]} flops_a={total[5]} flops_b={total[6]}")
    print(f"params_ratio={total[7]!r} flops_ratio={total[8]!r}")
    return EXIT_OK


def _load_train_data(args, dtype):
    train_set, test_set = data.load_dataset(args.dataset, args.data, dtype=dtype)
    if args.subset:
        train_set = train_set.subset(args.subset, args.seed)
    return train_set, test_set


def _train_config(args):
    return TrainConfig(lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
                       batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
                       augment_crop=args.augment, augment_mirror=args.augment,
                       lr_schedule=args.schedule)


def cmd_train(args):
    spec = resolve_spec(args)
    dtype = np.dtype(args.dtype)
    train_set, test_set = _load_train_data(args, dtype)
    if train_set.input_shape != spec.input_shape:
        raise SpecError(f"dataset images are {train_set.input_shape}, spec expects {spec.input_shape}")
    net = materialize(spec, seed=args.seed, dtype=dtype)
    hist = train(net, train_set, _train_config(args), test_set, out_dir=args.out)
    arch.save_spec(os.path.join(args.out, "spec.txt"), spec)
    r = hist.final
    print(f"epochs={r.epoch} loss={r.loss:.6f} train_acc={r.train_acc:.4f} test_acc={r.test_acc:.4f}")
    return EXIT_OK


def cmd_infer(args):
    spec = resolve_spec(args)
    state = load_checkpoint(args.checkpoint)
    dtype = next(iter(state.values())).dtype if state else np.float32
    net = materialize(spec, seed=args.seed, dtype=dtype)
    extra = restore(net, state)
    raw = data.read_pnm(args.image)
    if raw.shape != spec.input_shape:
        raise SpecError(f"image is {raw.shape}, network expects {spec.input_shape}")
    mean = extra.get("__norm__.mean")
    if mean is not None:
        x, _, _ = data.normalize(raw[None], mean, extra["__norm__.std"], dtype)
    else:
        x = (raw[None] / 255.0).astype(dtype)
    probs = softmax(net.forward(x, mode="eval").astype(np.float64))[0]
    order = np.argsort(-probs, kind="stable")[: args.top_k]
    for cls in order:
        print(f"class={cls} prob={probs[cls]:.6f}")
    return EXIT_OK


def cmd_sweep(args):
    spec = resolve_spec(args)
    dtype = np.dtype(args.dtype)
    train_set = test_set = None
    if args.epochs > 0:
        train_set, test_set = _load_train_data(args, dtype)
    rows = sweep(spec, args.param, args.values, train_set, _train_config(args), test_set,
                 fixed_s=args.fixed_s, fixed_d=args.fixed_d, include_baseline=not args.no_baseline,
                 dtype=dtype)
    write_sweep_csv(args.csv, rows)
    for row in rows:
        print(",".join(str(v) for v in row))
    return EXIT_OK


def cmd_toyfit(args):
    if args.source or args.target:
        if not (args.source and args.target):
            raise SpecError("--source and --target must be given together")
        src = data.read_pnm(args.source).astype(np.float64)[0] / 255.0
        tgt = data.read_pnm(args.target).astype(np.float64)[0] / 255.0
        pairs = [toyfit.FeaturePair(src, tgt, f"{args.source}->{args.target}")]
    else:
        spec = resolve_spec(args)
        net = materialize(spec, seed=args.seed, dtype=np.float64)
        if args.checkpoint:
            restore(net, load_checkpoint(args.checkpoint))
        train_set, _ = data.load_dataset(args.dataset, args.data, dtype=np.float64)
        images = train_set.images[args.sample : args.sample + 1]
        pairs = toyfit.harvest_pairs(net, images, args.layer, args.top_k)
    rows = toyfit.mse_sweep(pairs, args.ds)
    toyfit.write_sweep_csv(args.csv, rows)
    table = toyfit.sweep_table(rows)
    for pid, mses in table.items():
        print(f"pair {pid} [{pairs[pid].tag}] " + " ".join(f"d={d}:{m:.6g}" for d, m in zip(sorted(args.ds), mses)))
    if args.pgm_dir:
        os.makedirs(args.pgm_dir, exist_ok=True)
        for pid, pair in enumerate(pairs):
            fits = toyfit.fit_sweep(pair, args.ds)
            data.write_pnm(os.path.join(args.pgm_dir, f"pair{pid}_source.pgm"), pair.source)
            data.write_pnm(os.path.join(args.pgm_dir, f"pair{pid}_target.pgm"), pair.target)
            for d, fit in fits.items():
                data.write_pnm(os.path.join(args.pgm_dir, f"pair{pid}_fit_d{d}.pgm"),
                               toyfit.apply_kernel(pair.source, fit.kernel))
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
    "train": cmd_train,
    "infer": cmd_infer,
    "sweep": cmd_sweep,
    "toyfit": cmd_toyfit,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = None
    if args.threads:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    try:
        return COMMANDS[args.command](args)
    except (SpecError, ShapeError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FormatError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
