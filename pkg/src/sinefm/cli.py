"""Command-line entry point: ``sinefm <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 validation or format error,
3 numeric failure (non-finite loss, checksum mismatch, failed gradient check).
"""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import cost, network, seedpack
from .errors import ChecksumError, NumericError, SineFMError
from .gradcheck import layer_gradcheck
from .rng import derive_seed
from .train import (STREAM_DATA, STREAM_TRANSFORMS, DatasetSpec, OptimConfig, SWEEP_AXES,
                    ablate_families, evaluate_dataset, load_dataset, sweep_hyperparams, train)
from .transforms import HyperBounds, TransformFamily, quantities, sample_hyperparams

log = logging.getLogger("sinefm")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- shared flag groups ----------------------------------------------------------------

def _add_seed(p):
    p.add_argument("--seed", type=int, default=0,
                   help="master seed; init/transforms/data/shuffle streams are derived from it")


def _add_convert(p, default_on=False):
    if not default_on:
        p.add_argument("--sinefm", action="store_true",
                       help="convert standard convs wider than --cs to SineFM layers first")
    p.add_argument("--cs", type=int, default=16, help="seed channels per SineFM layer (default 16)")
    p.add_argument("--fanout", type=int, default=5, help="transforms per seed channel (default 5)")
    p.add_argument("--family", default="sinusoidal",
                   help="transform family: " + ", ".join(f.label for f in TransformFamily))


def _add_data(p, default_kind="synth-class"):
    p.add_argument("--data", default=default_kind,
                   choices=["synth-class", "synth-seg", "image-folder"], help="dataset kind")
    p.add_argument("--data-path", help="root directory for image-folder (images/ + masks/)")
    p.add_argument("--train-count", type=int, default=None, help="training samples")
    p.add_argument("--test-count", type=int, default=None, help="test samples")
    p.add_argument("--noise", type=float, default=0.1, help="Gaussian pixel noise (default 0.1)")
    p.add_argument("--size", type=int, default=None, help="image side for synthetic data")


def _add_optim(p, epochs=20):
    p.add_argument("--optim", default="adamw", choices=["adamw", "sgd-momentum"])
    p.add_argument("--lr", type=float, default=6e-4, help="initial learning rate (default 6e-4)")
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--no-flips", action="store_true", help="disable random flip augmentation")


def _add_plot(p):
    p.add_argument("--plot-dir", help="also render figures (PNG) into this directory")


def _arch_arg(p, required=True, default=None):
    p.add_argument("--arch", required=required, default=default,
                   help="builtin (" + ", ".join(network.BUILTINS) + ") or descriptor file")


def _descriptor(args, hw=None):
    if args.arch in network.BUILTINS and hw is not None:
        return network.BUILTINS[args.arch](hw)
    return network.load_descriptor(args.arch)


def _data_spec(args, seed):
    defaults = {"synth-class": (512, 256), "synth-seg": (256, 64), "image-folder": (0, 8)}
    tr, te = defaults[args.data]
    return DatasetSpec(args.data, args.train_count if args.train_count is not None else tr,
                       args.test_count if args.test_count is not None else te,
                       args.noise, derive_seed(seed, STREAM_DATA), args.size, args.data_path)


def _optim(args):
    return OptimConfig(args.optim, args.lr, args.epochs, args.batch, flips=not args.no_flips)


def _default_arch(args):
    return "tiny-unet" if args.data in ("synth-seg", "image-folder") else "tiny-vgg"


def _arch_for_data(args):
    arch = args.arch or _default_arch(args)
    if arch in network.BUILTINS:
        hw = args.size or (16 if args.data == "synth-class" else 32)
        return network.BUILTINS[arch](hw)
    return network.load_descriptor(arch)


def _write(text, out):
    if out:
        Path(out).write_text(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


# -- subcommands -----------------------------------------------------------------------------

def cmd_train(args):
    desc = _arch_for_data(args)
    if args.sinefm:
        desc = network.convert_to_sinefm(desc, args.cs, args.fanout, args.family,
                                         derive_seed(args.seed, STREAM_TRANSFORMS))
    data = load_dataset(_data_spec(args, args.seed))
    model = network.build(desc, seed=args.seed)
    history = train(model, data, _optim(args), seed=args.seed, log_every=1)
    Path(args.out).write_bytes(seedpack.pack(model))
    log.info("wrote %s", args.out)
    ev = evaluate_dataset(model, data)
    if args.history:
        Path(args.history).write_text(history.to_csv())
    sys.stdout.write(history.to_csv())
    sys.stdout.write(_metrics_csv(ev.metrics))
    if args.plot_dir:
        from .plotting import plot_history
        plot_history(history, Path(args.plot_dir) / "history.png")
    return EXIT_OK


def _metrics_csv(metrics):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for k, v in metrics.items():
        if isinstance(v, list):
            for i, x in enumerate(v):
                w.writerow([f"{k}[{i}]", repr(x)])
        else:
            w.writerow([k, repr(v)])
    return buf.getvalue()


def cmd_eval(args):
    model = seedpack.unpack(Path(args.pack).read_bytes())
    data = load_dataset(_data_spec(args, args.seed))
    ev = evaluate_dataset(model, data, args.split, threads=args.threads)
    sys.stdout.write(_metrics_csv(ev.metrics))
    sys.stdout.write("# confusion (rows = truth)\n")
    for row in ev.confusion:
        sys.stdout.write(",".join(str(int(v)) for v in row) + "\n")
    return EXIT_OK


def cmd_flops(args):
    hw = tuple(args.hw) if args.hw else None
    desc = _descriptor(args, hw[0] if hw and hw[0] == hw[1] else None)
    if hw is None:
        hw = desc.input_shape[1:]
    report = cost.model_cost(desc, hw)
    pair = None
    if args.compare_standard:
        standard = network.to_standard(desc)
        if standard == desc:
            converted = network.convert_to_sinefm(desc, args.cs, args.fanout, args.family, args.seed)
        else:
            converted = desc
        std_report = cost.model_cost(standard, hw)
        sfm_report = cost.model_cost(converted, hw)
        pair = (std_report, sfm_report)
        report = sfm_report
    if args.json:
        payload = report.to_dict()
        if pair:
            payload = {"standard": pair[0].to_dict(), "sinefm": pair[1].to_dict()}
            rp, rf = cost.compare(pair[1], pair[0])
            payload["ratio"] = {"params": rp, "flops": rf}
        sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    elif args.text:
        sys.stdout.write(report.to_text() if not pair else
                         "## standard\n" + pair[0].to_text() + "## sinefm\n" + pair[1].to_text())
    else:
        if pair:
            sys.stdout.write(_compare_csv(*pair))
        else:
            sys.stdout.write(report.to_csv())
    if args.plot_dir and pair:
        from .plotting import plot_cost_comparison
        plot_cost_comparison(pair[0], pair[1], Path(args.plot_dir) / "cost_comparison.png",
                             title=f"{args.arch} at {hw[0]}x{hw[1]}")
    return EXIT_OK


def _compare_csv(standard, sinefm):
    buf = io.StringIO()
    buf.write(f"# {standard.table.describe()}; input {standard.input_hw[0]}x{standard.input_hw[1]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["layer", "params", "flops", "standard_params", "standard_flops"])
    by_index = {r.layer.split(":")[0]: r for r in standard.rows}
    for r in sinefm.rows:
        s = by_index[r.layer.split(":")[0]]
        w.writerow([r.layer, r.params, r.flops, s.params, s.flops])
    w.writerow(["total", sinefm.total_params, sinefm.total_flops,
                standard.total_params, standard.total_flops])
    rp, rf = cost.compare(sinefm, standard)
    w.writerow(["ratio", repr(rp), repr(rf), "", ""])
    return buf.getvalue()


def cmd_pack(args):
    desc = network.load_descriptor(args.arch)
    if args.sinefm:
        desc = network.convert_to_sinefm(desc, args.cs, args.fanout, args.family,
                                         derive_seed(args.seed, STREAM_TRANSFORMS))
    model = network.build(desc, seed=args.seed)
    if args.weights:
        with np.load(args.weights) as state:
            model.load_state_dict(dict(state))
    blob = seedpack.pack(model)
    Path(args.out).write_bytes(blob)
    rep = seedpack.size_report(desc)
    sys.stdout.write(f"bytes,{len(blob)}\nfull_conv_bytes,{rep.full_conv_bytes}\nratio,{rep.ratio!r}\n")
    return EXIT_OK


def cmd_unpack(args):
    blob = Path(args.input).read_bytes()
    if args.hex_dump:
        sys.stdout.write(seedpack.hex_dump(blob))
    model = seedpack.unpack(blob)
    if args.out:
        np.savez(args.out, **model.state_dict())
        log.info("wrote %s", args.out)
    if args.arch_out:
        Path(args.arch_out).write_text(model.descriptor.to_text())
    if not args.hex_dump:
        sys.stdout.write(model.descriptor.to_text())
    return EXIT_OK


def cmd_gradcheck(args):
    fams = list(TransformFamily) if args.family == "all" else [TransformFamily.parse(args.family)]
    worst = 0.0
    sys.stdout.write("family,max_rel_error\n")
    for fam in fams:
        err = layer_gradcheck(fam, seed=args.seed, eps=args.eps)
        worst = max(worst, err)
        sys.stdout.write(f"{fam.label},{err!r}\n")
    if worst >= args.tol:
        log.error("gradient check failed: %.3g >= %.3g", worst, args.tol)
        return EXIT_NUMERIC
    return EXIT_OK


def _families(text):
    if text == "all":
        return list(TransformFamily)
    return [TransformFamily.parse(t) for t in text.split(",")]


def cmd_ablate(args):
    desc = _arch_for_data(args)
    data = load_dataset(_data_spec(args, args.seed))
    table = ablate_families(desc, _families(args.families), data, _optim(args), args.trials,
                            args.seed, args.cs, args.fanout)
    _write(table.to_csv(), args.out)
    for fam, (mean, std) in table.ranking():
        log.info("%-24s %.4f +/- %.4f", fam, mean, std)
    if args.plot_dir:
        from .plotting import plot_ablation
        plot_ablation(table, Path(args.plot_dir) / "ablation.png")
    return EXIT_OK


def _sweep_values(axis, text):
    values = []
    for tok in text.split(","):
        if axis.endswith("_bounds"):
            lo, hi = tok.split(":")
            values.append((float(lo), float(hi)))
        else:
            values.append(int(tok))
    return values


def cmd_sweep(args):
    desc = _arch_for_data(args)
    data = load_dataset(_data_spec(args, args.seed))
    try:
        values = _sweep_values(args.axis, args.values)
    except ValueError as exc:
        raise UsageError(f"bad --values for {args.axis}: {exc}") from None
    curve = sweep_hyperparams(args.axis, values, desc, data, _optim(args), args.seed,
                              args.family, args.cs, args.fanout)
    _write(curve.to_csv(), args.out)
    if args.plot_dir:
        from .plotting import plot_sweep
        plot_sweep(curve, Path(args.plot_dir) / f"sweep_{args.axis}.png")
    return EXIT_OK


def cmd_sample(args):
    overrides = {}
    for item in args.bound or []:
        name, _, rng = item.partition("=")
        lo, _, hi = rng.partition(":")
        try:
            overrides[name] = HyperBounds(float(lo), float(hi))
        except ValueError as exc:
            raise UsageError(f"bad --bound {item!r}: {exc}") from None
    spec = sample_hyperparams(args.seed, args.family, args.count, overrides)
    names = quantities(spec.family)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", *names])
    for i in range(spec.count):
        w.writerow([i, *(repr(spec.params[q][i].item()) for q in names)])
    sys.stdout.write(buf.getvalue())
    if args.plot_dir:
        from .plotting import plot_transforms
        plot_transforms(Path(args.plot_dir) / "transforms.png", seed=args.seed)
    return EXIT_OK


def make_parser():
    parser = _Parser(prog="sinefm", description="SineFM layers, seed packs, cost model and "
                                                 "desk-scale experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--threads", type=int, default=1, help="threads for evaluation only")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="SUBCOMMAND")

    p = sub.add_parser("train", help="train a model and write a SeedPack")
    _arch_arg(p, required=False)
    _add_convert(p)
    _add_data(p)
    _add_optim(p)
    _add_seed(p)
    p.add_argument("--out", required=True, help="SeedPack output path")
    p.add_argument("--history", help="write per-epoch history CSV here")
    _add_plot(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a SeedPack on a dataset")
    p.add_argument("--pack", required=True)
    _add_data(p)
    _add_seed(p)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="parameter and FLOP report")
    _arch_arg(p)
    p.add_argument("--hw", type=int, nargs=2, metavar=("H", "W"), help="input height and width")
    p.add_argument("--compare-standard", action="store_true",
                   help="report SineFM and standard variants side by side with a ratio row")
    _add_convert(p, default_on=True)
    _add_seed(p)
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--json", action="store_true", help="JSON instead of CSV")
    fmt.add_argument("--text", action="store_true", help="aligned text instead of CSV")
    _add_plot(p)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("pack", help="build (and optionally load weights into) a model, write a SeedPack")
    _arch_arg(p)
    p.add_argument("--weights", help=".npz state (keys '<layer>.<name>') to load before packing")
    _add_convert(p)
    _add_seed(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("unpack", help="verify a SeedPack and export its weights")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", help="write weights as .npz")
    p.add_argument("--arch-out", help="write the embedded descriptor here")
    p.add_argument("--hex-dump", action="store_true", help="print section offsets and header bytes")
    p.set_defaults(func=cmd_unpack)

    p = sub.add_parser("gradcheck", help="finite-difference check of a SineFM layer")
    p.add_argument("--family", default="sinusoidal", help="family label or 'all'")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    _add_seed(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="transform-family ablation, CSV table")
    _arch_arg(p, required=False)
    p.add_argument("--families", default="all", help="comma list of families or 'all'")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--cs", type=int, default=16)
    p.add_argument("--fanout", type=int, default=5)
    _add_data(p)
    _add_optim(p, epochs=5)
    _add_seed(p)
    p.add_argument("--out", help="CSV output path (default stdout)")
    _add_plot(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="hyperparameter sweep, CSV curve")
    _arch_arg(p, required=False)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="comma list; bounds axes take lo:hi pairs, e.g. 0:1,1:2")
    p.add_argument("--family", default="sinusoidal")
    p.add_argument("--cs", type=int, default=16)
    p.add_argument("--fanout", type=int, default=5)
    _add_data(p)
    _add_optim(p, epochs=5)
    _add_seed(p)
    p.add_argument("--out", help="CSV output path (default stdout)")
    _add_plot(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sample-hparams", help="print the deterministic hyperparameter draw")
    p.add_argument("--family", default="sinusoidal")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--bound", action="append", metavar="NAME=LO:HI",
                   help="override a range, e.g. omega=0:1 (repeatable)")
    _add_seed(p)
    _add_plot(p)
    p.set_defaults(func=cmd_sample)
    return parser


def run(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ChecksumError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except NumericError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except (SineFMError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
