"""Command-line entry point: ``hsitransfer <command> ...``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 a check ran
but did not pass.
"""

import argparse
import json
import sys
from pathlib import Path

import yaml

from hsitransfer import harness, hsio, records, stats
from hsitransfer.data import (
    BE_PRESETS,
    B_DEFAULT,
    SpectralCube,
    extract_samples,
    normalize_split,
    split_b,
    split_be,
)
from hsitransfer.errors import ConfigError, DataError, InsufficientSpectralExtent
from hsitransfer.nn import ArchitectureConfig, TrainConfig, checkpoint, fit, grad_check, init_params
from hsitransfer.reduce import LinkBudget, ReductionSpec, downlink_budget
from hsitransfer.synthetic import scene, transfer_task
from hsitransfer.transfer import fine_tune, reattach_head, score_test_set

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _load_samples(args):
    if not (args.cube and args.labels):
        raise ConfigError("--cube and --labels are required (directly or via the plan file)")
    return extract_samples(hsio.load_cube(args.cube), hsio.load_labels(args.labels))


def _reduction(args):
    if getattr(args, "window", None) and getattr(args, "bands", None):
        raise ConfigError("give either --window or --bands, not both")
    if getattr(args, "window", None):
        return ReductionSpec(window=args.window)
    if getattr(args, "bands", None):
        return ReductionSpec(target=args.bands)
    return None


def _reduce_samples(samples, reduction):
    return samples if reduction is None else samples.with_spectra(reduction.apply(samples.spectra))


def _read_mapping(path, what):
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{what} {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{what} {path}: expected a mapping")
    return raw


def _train_cfg(args):
    raw = dict(getattr(args, "train_inline", None) or {})
    if args.train_config:
        raw.update(_read_mapping(args.train_config, "train config"))
    try:
        return TrainConfig(**{**raw, "seed": args.seed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"training options: {exc}") from exc


def _merge_plan(args, parser):
    """Fill options from a YAML plan file; flags given explicitly win."""
    path = getattr(args, "plan", None)
    if not path:
        return args
    for key, value in _read_mapping(path, "plan").items():
        dest = key.replace("-", "_")
        if dest == "train":
            args.train_inline = value
            continue
        if dest in ("plan", "func", "parser", "command") or not hasattr(args, dest):
            raise ConfigError(f"plan {path}: unknown key {key!r}")
        if getattr(args, dest) == parser.get_default(dest):
            if dest in ("cube", "labels", "model", "train_config", "output"):
                value = str(Path(path).parent / value)
            setattr(args, dest, value)
    return args


def _be_counts(args):
    if args.be:
        return tuple(args.be)
    if args.preset:
        if args.preset not in BE_PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; known: {sorted(BE_PRESETS)}")
        return BE_PRESETS[args.preset]
    return None


# -- commands ------------------------------------------------------------------


def cmd_convert(args):
    if args.cube_csv:
        cube = hsio.cube_from_csv(args.cube_csv, args.height, args.width, args.bands)
        hsio.save_cube(cube, args.cube_out)
        print(f"wrote {args.cube_out}: {cube.height}x{cube.width}x{cube.bands}")
    if args.labels_csv:
        labels = hsio.labels_from_csv(args.labels_csv, args.height, args.width)
        hsio.save_labels(labels, args.labels_out)
        print(f"wrote {args.labels_out}: {labels.class_count} classes")
    return EXIT_OK


def cmd_reduce(args):
    spec = _reduction(args)
    if spec is None:
        raise ConfigError("reduce needs --window or --bands")
    cube = hsio.load_cube(args.input)
    out = SpectralCube(spec.apply(cube.data.reshape(-1, cube.bands)).reshape(
        cube.height, cube.width, -1))
    hsio.save_cube(out, args.output)
    print(f"{cube.bands} -> {out.bands} bands, wrote {args.output}")
    return EXIT_OK


def cmd_budget(args):
    bits, seconds = downlink_budget(LinkBudget(args.height, args.width, args.bands,
                                               args.bit_depth, args.rate))
    _emit({"bits": bits, "seconds": round(seconds, 6), "minutes": round(seconds / 60, 3)})
    return EXIT_OK


def cmd_split(args):
    samples = _load_samples(args)
    be = _be_counts(args)
    split = split_be(samples, *be, args.seed) if be else split_b(samples, tuple(args.b), args.seed)
    summary = {
        "seed": args.seed,
        "train": len(split.train),
        "validation": len(split.validation),
        "test": len(split.test),
        "train_per_class": split.train.histogram().tolist(),
    }
    if args.output:
        with open(args.output, "w") as f:
            f.write("y,x,class,part\n")
            for name, part in (("train", split.train), ("validation", split.validation),
                               ("test", split.test)):
                for (y, x), c in zip(part.origins.tolist(), part.classes.tolist()):
                    f.write(f"{y},{x},{c + 1},{name}\n")
        summary["output"] = args.output
    _emit(summary)
    return EXIT_OK


def cmd_pretrain(args):
    if not args.output:
        raise ConfigError("pretrain needs --out")
    samples = _reduce_samples(_load_samples(args), _reduction(args))
    be = _be_counts(args) or (20, 5)
    split = normalize_split(split_be(samples, *be, args.seed))[0]
    factory = getattr(ArchitectureConfig, args.family)
    arch = factory(args.blocks, split.class_count)
    cfg = _train_cfg(args)
    params, rep = fit(init_params(arch, split.bands, args.seed), split.train, split.validation, cfg)
    checkpoint.save(params, args.output)
    m, ms = score_test_set(params, split.test)
    _emit({"epochs": rep.epochs_run, "best_epoch": rep.best_epoch, "seconds": rep.seconds,
           "oa": m.oa, "aa": m.aa, "kappa": m.kappa, "infer_ms_per_sample": ms,
           "model": args.output})
    return EXIT_OK


def cmd_finetune(args):
    if not args.model:
        raise ConfigError("finetune needs --model")
    params, _ = checkpoint.load(args.model)
    samples = _reduce_samples(_load_samples(args), _reduction(args))
    split = normalize_split(split_b(samples, tuple(args.b), args.seed))[0]
    head = reattach_head(params, split.class_count, args.seed)
    tuned, rep = fine_tune(head, split, _train_cfg(args))
    if args.output:
        checkpoint.save(tuned, args.output)
    m, ms = score_test_set(tuned, split.test)
    _emit({"epochs": rep.epochs_run, "best_epoch": rep.best_epoch, "seconds": rep.seconds,
           "oa": m.oa, "aa": m.aa, "kappa": m.kappa, "infer_ms_per_sample": ms})
    return EXIT_OK


def cmd_run_grid(args):
    cfg = harness.load_grid_config(args.config)
    out = args.output or cfg.output
    if out is None:
        raise ConfigError("no output path: set 'output' in the config or pass --output")

    def progress(cell, recs):
        target, variant, arch, reduction = cell
        band = "full" if reduction is None else reduction.label()
        print(f"{target} {variant} {arch.family}/{arch.blocks} {band}: "
              f"{len(recs)} rows, status {recs[0].status}", file=sys.stderr)

    recs = harness.run_grid(cfg, out, progress=None if args.quiet else progress)
    print(f"wrote {len(recs)} rows to {out}")
    return EXIT_OK


def cmd_report(args):
    try:
        recs = records.read_csv(args.results)
    except OSError as exc:
        raise DataError(f"cannot read {args.results}: {exc}") from exc
    print(harness.format_report(harness.report(recs)), end="")
    return EXIT_OK


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise DataError(f"bad number list: {text!r}") from exc


def _runs(path, variant, dataset):
    try:
        rows = records.read_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: not a results CSV ({exc})") from exc
    return [r for r in rows
            if (variant is None or r.variant == variant) and (dataset is None or r.dataset == dataset)]


def cmd_wilcoxon(args):
    if args.a and args.b:
        if args.column not in records.METRIC_COLUMNS + records.TIME_COLUMNS:
            raise ConfigError(f"unknown column {args.column!r}")
        unit, x, y = harness.paired_values(_runs(args.a, args.variant_a, args.dataset),
                                           _runs(args.b, args.variant_b, args.dataset),
                                           args.column)
    elif args.x and args.y:
        unit, x, y = "given", _floats(args.x), _floats(args.y)
    else:
        raise ConfigError("give --a/--b results files, or --x/--y value lists")
    r = stats.wilcoxon_two_tailed(x, y, method=args.method)
    _emit({"pairs": len(x), "paired_by": unit, "n_effective": r.n_effective,
           "statistic": r.statistic, "p": r.p_two_tailed, "method": r.method})
    return EXIT_OK


def cmd_grad_check(args):
    factory = getattr(ArchitectureConfig, args.family)
    kw = {"kernels": args.kernels, "fc_sizes": tuple(args.fc)}
    if args.conv_len:
        kw["conv_len"] = args.conv_len
    if args.batch_norm is not None:
        kw["batch_norm"] = args.batch_norm
    arch = factory(args.blocks, args.classes, **kw)
    rep = grad_check(arch, args.input_bands, seed=args.seed, tolerance=args.tolerance)
    _emit({"max_rel_error": rep.max_rel_error, "worst_tensor": rep.worst_tensor,
           "checked": rep.checked, "passed": rep.passed})
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_synth(args):
    task = transfer_task(args.seed, args.source_per_class, args.target_per_class)
    out = Path(args.directory)
    out.mkdir(parents=True, exist_ok=True)
    for name, samples in (("source", task.source), ("target", task.target)):
        cube, labels = scene(samples)
        hsio.save_cube(cube, out / f"{name}.hsic")
        hsio.save_labels(labels, out / f"{name}.hsil")
    print(f"wrote source/target cubes and labels to {out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _add_data(p):
    p.add_argument("--cube", help=".hsic cube")
    p.add_argument("--labels", help=".hsil label map")
    p.add_argument("--seed", type=int, default=0)


def _add_reduction(p):
    p.add_argument("--window", type=int, help="average every N consecutive bands")
    p.add_argument("--bands", type=int, help="reduce to exactly N bands")


def build_parser():
    ap = argparse.ArgumentParser(prog="hsitransfer", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="CSV cube/labels to .hsic/.hsil")
    p.add_argument("--cube-csv")
    p.add_argument("--cube-out")
    p.add_argument("--labels-csv")
    p.add_argument("--labels-out")
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--bands", type=int)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("reduce", help="band-average a cube")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    _add_reduction(p)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("budget", help="downlink volume and time")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--bit-depth", type=int, required=True)
    p.add_argument("--rate-bps", "--rate", dest="rate", type=float, required=True,
                   help="link rate in bits/s")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("split", help="draw a balanced B(E) or B split")
    _add_data(p)
    p.add_argument("--preset", help=f"B(E) preset: {', '.join(sorted(BE_PRESETS))}")
    p.add_argument("--be", type=int, nargs=2, metavar=("TRAIN", "VAL"))
    p.add_argument("--b", type=int, nargs=2, metavar=("TRAIN", "VAL"), default=list(B_DEFAULT))
    p.add_argument("--output", help="write y,x,class,part rows here")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pretrain", help="train a full network on a B(E) split")
    _add_data(p)
    _add_reduction(p)
    p.add_argument("--family", choices=["cnn1d", "ptcnn"], default="cnn1d")
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--preset")
    p.add_argument("--be", type=int, nargs=2, metavar=("TRAIN", "VAL"))
    p.add_argument("--train-config", help="YAML/JSON mapping of training options")
    p.add_argument("--plan", help="YAML mapping of any of these options, plus a 'train' mapping")
    p.add_argument("--out", "--output", dest="output", help="checkpoint path")
    p.set_defaults(func=cmd_pretrain, parser=p)

    p = sub.add_parser("finetune", help="new head on a pretrained extractor, trained on a B split")
    _add_data(p)
    _add_reduction(p)
    p.add_argument("--target", dest="plan", help="YAML mapping of any of these options")
    p.add_argument("--model")
    p.add_argument("--b", type=int, nargs=2, metavar=("TRAIN", "VAL"), default=list(B_DEFAULT))
    p.add_argument("--train-config")
    p.add_argument("--out", "--output", dest="output")
    p.set_defaults(func=cmd_finetune, parser=p)

    p = sub.add_parser("run-grid", help="run a config-defined experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", "--output", dest="output")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run_grid)

    p = sub.add_parser("report", help="summarize a results CSV")
    p.add_argument("results")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("wilcoxon", help="paired two-tailed signed-rank test")
    p.add_argument("--a", help="results CSV of the first arm")
    p.add_argument("--b", help="results CSV of the second arm (may be the same file)")
    p.add_argument("--variant-a", help="keep only this variant from --a")
    p.add_argument("--variant-b", help="keep only this variant from --b")
    p.add_argument("--column", default="kappa")
    p.add_argument("--dataset")
    p.add_argument("--x", help="comma-separated values")
    p.add_argument("--y", help="comma-separated values")
    p.add_argument("--method", choices=["auto", "exact", "approx"], default="auto")
    p.set_defaults(func=cmd_wilcoxon)

    p = sub.add_parser("grad-check", help="finite-difference check of backprop")
    p.add_argument("--family", choices=["cnn1d", "ptcnn"], default="cnn1d")
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--input-bands", type=int, default=16)
    p.add_argument("--kernels", type=int, default=4)
    p.add_argument("--conv-len", type=int)
    p.add_argument("--fc", type=int, nargs="+", default=[6, 5])
    p.add_argument("--batch-norm", type=lambda s: s.lower() in ("1", "true", "yes"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("synth", help="write a synthetic source/target scene pair")
    p.add_argument("directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source-per-class", type=int, default=400)
    p.add_argument("--target-per-class", type=int, default=300)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "parser", None) is not None:
            _merge_plan(args, args.parser)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InsufficientSpectralExtent, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
