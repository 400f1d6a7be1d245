"""Config-driven experiment grids and their summary report."""

import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from hsitransfer import hsio, stats
from hsitransfer.data import BE_PRESETS, B_DEFAULT, extract_samples
from hsitransfer.errors import ConfigError, DataError
from hsitransfer.nn.arch import ArchitectureConfig
from hsitransfer.nn.optim import TrainConfig
from hsitransfer.records import FAILED, OK, ExperimentRecord, write_csv
from hsitransfer.reduce import ReductionSpec
from hsitransfer.transfer import (
    B,
    BE,
    DatasetPool,
    DatasetSpec,
    ex_variant,
    parse_variant,
    run_variant,
)

# every optimizer field must be spelled out; only the seed comes from the grid
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")
ARCH_KEYS = {f.name for f in fields(ArchitectureConfig)} - {"class_count"}


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    cube: Path
    labels: Path
    be_counts: tuple
    b_counts: object


@dataclass(frozen=True)
class GridConfig:
    datasets: tuple
    targets: tuple
    architectures: tuple
    reductions: tuple
    variants: tuple
    seeds: tuple
    train: TrainConfig
    finetune: TrainConfig
    output: Path | None = None
    workers: int = 1

    def dataset(self, name):
        for d in self.datasets:
            if d.name == name:
                return d
        raise ConfigError(f"unknown dataset {name!r}")


def _require(mapping, key, where):
    if key not in mapping:
        raise ConfigError(f"{where}: missing key {key!r}")
    return mapping[key]


def _pair(value, where):
    if not (isinstance(value, (list, tuple)) and len(value) == 2
            and all(isinstance(v, int) and v >= 0 for v in value)):
        raise ConfigError(f"{where}: expected [train, val] non-negative integers, got {value!r}")
    return tuple(value)


def _train_cfg(raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(raw) - set(TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = [k for k in TRAIN_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")
    try:
        return TrainConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _seeds(raw):
    if isinstance(raw, dict):
        seeds = tuple(range(int(_require(raw, "start", "seeds")), int(_require(raw, "stop", "seeds"))))
    elif isinstance(raw, list) and all(isinstance(s, int) for s in raw):
        seeds = tuple(raw)
    else:
        raise ConfigError("seeds: expected a list of integers or {start, stop}")
    if not seeds:
        raise ConfigError("seeds: range is empty")
    return seeds


def parse_reduction(item):
    """``full`` -> None, an integer -> target band count, ``w<N>`` -> window of N."""
    if item == "full":
        return None
    try:
        if isinstance(item, str) and item.startswith("w"):
            return ReductionSpec(window=int(item[1:]))
        return ReductionSpec(target=int(item))
    except ValueError as exc:
        raise ConfigError(f"reductions: bad entry {item!r}") from exc


def _architectures(raw):
    if not isinstance(raw, list) or not raw:
        raise ConfigError("architectures: expected a non-empty list")
    out = []
    for i, entry in enumerate(raw):
        entry = dict(entry)
        unknown = set(entry) - ARCH_KEYS
        if unknown:
            raise ConfigError(f"architectures[{i}]: unknown keys {sorted(unknown)}")
        family = _require(entry, "family", f"architectures[{i}]")
        if family not in ("cnn1d", "ptcnn"):
            raise ConfigError(f"architectures[{i}]: unknown family {family!r}")
        del entry["family"]
        blocks = entry.pop("blocks", 1)
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in entry.items()}
        factory = getattr(ArchitectureConfig, family)
        for b in (blocks if isinstance(blocks, list) else [blocks]):
            try:
                out.append(factory(int(b), 2, **kw))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"architectures[{i}]: {exc}") from exc
    return tuple(out)


def grid_config_from_dict(raw, base=Path(".")):
    """Validate a parsed YAML/JSON mapping. Relative paths resolve against ``base``."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at top level")
    known = {"datasets", "targets", "architectures", "reductions", "variants", "seeds",
             "train", "finetune", "output", "workers"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    base = Path(base)

    datasets = []
    for name, d in (_require(raw, "datasets", "config") or {}).items():
        where = f"datasets.{name}"
        cube = base / _require(d, "cube", where)
        labels = base / _require(d, "labels", where)
        for p in (cube, labels):
            if not p.is_file():
                raise ConfigError(f"{where}: file not found: {p}")
        be = d.get("be", name if name in BE_PRESETS else None)
        if be is None:
            raise ConfigError(f"{where}: no B(E) split given and no preset named {name!r}")
        be = BE_PRESETS[be] if isinstance(be, str) else _pair(be, f"{where}.be")
        b = d.get("b", list(B_DEFAULT))
        if isinstance(b, dict):
            b = {int(k): _pair(v, f"{where}.b[{k}]") for k, v in b.items()}
        else:
            b = _pair(b, f"{where}.b")
        datasets.append(DatasetEntry(str(name), cube, labels, be, b))
    if not datasets:
        raise ConfigError("datasets: at least one dataset is required")
    names = [d.name for d in datasets]

    targets = tuple(raw.get("targets", names))
    for t in targets:
        if t not in names:
            raise ConfigError(f"targets: unknown dataset {t!r}")

    variants = []
    for v in _require(raw, "variants", "config"):
        if v == "Ex(*)":
            variants.append(v)
            continue
        try:
            kind, src = parse_variant(v)
        except ConfigError as exc:
            raise ConfigError(f"variants: {exc}") from exc
        if kind == "Ex" and src not in names:
            raise ConfigError(f"variants: {v} names unknown dataset {src!r}")
        variants.append(v)

    train = _train_cfg(_require(raw, "train", "config"), "train")
    finetune = _train_cfg(raw["finetune"], "finetune") if "finetune" in raw else train
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    output = raw.get("output")
    return GridConfig(
        datasets=tuple(datasets),
        targets=targets,
        architectures=_architectures(_require(raw, "architectures", "config")),
        reductions=tuple(parse_reduction(r) for r in raw.get("reductions", ["full"])),
        variants=tuple(variants),
        seeds=_seeds(_require(raw, "seeds", "config")),
        train=train,
        finetune=finetune,
        output=None if output is None else base / output,
        workers=workers,
    )


def load_grid_config(path):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    return grid_config_from_dict(raw, path.parent)


def cells(cfg):
    """Yield (target, variant, arch, reduction) for every grid cell.

    ``Ex(*)`` expands to every other dataset; Ex cells whose source is the
    target are skipped, as on the diagonal of a transfer table.
    """
    names = [d.name for d in cfg.datasets]
    for target in cfg.targets:
        variants = []
        for v in cfg.variants:
            if v == "Ex(*)":
                variants.extend(ex_variant(n) for n in names if n != target)
            elif parse_variant(v) != ("Ex", target):
                variants.append(v)
        for arch in cfg.architectures:
            for reduction in cfg.reductions:
                for variant in dict.fromkeys(variants):
                    yield target, variant, arch, reduction


def _load_pool(cfg, needed):
    specs = []
    for name in needed:
        d = cfg.dataset(name)
        samples = extract_samples(hsio.load_cube(d.cube), hsio.load_labels(d.labels))
        specs.append(DatasetSpec(name, samples, d.be_counts, d.b_counts))
    return DatasetPool(specs)


def _needed(target, variant):
    kind, src = parse_variant(variant)
    return [target] if kind != "Ex" else [target, src]


def _run_cell(args):
    cfg, (target, variant, arch, reduction) = args
    try:
        pool = _load_pool(cfg, _needed(target, variant))
        return run_variant(variant, pool, target, arch, reduction, cfg.seeds, cfg.train,
                           cfg.finetune)
    except (DataError, ValueError) as exc:
        band = "full" if reduction is None else reduction.label()
        return [ExperimentRecord(seed=-1, dataset=target, variant=variant, family=arch.family,
                                 blocks=arch.blocks, band_count=band,
                                 status=FAILED)]


def run_grid(cfg, output=None, progress=None):
    """Run every cell for every seed and write the sorted CSV to ``output``.

    A failing cell yields one ``failed`` marker row and the grid continues.
    Returns the sorted records.
    """
    jobs = [(cfg, cell) for cell in cells(cfg)]
    records = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            for recs in ex.map(_run_cell, jobs):
                records.extend(recs)
    else:
        for job in jobs:
            recs = _run_cell(job)
            if progress:
                progress(job[1], recs)
            records.extend(recs)
    records.sort(key=ExperimentRecord.sort_key)
    output = output or cfg.output
    if output is not None:
        write_csv(records, output)
    return records


# -- report --------------------------------------------------------------------


def _config_key(r):
    return (r.dataset, r.family, r.blocks, r.band_count)


def _is_transfer(variant):
    return variant.startswith("Ex(")


@dataclass
class Report:
    means: list
    best: dict
    ranks: dict
    wilcoxon: dict
    pairing: str | None
    skipped: int


def paired_values(rows_a, rows_b, column="kappa"):
    """Pair ``column`` across two run sets.

    Rows pair by seed when both sets cover exactly one shared configuration,
    otherwise per-configuration means pair by cell. Returns (unit, xs, ys).
    """
    def index(rows):
        by = defaultdict(dict)
        for r in rows:
            v = getattr(r, column)
            if r.status == OK and v is not None:
                by[_config_key(r)][r.seed] = v
        return by

    ia, ib = index(rows_a), index(rows_b)
    shared = sorted(set(ia) & set(ib))
    if len(shared) == 1:
        va, vb = ia[shared[0]], ib[shared[0]]
        seeds = sorted(set(va) & set(vb))
        return "seed", [va[s] for s in seeds], [vb[s] for s in seeds]
    xs = [float(np.mean(list(ia[k].values()))) for k in shared]
    ys = [float(np.mean(list(ib[k].values()))) for k in shared]
    return "cell", xs, ys


def report(records):
    """Means per (configuration, variant), best-variant flags, ranks and Wilcoxon p-values."""
    records = list(records)
    if not records:
        raise DataError("no records to report")
    ok = [r for r in records if r.status == OK and r.kappa is not None]
    if not ok:
        raise DataError("no successful records to report")
    means = stats.aggregate([vars(r) for r in ok])

    table = defaultdict(dict)
    for row in means:
        table[(row["dataset"], row["family"], row["blocks"], row["band_count"])][row["variant"]] = row["kappa"]
    best = {}
    for key, by_variant in table.items():
        top = max(by_variant.values())
        winners = sorted(v for v, k in by_variant.items() if k == top)
        best[key] = (winners, "transfer" if any(map(_is_transfer, winners)) else "non-transfer")

    variants = sorted({r.variant for r in ok})
    if len(variants) == 1:
        ranks = {variants[0]: 1.0}
    else:
        ranks = stats.average_rank(table)

    wilcoxon, units = {}, set()
    for i, a in enumerate(variants):
        for b in variants[i + 1:]:
            unit, xs, ys = paired_values([r for r in ok if r.variant == a],
                                         [r for r in ok if r.variant == b])
            if len(xs) < 2:
                continue
            units.add(unit)
            wilcoxon[(a, b)] = stats.wilcoxon_two_tailed(xs, ys)
    pairing = "/".join(sorted(units)) if units else None
    return Report(means, best, ranks, wilcoxon, pairing, len(records) - len(ok))


def _fmt(v, digits=4):
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


def format_report(rep):
    lines = ["== mean metrics per configuration =="]
    lines.append("dataset\tfamily\tblocks\tbands\tvariant\tn\tOA\tAA\tkappa\tpretrain_s\tfinetune_s\tinfer_ms")
    for row in sorted(rep.means, key=lambda r: (r["dataset"], r["family"], r["blocks"],
                                                r["band_count"], r["variant"])):
        lines.append("\t".join([
            row["dataset"], row["family"], str(row["blocks"]), row["band_count"], row["variant"],
            str(row["count"]), _fmt(row["oa"]), _fmt(row["aa"]), _fmt(row["kappa"]),
            _fmt(row["pretrain_s"], 2), _fmt(row["finetune_s"], 2),
            _fmt(row["infer_ms_per_sample"], 4),
        ]))
    lines.append("")
    lines.append("== best variant per configuration (by mean kappa) ==")
    for key in sorted(rep.best):
        winners, kind = rep.best[key]
        lines.append("\t".join(map(str, key)) + f"\t{','.join(winners)}\t{kind}")
    lines.append("")
    lines.append("== average rank (1 = best) ==")
    for v, r in sorted(rep.ranks.items(), key=lambda kv: (kv[1], kv[0])):
        lines.append(f"{v}\t{r:.3f}")
    if rep.wilcoxon:
        lines.append("")
        lines.append(f"== pairwise Wilcoxon signed-rank, two-tailed (paired by {rep.pairing}) ==")
        lines.append("a\tb\tn\tW\tp\tmethod")
        for (a, b), w in sorted(rep.wilcoxon.items()):
            lines.append(f"{a}\t{b}\t{w.n_effective}\t{w.statistic:g}\t{w.p_two_tailed:.6g}\t{w.method}")
    if rep.skipped:
        lines.append("")
        lines.append(f"({rep.skipped} infeasible, mismatched or failed rows not averaged)")
    return "\n".join(lines) + "\n"


__all__ = [
    "B",
    "BE",
    "GridConfig",
    "Report",
    "cells",
    "format_report",
    "grid_config_from_dict",
    "load_grid_config",
    "paired_values",
    "parse_reduction",
    "report",
    "run_grid",
]
