"""Pretrain on a source dataset, swap the classifier head, fine-tune on the target.

The feature extractor is every conv block; the classifier is every fully
connected layer plus softmax. During fine-tuning the extractor, including
its BN running statistics, is frozen.
"""

from dataclasses import dataclass, replace

from hsitransfer import stats
from hsitransfer.data import B_DEFAULT, normalize_split, split_b, split_be
from hsitransfer.errors import ConfigError, DataError, InsufficientSpectralExtent
from hsitransfer.nn import model as _model
from hsitransfer.nn.arch import shape_trace
from hsitransfer.nn.optim import TrainConfig
from hsitransfer.nn.train import fit, predict_time
from hsitransfer.records import BAND_MISMATCH, INFEASIBLE, ExperimentRecord

BE = "B(E)"
B = "B"


def ex_variant(source):
    return f"Ex({source})"


def parse_variant(name):
    """Return (kind, source) with kind in {"B(E)", "B", "Ex"}."""
    if name in (BE, B):
        return name, None
    if name.startswith("Ex(") and name.endswith(")") and len(name) > 4:
        return "Ex", name[3:-1]
    raise ConfigError(f"unknown variant {name!r}")


@dataclass(frozen=True)
class DatasetSpec:
    """A labeled sample pool plus its split recipes.

    ``be_counts`` is the balanced (train, val) per class for the large
    division; ``b_counts`` is a (train, val) tuple or a class -> tuple map
    for the small one.
    """

    name: str
    samples: object
    be_counts: tuple = (20, 5)
    b_counts: object = B_DEFAULT

    def reduced(self, reduction):
        if reduction is None:
            return self.samples
        return self.samples.with_spectra(reduction.apply(self.samples.spectra))

    def reduced_bands(self, reduction):
        b = self.samples.bands
        return b if reduction is None else reduction.output_bands(b)


@dataclass(frozen=True)
class TransferPlan:
    source: DatasetSpec
    target: DatasetSpec
    arch: object
    reduction: object = None
    train_cfg: TrainConfig = TrainConfig()
    finetune_cfg: TrainConfig | None = None

    def __post_init__(self):
        bs = self.source.reduced_bands(self.reduction)
        bt = self.target.reduced_bands(self.reduction)
        if bs != bt:
            raise DataError(
                f"source has {bs} bands and target {bt} after reduction; they must match"
            )

    @property
    def bands(self):
        return self.source.reduced_bands(self.reduction)

    def finetune(self):
        return self.finetune_cfg or self.train_cfg


def source_split(plan, seed):
    samples = plan.source.reduced(plan.reduction)
    split = split_be(samples, *plan.source.be_counts, seed)
    return normalize_split(split)[0]


def target_split(plan, seed):
    samples = plan.target.reduced(plan.reduction)
    return normalize_split(split_b(samples, plan.target.b_counts, seed))[0]


def pretrain(plan, seed=None, split=None):
    """Train extractor and source head end to end on the source B(E) division."""
    cfg = plan.train_cfg if seed is None else replace(plan.train_cfg, seed=seed)
    split = split or source_split(plan, cfg.seed)
    arch = plan.arch.with_classes(split.class_count)
    shape_trace(arch, split.bands)
    params = _model.init_params(arch, split.bands, cfg.seed)
    return fit(params, split.train, split.validation, cfg)


def reattach_head(params, target_class_count, seed):
    return _model.reinit_head(params, target_class_count, seed)


def fine_tune(params, split, cfg=TrainConfig()):
    """Train only the classifier head on ``split`` with the extractor frozen."""
    if split.bands != params.input_bands:
        raise DataError(f"target has {split.bands} bands, extractor expects {params.input_bands}")
    if split.class_count != params.arch.class_count:
        raise DataError(
            f"head has {params.arch.class_count} outputs, target has {split.class_count} classes"
        )
    if len(split.validation) == 0:
        raise DataError("target validation set is empty")
    return fit(params, split.train, split.validation, cfg, mask="head")


def score_test_set(params, test_set):
    labels, ms = predict_time(params, test_set.spectra)
    return stats.evaluate(test_set.classes, labels, test_set.class_count), ms


class DatasetPool:
    """Named datasets with a read log, so tests can audit which ones a run touched."""

    def __init__(self, specs):
        self._specs = {s.name: s for s in specs}
        self.reads = []

    def __contains__(self, name):
        return name in self._specs

    def get(self, name):
        if name not in self._specs:
            raise ConfigError(f"unknown dataset {name!r}")
        self.reads.append(name)
        return self._specs[name]


def run_variant(variant, pool, target, arch, reduction, seeds, train_cfg=TrainConfig(),
                finetune_cfg=None):
    """One ExperimentRecord per seed for ``variant`` evaluated on ``target``.

    B(E) and B train the whole network on the target's large or small
    division; Ex(S) pretrains on S's B(E) division and fine-tunes the head on
    the target's B division. Infeasible architectures and band-count
    mismatches yield a single marker record instead of metrics.
    """
    kind, source = parse_variant(variant)
    if kind == "Ex" and source == target:
        raise ConfigError(f"{variant}: source and target must differ")
    tgt = pool.get(target)
    band_label = "full" if reduction is None else str(reduction.label())
    base = dict(dataset=target, variant=variant, family=arch.family, blocks=arch.blocks,
                band_count=band_label)

    bands = tgt.reduced_bands(reduction)
    try:
        shape_trace(arch, bands)
    except InsufficientSpectralExtent:
        return [ExperimentRecord(seed=-1, status=INFEASIBLE, **base)]

    if kind == "Ex":
        src = pool.get(source)
        try:
            plan = TransferPlan(src, tgt, arch, reduction, train_cfg, finetune_cfg)
        except DataError:
            return [ExperimentRecord(seed=-1, status=BAND_MISMATCH, **base)]

    records = []
    for seed in seeds:
        cfg = replace(train_cfg, seed=seed)
        if kind == "Ex":
            pre, pre_report = pretrain(plan, seed)
            head = reattach_head(pre, tgt.samples.class_count, seed)
            split = target_split(plan, seed)
            tuned, ft_report = fine_tune(head, split, replace(plan.finetune(), seed=seed))
            times = (pre_report.seconds, ft_report.seconds)
        else:
            samples = tgt.reduced(reduction)
            if kind == BE:
                split = split_be(samples, *tgt.be_counts, seed)
            else:
                split = split_b(samples, tgt.b_counts, seed)
            split = normalize_split(split)[0]
            params = _model.init_params(arch.with_classes(split.class_count), split.bands, seed)
            tuned, report = fit(params, split.train, split.validation, cfg)
            times = (report.seconds, 0.0)
        m, ms = score_test_set(tuned, split.test)
        records.append(ExperimentRecord(
            seed=seed, oa=m.oa, aa=m.aa, kappa=m.kappa,
            pretrain_s=times[0], finetune_s=times[1], infer_ms_per_sample=ms, **base,
        ))
    return records
