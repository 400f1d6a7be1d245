from dataclasses import replace

import numpy as np
import pytest

from hsitransfer.errors import ConfigError, DataError
from hsitransfer.nn import ArchitectureConfig, TrainConfig, init_params
from hsitransfer.nn.checkpoint import extractor_bytes
from hsitransfer.nn.train import fit
from hsitransfer.records import BAND_MISMATCH, INFEASIBLE, OK
from hsitransfer.reduce import ReductionSpec
from hsitransfer.synthetic import transfer_task
from hsitransfer.transfer import (
    DatasetPool,
    DatasetSpec,
    TransferPlan,
    fine_tune,
    parse_variant,
    pretrain,
    reattach_head,
    run_variant,
    source_split,
    target_split,
)

ARCH = ArchitectureConfig.cnn1d(1, 2, kernels=6, fc_sizes=(12, 8))
QUICK = TrainConfig(max_epochs=3, batch_size=16)


@pytest.fixture(scope="module")
def task():
    return transfer_task(0, source_per_class=40, target_per_class=40)


@pytest.fixture()
def pool(task):
    return DatasetPool([
        DatasetSpec("src", task.source, be_counts=(20, 5)),
        DatasetSpec("tgt", task.target, b_counts=(10, 5)),
    ])


def _plan(task, **kw):
    return TransferPlan(
        DatasetSpec("src", task.source, be_counts=(20, 5)),
        DatasetSpec("tgt", task.target, b_counts=(10, 5)),
        ARCH, train_cfg=QUICK, **kw,
    )


class TestVariants:
    def test_parse(self):
        assert parse_variant("B") == ("B", None)
        assert parse_variant("B(E)") == ("B(E)", None)
        assert parse_variant("Ex(pavia)") == ("Ex", "pavia")
        with pytest.raises(ConfigError):
            parse_variant("Ex()")

    def test_self_transfer_rejected(self, pool):
        with pytest.raises(ConfigError):
            run_variant("Ex(tgt)", pool, "tgt", ARCH, None, [0], QUICK)

    def test_b_never_reads_source(self, pool):
        recs = run_variant("B", pool, "tgt", ARCH, None, [0, 1], QUICK)
        assert pool.reads == ["tgt"]
        assert [r.seed for r in recs] == [0, 1]
        assert all(r.status == OK and r.finetune_s == 0.0 for r in recs)

    def test_ex_reads_both(self, pool):
        recs = run_variant("Ex(src)", pool, "tgt", ARCH, None, [0], QUICK)
        assert set(pool.reads) == {"src", "tgt"}
        assert recs[0].variant == "Ex(src)" and -1 <= recs[0].kappa <= 1

    def test_one_record_per_seed(self, pool):
        assert len(run_variant("B(E)", pool, "tgt", ARCH, None, range(4), QUICK)) == 4

    def test_infeasible_marker(self, pool):
        deep = ArchitectureConfig.cnn1d(3, 2)
        recs = run_variant("B", pool, "tgt", deep, ReductionSpec(target=25), [0, 1], QUICK)
        assert len(recs) == 1 and recs[0].status == INFEASIBLE and recs[0].kappa is None

    def test_band_mismatch_marker(self, task):
        short = task.source.with_spectra(task.source.spectra[:, :60])
        pool = DatasetPool([DatasetSpec("src", short), DatasetSpec("tgt", task.target)])
        recs = run_variant("Ex(src)", pool, "tgt", ARCH, None, [0], QUICK)
        assert recs[0].status == BAND_MISMATCH

    def test_plan_band_mismatch(self, task):
        with pytest.raises(DataError):
            TransferPlan(DatasetSpec("s", task.source.with_spectra(task.source.spectra[:, :10])),
                         DatasetSpec("t", task.target), ARCH)


class TestPretrain:
    def test_head_sized_for_source(self, task):
        params, _ = pretrain(_plan(task), seed=0)
        assert params.arch.class_count == 8
        assert params.weights["head.fc2.weight"].shape[0] == 8

    def test_deterministic(self, task):
        a, _ = pretrain(_plan(task), seed=4)
        b, _ = pretrain(_plan(task), seed=4)
        for k in a.weights:
            assert a.weights[k].tobytes() == b.weights[k].tobytes()

    def test_equals_plain_training(self, task):
        plan = _plan(task)
        split = source_split(plan, 2)
        ref, _ = fit(init_params(ARCH.with_classes(8), 64, 2), split.train, split.validation,
                     replace(QUICK, seed=2))
        got, _ = pretrain(plan, seed=2)
        for k in ref.weights:
            np.testing.assert_array_equal(ref.weights[k], got.weights[k])

    def test_reduction_applied_to_both(self, task):
        plan = _plan(task, reduction=ReductionSpec(window=2))
        assert plan.bands == 32
        params, _ = pretrain(plan, seed=0)
        assert params.input_bands == 32


class TestReattach:
    def test_sixteen_to_nine(self):
        params = init_params(ARCH.with_classes(16), 40, 0)
        params.buffers["block0.bn.running_mean"][:] = 0.25
        out = reattach_head(params, 9, seed=1)
        assert out.arch.class_count == 9
        assert out.weights["head.fc2.weight"].shape == (9, 8)
        assert out.weights["head.fc2.bias"].shape == (9,)
        assert extractor_bytes(out) == extractor_bytes(params)

    def test_same_count_reinitialized(self):
        params = init_params(ARCH.with_classes(4), 40, 0)
        out = reattach_head(params, 4, seed=0)
        assert not np.array_equal(out.weights["head.fc0.weight"], params.weights["head.fc0.weight"])

    def test_same_seed_same_head(self):
        params = init_params(ARCH.with_classes(4), 40, 0)
        a, b = reattach_head(params, 3, 5), reattach_head(params, 3, 5)
        for k in a.names("head"):
            assert a.weights[k].tobytes() == b.weights[k].tobytes()

    def test_original_untouched(self):
        params = init_params(ARCH.with_classes(4), 40, 0)
        before = params.weights["head.fc2.weight"].copy()
        reattach_head(params, 7, 1)
        np.testing.assert_array_equal(params.weights["head.fc2.weight"], before)


class TestFineTune:
    def test_extractor_frozen(self, task):
        plan = _plan(task)
        pre, _ = pretrain(plan, seed=0)
        head = reattach_head(pre, 4, 0)
        before = extractor_bytes(head)
        tuned, report = fine_tune(head, target_split(plan, 0), replace(QUICK, max_epochs=5))
        assert report.epochs_run == 5
        assert extractor_bytes(tuned) == before
        assert any(not np.array_equal(tuned.weights[k], head.weights[k]) for k in head.names("head"))

    def test_empty_validation(self, task):
        plan = _plan(task)
        split = target_split(plan, 0)
        empty = replace(split, validation=split.validation.subset([]))
        with pytest.raises(DataError, match="validation"):
            fine_tune(init_params(ARCH.with_classes(4), 64, 0), empty, QUICK)

    def test_band_mismatch(self, task):
        split = target_split(_plan(task), 0)
        with pytest.raises(DataError, match="bands"):
            fine_tune(init_params(ARCH.with_classes(4), 32, 0), split, QUICK)

    def test_class_mismatch(self, task):
        split = target_split(_plan(task), 0)
        with pytest.raises(DataError):
            fine_tune(init_params(ARCH.with_classes(5), 64, 0), split, QUICK)

    def test_zero_epochs_returns_input(self, task):
        head = reattach_head(init_params(ARCH.with_classes(8), 64, 0), 4, 0)
        tuned, report = fine_tune(head, target_split(_plan(task), 0), replace(QUICK, max_epochs=0))
        assert report.epochs_run == 0
        for k in head.weights:
            np.testing.assert_array_equal(tuned.weights[k], head.weights[k])
