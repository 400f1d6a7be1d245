import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsitransfer.data import SampleSet
from hsitransfer.errors import DataError, FormatError, InsufficientSpectralExtent
from hsitransfer.nn import (
    AdamState,
    ArchitectureConfig,
    TrainConfig,
    adam_step,
    forward,
    grad_check,
    init_params,
    is_feasible,
    loss_and_gradients,
    predict,
    predict_time,
    shape_trace,
    train,
)
from hsitransfer.nn import checkpoint
from hsitransfer.nn.gradcheck import numeric_gradients, relative_error
from hsitransfer.synthetic import separable_two_class

TINY = ArchitectureConfig.cnn1d(1, 3, kernels=4, fc_sizes=(6, 5))
TINY_PT = ArchitectureConfig.ptcnn(1, 3, kernels=3, conv_len=4, fc_sizes=(5, 4, 4))


def _zero(params):
    for w in params.weights.values():
        w[...] = 0
    return params


class TestShapeTrace:
    def test_cnn1d_three_blocks_25_bands(self):
        arch = ArchitectureConfig.cnn1d(3, 16)
        with pytest.raises(InsufficientSpectralExtent) as err:
            shape_trace(arch, 25)
        assert err.value.layer_index == 4  # third block's conv
        assert err.value.extent == 3 and err.value.kernel == 5

    def test_cnn1d_two_blocks_25_bands_trace(self):
        assert shape_trace(ArchitectureConfig.cnn1d(2, 16), 25) == [25, 21, 10, 6, 3]

    def test_cnn1d_one_block_100_bands(self):
        assert shape_trace(ArchitectureConfig.cnn1d(1, 16), 100) == [100, 96, 48]

    def test_ptcnn_two_blocks_25_bands(self):
        arch = ArchitectureConfig.ptcnn(2, 9)
        with pytest.raises(InsufficientSpectralExtent) as err:
            shape_trace(arch, 25)
        assert err.value.extent == 10

    def test_family_defaults(self):
        a = ArchitectureConfig.cnn1d(1, 2)
        assert (a.kernels, a.conv_len, a.fc_sizes, a.batch_norm, a.pooling) == (200, 5, (512, 128), True, True)
        p = ArchitectureConfig.ptcnn(1, 2)
        assert (p.conv_len, p.fc_sizes, p.batch_norm, p.pooling) == (16, (512, 256, 128), False, False)

    @pytest.mark.parametrize("bands", [25, 50, 75, 100])
    @pytest.mark.parametrize("blocks", [1, 2, 3])
    def test_feasibility_grid(self, bands, blocks):
        assert is_feasible(ArchitectureConfig.cnn1d(blocks, 9), bands) == (
            not (bands == 25 and blocks == 3)
        )
        assert is_feasible(ArchitectureConfig.ptcnn(blocks, 9), bands) == (
            not (bands == 25 and blocks >= 2)
        )


class TestInit:
    def test_deterministic(self):
        a, b = init_params(TINY, 16, seed=3), init_params(TINY, 16, seed=3)
        for k in a.weights:
            assert a.weights[k].tobytes() == b.weights[k].tobytes()

    def test_finite_and_zero_bias(self):
        p = init_params(ArchitectureConfig.cnn1d(2, 4, kernels=8, fc_sizes=(16, 8)), 40, seed=0)
        for k, w in p.weights.items():
            assert np.isfinite(w).all()
            if k.endswith(("bias", "beta")):
                assert (w == 0).all()
            if k.endswith("gamma"):
                assert (w == 1).all()

    def test_seeds_differ(self):
        a, b = init_params(TINY, 16, seed=0), init_params(TINY, 16, seed=1)
        assert any(not np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)

    def test_infeasible(self):
        with pytest.raises(InsufficientSpectralExtent):
            init_params(ArchitectureConfig.cnn1d(3, 2), 25, seed=0)


class TestForward:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.1, 30))
    def test_rows_sum_to_one(self, seed, scale):
        p = init_params(TINY, 16, seed % 100)
        x = np.random.default_rng(seed).normal(0, scale, size=(5, 16))
        for mode in ("train", "infer"):
            probs = forward(p.copy(), x, mode)
            assert (probs >= 0).all()
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_large_logits_stable(self):
        p = _zero(init_params(TINY, 16, 0))
        p.weights["head.fc2.bias"][:] = [50, -50, 0]
        probs = forward(p, np.zeros((2, 16)))
        assert np.isfinite(probs).all()
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_zero_weights_uniform(self):
        p = _zero(init_params(TINY, 16, 0))
        np.testing.assert_allclose(forward(p, np.ones((4, 16))), 1 / 3)

    def test_infer_rows_independent(self):
        p = init_params(TINY, 16, 0)
        x = np.random.default_rng(1).normal(size=(7, 16))
        full = forward(p, x, "infer")
        for i in range(7):
            # float32 matmul blocking differs with batch size: allow rounding only
            np.testing.assert_allclose(forward(p, x[i:i + 1], "infer")[0], full[i], rtol=1e-5, atol=1e-7)

    def test_train_mode_updates_running_stats(self):
        p = init_params(TINY, 16, 0)
        before = p.buffers["block0.bn.running_mean"].copy()
        forward(p, np.random.default_rng(0).normal(size=(8, 16)), "train")
        assert not np.array_equal(before, p.buffers["block0.bn.running_mean"])

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            forward(init_params(TINY, 16, 0), np.zeros((2, 15)))


class TestLoss:
    def test_confident_correct(self):
        p = _zero(init_params(TINY, 16, 0))
        p.weights["head.fc2.bias"][:] = [50, 0, 0]
        loss, _ = loss_and_gradients(p, np.zeros((3, 16)), [0, 0, 0])
        assert loss <= 1e-6

    def test_uniform_four_classes(self):
        p = _zero(init_params(TINY.with_classes(4), 16, 0))
        loss, _ = loss_and_gradients(p, np.ones((5, 16)), [0, 1, 2, 3, 0])
        assert loss == pytest.approx(np.log(4), abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            loss_and_gradients(init_params(TINY, 16, 0), np.zeros((1, 16)), [3])

    def test_gradient_shapes(self):
        p = init_params(TINY, 16, 0)
        _, g = loss_and_gradients(p, np.zeros((2, 16)), [0, 1])
        assert set(g) == set(p.weights)
        for k in g:
            assert g[k].shape == p.weights[k].shape

    def test_finite_difference_step_1e3(self):
        arch = ArchitectureConfig.ptcnn(1, 3, kernels=3, conv_len=3, fc_sizes=(4, 4, 3))
        p = init_params(arch, 10, seed=4, dtype=np.float64)
        gen = np.random.default_rng(4)
        x, y = gen.normal(size=(4, 10)), gen.integers(0, 3, size=4)
        _, analytic = loss_and_gradients(p.copy(), x, y)
        numeric, kinks = numeric_gradients(p, x, y, step=1e-3)
        for k in analytic:
            err = relative_error(analytic[k], numeric[k])[~kinks[k]]
            assert err.max(initial=0) < 1e-4, k

    def test_wanted_subset_matches_full(self):
        p = init_params(TINY, 16, 0, dtype=np.float64)
        x = np.random.default_rng(0).normal(size=(4, 16))
        _, full = loss_and_gradients(p.copy(), x, [0, 1, 2, 0])
        heads = [k for k in p.weights if k.startswith("head")]
        _, part = loss_and_gradients(p.copy(), x, [0, 1, 2, 0], wanted=heads)
        assert set(part) == set(heads)
        for k in heads:
            np.testing.assert_array_equal(part[k], full[k])


class TestGradCheck:
    def test_cnn1d_tiny(self):
        r = grad_check(ArchitectureConfig.cnn1d(1, 3, kernels=4, fc_sizes=(6, 5)), 16, seed=0)
        assert r.passed and r.max_rel_error < 1e-4

    def test_ptcnn_tiny(self):
        r = grad_check(TINY_PT, 12, seed=1)
        assert r.passed and r.max_rel_error < 1e-4

    def test_batch_norm_train_mode(self):
        arch = ArchitectureConfig.ptcnn(2, 2, kernels=3, conv_len=3, fc_sizes=(4, 4, 3), batch_norm=True)
        r = grad_check(arch, 14, seed=2)
        assert any(k.endswith("gamma") for k in r.per_tensor)
        assert r.max_rel_error < 1e-4

    def test_infer_mode(self):
        assert grad_check(TINY, 16, seed=3, mode="infer").max_rel_error < 1e-4


class TestAdam:
    CFG = TrainConfig()

    def test_zero_gradient(self):
        w = {"a": np.array([1.0, -2.0])}
        adam_step(w, {"a": np.zeros(2)}, AdamState(), 1, self.CFG)
        np.testing.assert_array_equal(w["a"], [1.0, -2.0])

    def test_first_step(self):
        w = {"a": np.array([0.0])}
        adam_step(w, {"a": np.array([1.0])}, AdamState(), 1, self.CFG)
        # m_hat = 1, v_hat = 1: step = -lr / (1 + eps)
        assert w["a"][0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)

    def test_hand_evaluated_two_steps(self):
        cfg = TrainConfig(learning_rate=0.1)
        w = {"a": np.array([0.0])}
        state = AdamState()
        adam_step(w, {"a": np.array([1.0])}, state, 1, cfg)
        adam_step(w, {"a": np.array([-2.0])}, state, 2, cfg)
        m = 0.9 * 0.1 * 1 + 0.1 * -2
        v = 0.999 * 0.001 * 1 + 0.001 * 4
        expected = -0.1 / (1 + 1e-8) - 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
        assert w["a"][0] == pytest.approx(expected, rel=1e-12)

    def test_mask(self):
        w = {"block0.x": np.ones(3), "head.y": np.ones(3)}
        g = {"block0.x": np.ones(3), "head.y": np.ones(3)}
        state = AdamState()
        adam_step(w, g, state, 1, self.CFG, mask=["head.y"])
        np.testing.assert_array_equal(w["block0.x"], np.ones(3))
        assert (w["head.y"] < 1).all()
        assert "block0.x" not in state.m

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, AdamState(), 1, self.CFG)


def _sets(bands=64, seed=0):
    return separable_two_class(bands, (100, 25, 100), seed)


class TestTrain:
    ARCH = ArchitectureConfig.cnn1d(1, 2, kernels=8, fc_sizes=(32, 16))

    def test_separable_reaches_099(self):
        tr, va, _ = _sets()
        params, report = train(self.ARCH, tr, va, TrainConfig(max_epochs=200, batch_size=16))
        assert report.best_val_oa >= 0.99
        assert np.mean(predict(params, va.spectra) == va.classes) >= 0.99

    def test_patience_stop(self):
        tr, va, _ = _sets()
        cfg = TrainConfig(learning_rate=1e-30, patience=25, max_epochs=100)
        _, report = train(self.ARCH, tr, va, cfg)
        assert report.stop_reason == "patience"
        assert report.epochs_run <= 26
        assert len(report.val_oa) == len(report.train_loss) == report.epochs_run

    def test_deterministic(self):
        tr, va, _ = _sets()
        cfg = TrainConfig(max_epochs=5, seed=9)
        a = train(self.ARCH, tr, va, cfg)
        b = train(self.ARCH, tr, va, cfg)
        assert a[1].train_loss == b[1].train_loss and a[1].val_oa == b[1].val_oa
        for k in a[0].weights:
            assert a[0].weights[k].tobytes() == b[0].weights[k].tobytes()

    def test_max_epochs(self):
        tr, va, _ = _sets()
        _, report = train(self.ARCH, tr, va, TrainConfig(max_epochs=2, patience=5))
        assert report.stop_reason == "max_epochs" and report.epochs_run == 2

    def test_empty_sets(self):
        tr, va, _ = _sets()
        with pytest.raises(DataError):
            train(self.ARCH, tr, va.subset([]), TrainConfig(max_epochs=1))

    def test_frozen_extractor_untouched(self):
        tr, va, _ = _sets()
        p0 = init_params(self.ARCH, 64, 0)
        from hsitransfer.nn import fit

        p1, _ = fit(p0, tr, va, TrainConfig(max_epochs=3), mask="head")
        assert checkpoint.extractor_bytes(p0) == checkpoint.extractor_bytes(p1)
        assert not np.array_equal(p0.weights["head.fc0.weight"], p1.weights["head.fc0.weight"])


class TestPredict:
    def _params_with_output(self, probs):
        arch = ArchitectureConfig.cnn1d(1, len(probs), kernels=2, fc_sizes=(3, 3))
        p = _zero(init_params(arch, 8, 0))
        p.weights["head.fc2.bias"][:] = np.log(probs)
        return p

    def test_argmax(self):
        assert predict(self._params_with_output([0.2, 0.5, 0.3]), np.zeros((1, 8))).tolist() == [1]

    def test_tie_goes_low(self):
        assert predict(self._params_with_output([0.5, 0.5]), np.zeros((2, 8))).tolist() == [0, 0]

    def test_repeatable_and_timed(self):
        p = init_params(TINY, 16, 0)
        x = np.random.default_rng(0).normal(size=(20, 16))
        labels, ms = predict_time(p, x)
        np.testing.assert_array_equal(labels, predict(p, x))
        assert ms >= 0


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        p = init_params(ArchitectureConfig.cnn1d(2, 3, kernels=4, fc_sizes=(5, 4)), 30, 1)
        p.buffers["block1.bn.running_var"][:] = 2.5
        state = AdamState(3, {"head.fc0.bias": np.ones(5, np.float32)}, {"head.fc0.bias": np.full(5, 2, np.float32)})
        path = tmp_path / "m.hsim"
        checkpoint.save(p, path, state)
        assert path.read_bytes()[:4] == b"HSIM"
        q, opt = checkpoint.load(path)
        assert q.arch == p.arch and q.input_bands == 30
        for k in p.weights:
            np.testing.assert_array_equal(q.weights[k], p.weights[k])
        for k in p.buffers:
            np.testing.assert_array_equal(q.buffers[k], p.buffers[k])
        assert opt.t == 3
        np.testing.assert_array_equal(opt.v["head.fc0.bias"], 2)

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            checkpoint.from_bytes(b"NOPE" + b"\0" * 20)

    def test_truncated(self):
        raw = checkpoint.to_bytes(init_params(TINY, 16, 0))
        with pytest.raises(FormatError):
            checkpoint.from_bytes(raw[:-3])
