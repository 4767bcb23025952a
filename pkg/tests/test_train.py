import numpy as np
import pytest

from mstd_rcnn import numerics as nx
import importlib

tr = importlib.import_module("mstd_rcnn.train")
from mstd_rcnn.model import ModelConfig, ModelParams, forward

import oracles

TINY = ModelConfig(window=12, scales=(1, 2), n_filters=2, kernel_size=3, hidden_size=4, fc_sizes=(4, 3))


def _toy(n=40, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 12)).cumsum(axis=1)
    y = rng.integers(0, 3, n)
    return X, y


class _One:
    """Single scalar parameter wrapped like ModelParams.arrays."""

    def __init__(self, theta):
        self.arrays = {"w": np.array([[theta]])}


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        cfg = tr.TrainConfig(learning_rate=0.01, epsilon=0.0)
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = rng.normal(0, 10 ** rng.uniform(-3, 3), (3, 2))
            params = {"w": np.zeros((3, 2))}
            state = tr.AdamState({"w": np.zeros((3, 2))}, {"w": np.zeros((3, 2))})
            tr.adam_step(params, {"w": g}, state, cfg)
            np.testing.assert_allclose(params["w"], -0.01 * np.sign(g), rtol=1e-12)

    def test_zero_gradient_is_a_no_op(self):
        cfg = tr.TrainConfig()
        p = _One(1.5)
        state = tr.AdamState.zeros(p)
        for _ in range(3):
            tr.adam_step(p.arrays, {"w": np.zeros((1, 1))}, state, cfg)
        assert p.arrays["w"][0, 0] == 1.5
        assert state.step == 3

    def test_quadratic_table(self):
        # f = theta^2 from theta = 1, lr = 0.1
        frozen = [0.9000000005, 0.8004122286917928, 0.7015862729460303, 0.603939060573746, 0.507963659264342]
        ref = oracles.adam(1.0, lambda th: 2 * th, 5, 0.1)
        np.testing.assert_allclose(ref, frozen, rtol=1e-12)
        cfg = tr.TrainConfig(learning_rate=0.1)
        p = _One(1.0)
        state = tr.AdamState.zeros(p)
        got = []
        for _ in range(5):
            tr.adam_step(p.arrays, {"w": 2 * p.arrays["w"]}, state, cfg)
            got.append(p.arrays["w"][0, 0])
        np.testing.assert_allclose(got, frozen, rtol=1e-12)

    def test_nonfinite_gradient(self):
        p = _One(1.0)
        state = tr.AdamState.zeros(p)
        with pytest.raises(nx.NumericalError, match="w"):
            tr.adam_step(p.arrays, {"w": np.array([[np.nan]])}, state, tr.TrainConfig())
        assert p.arrays["w"][0, 0] == 1.0 and state.step == 0

    def test_config_validation(self):
        for kw in ({"learning_rate": -1}, {"beta1": 1.0}, {"batch_size": 0}, {"max_epochs": -1}):
            with pytest.raises(ValueError):
                tr.TrainConfig(**kw)


class TestTraining:
    def test_deterministic(self):
        X, y = _toy()
        cfg = tr.TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=3, seed=4)
        a = tr.train_arrays(X, y, X[:10], y[:10], TINY, cfg)
        b = tr.train_arrays(X, y, X[:10], y[:10], TINY, cfg)
        assert [r.train_loss for r in a.history] == [r.train_loss for r in b.history]
        assert tr.checkpoint_bytes(a.last) == tr.checkpoint_bytes(b.last)

    def test_zero_learning_rate_keeps_parameters(self):
        X, y = _toy()
        cfg = tr.TrainConfig(learning_rate=0.0, batch_size=8, max_epochs=2, seed=1)
        res = tr.train_arrays(X, y, None, None, TINY, cfg)
        init = ModelParams.initialize(TINY, 1)
        for name in init.names():
            np.testing.assert_array_equal(res.last.params.arrays[name], init.arrays[name])
        losses = {r.train_loss for r in res.history}
        assert len(losses) == 1

    def test_history_and_selection(self):
        X, y = _toy()
        cfg = tr.TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=4)
        res = tr.train_arrays(X, y, X[:20], y[:20], TINY, cfg)
        assert [r.epoch for r in res.history] == [0, 1, 2, 3, 4]
        later = res.history[1:]
        best = max(r.dev_acc for r in later)
        first = next(r.epoch for r in later if r.dev_acc == best)
        assert res.best_epoch == first and res.last.epoch == 4

    def test_no_dev_selects_last(self):
        X, y = _toy()
        res = tr.train_arrays(X, y, None, None, TINY, tr.TrainConfig(max_epochs=2, batch_size=16))
        assert res.best.epoch == 2 and np.isnan(res.best.dev_acc)

    def test_zero_epochs(self):
        X, y = _toy()
        res = tr.train_arrays(X, y, None, None, TINY, tr.TrainConfig(max_epochs=0))
        assert res.best.epoch == 0 and len(res.history) == 1

    def test_resume_matches_uninterrupted(self):
        X, y = _toy()
        full_cfg = tr.TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=4, seed=2)
        half_cfg = tr.TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=2, seed=2)
        full = tr.train_arrays(X, y, X[:10], y[:10], TINY, full_cfg)
        half = tr.train_arrays(X, y, X[:10], y[:10], TINY, half_cfg)
        blob = tr.checkpoint_bytes(half.last)
        resumed = tr.train_arrays(X, y, X[:10], y[:10], TINY, full_cfg, resume=tr.checkpoint_from_bytes(blob))
        assert [r.train_loss for r in resumed.history] == [r.train_loss for r in full.history[3:]]
        for name in full.last.params.names():
            np.testing.assert_array_equal(resumed.last.params.arrays[name], full.last.params.arrays[name])

    def test_resume_rejects_other_model(self):
        X, y = _toy()
        res = tr.train_arrays(X, y, None, None, TINY, tr.TrainConfig(max_epochs=1))
        other = ModelConfig(window=12, scales=(1,), n_filters=2, kernel_size=3, hidden_size=4, fc_sizes=(4, 3))
        with pytest.raises(ValueError):
            tr.train_arrays(X, y, None, None, other, tr.TrainConfig(max_epochs=2), resume=res.last)

    def test_loss_decreases_on_easy_data(self):
        rng = np.random.default_rng(0)
        slopes = np.array([0.0, -1.0, 1.0])
        y = rng.integers(0, 3, 60)
        X = slopes[y, None] * np.arange(12)[None, :] + rng.normal(0, 0.1, (60, 12))
        res = tr.train_arrays(X, y, None, None, TINY, tr.TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=10))
        assert res.history[-1].train_loss < res.history[0].train_loss - 0.2

    def test_divergence_reports_last_good(self, monkeypatch):
        X, y = _toy()
        calls = {"n": 0}
        real = tr.adam_step

        def flaky(params, grads, state, cfg):
            calls["n"] += 1
            if calls["n"] > 5:
                grads = {k: np.full_like(v, np.inf) for k, v in grads.items()}
            return real(params, grads, state, cfg)

        monkeypatch.setattr(tr, "adam_step", flaky)
        with pytest.raises(tr.TrainingDiverged) as info:
            tr.train_arrays(X, y, None, None, TINY, tr.TrainConfig(batch_size=8, max_epochs=3))
        assert info.value.last_good.epoch == 1

    def test_input_validation(self):
        X, y = _toy()
        with pytest.raises(ValueError):
            tr.train_arrays(X[:, :10], y, None, None, TINY, tr.TrainConfig())
        with pytest.raises(ValueError):
            tr.train_arrays(X, y[:-1], None, None, TINY, tr.TrainConfig())
        with pytest.raises(ValueError):
            tr.train_arrays(X[:0], y[:0], None, None, TINY, tr.TrainConfig())


class TestCheckpoint:
    @pytest.fixture
    def ckpt(self):
        X, y = _toy()
        res = tr.train_arrays(X, y, X[:10], y[:10], TINY, tr.TrainConfig(learning_rate=0.01, batch_size=8, max_epochs=2))
        return tr.with_meta(res.last, threshold=repr(0.25))

    def test_round_trip_bit_identical(self, ckpt, tmp_path):
        path = tmp_path / "m.ckpt"
        tr.save_checkpoint(ckpt, path)
        back = tr.load_checkpoint(path)
        assert tr.checkpoint_bytes(back) == path.read_bytes()
        for name in ckpt.params.names():
            assert back.params.arrays[name].tobytes() == ckpt.params.arrays[name].tobytes()
            assert back.optimizer.m[name].tobytes() == ckpt.optimizer.m[name].tobytes()
            assert back.optimizer.v[name].tobytes() == ckpt.optimizer.v[name].tobytes()
        assert back.optimizer.step == ckpt.optimizer.step
        assert back.epoch == ckpt.epoch and back.model_config == ckpt.model_config
        assert back.train_config == ckpt.train_config
        assert back.meta["threshold"] == "0.25"
        X, _ = _toy(8, seed=3)
        assert forward(X, back.params).data.tobytes() == forward(X, ckpt.params).data.tobytes()

    def test_truncated(self, ckpt):
        blob = tr.checkpoint_bytes(ckpt)
        for cut in (10, 30, len(blob) // 2, len(blob) - 1):
            with pytest.raises(tr.CheckpointCorruptError):
                tr.checkpoint_from_bytes(blob[:cut])

    def test_flipped_byte(self, ckpt):
        blob = bytearray(tr.checkpoint_bytes(ckpt))
        blob[-20] ^= 0xFF
        with pytest.raises(tr.CheckpointCorruptError):
            tr.checkpoint_from_bytes(bytes(blob))

    def test_trailing_bytes(self, ckpt):
        with pytest.raises(tr.CheckpointCorruptError):
            tr.checkpoint_from_bytes(tr.checkpoint_bytes(ckpt) + b"\0")

    def test_bad_magic_and_version(self, ckpt):
        blob = tr.checkpoint_bytes(ckpt)
        with pytest.raises(tr.CheckpointFormatError):
            tr.checkpoint_from_bytes(b"NOTACKPT" + blob[8:])
        bumped = blob[:8] + (99).to_bytes(4, "little") + blob[12:]
        with pytest.raises(tr.CheckpointFormatError):
            tr.checkpoint_from_bytes(bumped)


def test_log_format():
    recs = [tr.EpochRecord(0, 1.0986, 0.33, 0.25), tr.EpochRecord(1, 0.9, 0.5, 0.4)]
    text = tr.format_log(recs)
    lines = text.splitlines()
    assert lines[0] == "epoch,train_loss,dev_acc,dev_f1"
    assert lines[2] == "1,0.9,0.5,0.4"
    assert text.endswith("\n")
