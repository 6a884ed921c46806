import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

from hqtcn.data import generate_narma_dataset, narma_dataset, normalize, synth_classification
from hqtcn.errors import ConfigurationError, MetricError, TrainingError
from hqtcn.model import HqtcnModel, ModelConfig
from hqtcn.train import (
    adam_step,
    auroc,
    build_model,
    evaluate,
    mse,
    multi_seed,
    OptimizerState,
    RunRecord,
    summarize,
    train,
    TrainConfig,
)


def record_without_clock(r: RunRecord) -> dict:
    d = json.loads(r.to_json())
    d.pop("wall_clock_s")
    return d


@pytest.fixture(scope="module")
def tiny_narma():
    return normalize(narma_dataset(generate_narma_dataset(60, seed=0)))


@pytest.fixture(scope="module")
def tiny_cls():
    return normalize(synth_classification(12, channels=3, steps=30, seed=1, split_counts=(6, 3, 3)))


TINY = ModelConfig(3, 1, 4, 1)


class TestMetrics:
    def test_mse_examples(self):
        t = np.array([0.3, -1.0, 2.0])
        assert mse(t, t) == 0
        assert mse(t + 1, t) == 1
        assert mse([0, 1], [1, 0]) == 1.0

    def test_mse_errors(self):
        with pytest.raises(ValueError):
            mse([1, 2], [1])
        with pytest.raises(ValueError):
            mse([], [])

    def test_auroc_examples(self):
        s = [0.9, 0.8, 0.3, 0.1]
        assert auroc(s, [1, 1, 0, 0]) == 1.0
        assert auroc(s, [0, 0, 1, 1]) == 0.0
        assert auroc([0.5] * 4, [1, 0, 1, 0]) == 0.5

    def test_auroc_single_class(self):
        with pytest.raises(MetricError):
            auroc([0.1, 0.2], [1, 1])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=40))
    def test_auroc_matches_reference(self, pairs):
        scores = np.array([p[0] for p in pairs], dtype=float)
        labels = np.array([int(p[1]) for p in pairs])
        if labels.min() == labels.max():
            return
        assert auroc(scores, labels) == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)
        assert auroc(scores, labels) + auroc(scores, 1 - labels) == pytest.approx(1.0)


class TestAdam:
    def test_first_step_sign(self):
        cfg = TrainConfig(lr=0.01, weight_decay=0.0)
        p = np.array([1.0, -2.0, 0.5])
        g = np.array([3.0, -0.001, 20.0])
        new, state = adam_step(p, g, OptimizerState.zeros_like(p), cfg)
        assert np.allclose(new - p, -0.01 * np.sign(g), atol=1e-6)
        assert state.step == 1

    def test_zero_gradient_is_identity(self):
        cfg = TrainConfig(weight_decay=0.0)
        p = np.random.default_rng(0).standard_normal(5)
        new, _ = adam_step(p, np.zeros(5), OptimizerState.zeros_like(p), cfg)
        assert np.array_equal(new, p)

    def test_decoupled_decay(self):
        cfg = TrainConfig(lr=0.1, weight_decay=0.5)
        p = np.array([2.0, -4.0])
        state = OptimizerState.zeros_like(p)
        for _ in range(3):
            p_prev = p
            p, state = adam_step(p, np.zeros(2), state, cfg)
            assert np.allclose(p, p_prev * (1 - 0.1 * 0.5))

    def test_nan_gradient(self):
        p = np.zeros(2)
        with pytest.raises(TrainingError):
            adam_step(p, np.array([np.nan, 0]), OptimizerState.zeros_like(p), TrainConfig())

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(2), np.zeros(3), OptimizerState.zeros_like(np.zeros(2)), TrainConfig())

    @pytest.mark.parametrize("kw", [{"lr": 0}, {"weight_decay": -1}, {"seeds": ()}, {"patience": 0},
                                    {"threads": 0}])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kw)


class TestTrain:
    def test_zero_epochs_equals_untrained(self, tiny_narma):
        r = train(HqtcnModel(TINY, 1), tiny_narma, TrainConfig(epochs=0), seed=0)
        assert r.status == "ok" and r.test_metric == r.untrained_test_metric and r.best_epoch is None

    def test_loss_decreases_first_five_epochs(self, tiny_narma):
        r = train(HqtcnModel(TINY, 1), tiny_narma, TrainConfig(lr=0.005, epochs=5, patience=10), seed=0)
        assert all(b < a for a, b in zip(r.train_loss, r.train_loss[1:]))

    def test_same_seed_identical(self, tiny_narma):
        cfg = TrainConfig(epochs=4)
        a = train(HqtcnModel(TINY, 1), tiny_narma, cfg, seed=7, config={"k": 1})
        b = train(HqtcnModel(TINY, 1), tiny_narma, cfg, seed=7, config={"k": 1})
        assert record_without_clock(a) == record_without_clock(b)

    def test_best_checkpoint_restored(self, tiny_narma):
        m = HqtcnModel(TINY, 1)
        r = train(m, tiny_narma, TrainConfig(lr=0.05, epochs=30, patience=3), seed=1)
        best = r.extra["best_val_loss"]
        assert best <= min(r.val_loss) + 1e-15
        assert evaluate(m, tiny_narma, r.params) == r.test_metric
        assert len(r.train_loss) <= 30

    def test_regression_reports_raw_mse(self, tiny_narma):
        r = train(HqtcnModel(TINY, 1), tiny_narma, TrainConfig(epochs=1), seed=0)
        scale = tiny_narma.normalizer.target_scale
        assert r.extra["test_mse_raw"] == pytest.approx(r.test_metric * scale**2)
        assert r.predictions[0]["t"] == TINY.start

    def test_classification_runs(self, tiny_cls):
        cfg = ModelConfig(3, 2, 4, 1, "classification")
        r = train(build_model("hqtcn", tiny_cls, cfg), tiny_cls, TrainConfig(lr=0.01, epochs=2), seed=0)
        assert r.status == "ok" and r.metric_name == "test_auroc" and 0 <= r.test_metric <= 1
        assert len(r.val_metric) == 2 and len(r.predictions) == 3

    @pytest.mark.parametrize("kind", ["qcnn", "tcn"])
    def test_baselines_train(self, kind, tiny_narma):
        m = build_model(kind, tiny_narma, TINY, tcn_hidden=4)
        r = train(m, tiny_narma, TrainConfig(epochs=2), seed=0)
        assert r.status == "ok" and r.param_count["total"] == m.init_params(np.random.default_rng(0)).size

    def test_threads_match(self, tiny_cls):
        cfg = ModelConfig(3, 2, 4, 1, "classification")
        one = train(build_model("hqtcn", tiny_cls, cfg), tiny_cls, TrainConfig(epochs=2, threads=1), seed=3)
        many = train(build_model("hqtcn", tiny_cls, cfg), tiny_cls, TrainConfig(epochs=2, threads=4), seed=3)
        assert abs(one.test_metric - many.test_metric) <= 1e-9
        assert np.allclose(one.train_loss, many.train_loss, rtol=0, atol=1e-12)

    def test_divergence_recorded(self, tiny_narma):
        class Exploding(HqtcnModel):
            def vjp(self, flat, series, upstream_fn, threads=1):
                outs, grad = super().vjp(flat, series, upstream_fn, threads)
                return outs, grad * np.nan

        r = train(Exploding(TINY, 1), tiny_narma, TrainConfig(epochs=3), seed=0)
        assert r.status == "failed" and "non-finite" in r.error and r.test_metric is None

    def test_unknown_model(self, tiny_narma):
        with pytest.raises(ConfigurationError):
            build_model("lstm", tiny_narma, TINY)


class TestMultiSeed:
    @staticmethod
    def fake(metrics, failed=()):
        def run(seed):
            r = RunRecord("m", "regression", seed, {}, {})
            if seed in failed:
                r.status = "failed"
            else:
                r.status, r.test_metric = "ok", metrics[seed]
            return r
        return run

    def test_sample_std(self):
        s = multi_seed(self.fake({0: 1.0, 1: 2.0, 2: 3.0}), [0, 1, 2])
        assert (s.mean, s.std, s.partial) == (2.0, 1.0, False)

    def test_identical(self):
        s = multi_seed(self.fake({0: 0.5, 1: 0.5, 2: 0.5}), [0, 1, 2])
        assert s.std == 0.0

    def test_partial(self):
        s = multi_seed(self.fake({0: 1.0, 1: 2.0, 2: 3.0}, failed={1}), [0, 1, 2])
        assert s.partial and s.mean == 2.0

    def test_needs_two_seeds(self):
        with pytest.raises(ConfigurationError):
            multi_seed(self.fake({0: 1.0}), [0])
        with pytest.raises(ValueError):
            summarize([1.0])
