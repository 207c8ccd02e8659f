"""Per-task fit/predict contracts for the five analysis tasks."""

import numpy as np
import pytest

from units.data import LabelSet, MissingIndex, TimeSeriesDataset
from units.errors import ParameterError, StateError
from units.fusion import FusionConfig
from units.kmeans import kmeans
from units.pretraining import PretrainedInstance
from units.synth import sinusoid_bank, two_regime
from units.tasks import (
    AnomalyResult,
    TaskModel,
    TaskSpec,
    anomaly_decide,
    build_from_scratch,
    kmeans_regularizer,
)

from helpers import TINY_ENCODER, tiny_template

CONCAT = FusionConfig("concatenation")


def pretrained_instances(x, families=("contrastive_series",), epochs=1, seed=0):
    out = []
    for m, fam in enumerate(families):
        kw = {"hybrid_weight": 0.5} if fam == "hybrid" else {}
        cfg = tiny_template(fam, epochs=epochs, seed=seed + m,
                            encoder=TINY_ENCODER.with_seed(seed + m), **kw)
        out.append(PretrainedInstance(cfg).fit(x))
    return out


@pytest.fixture(scope="module")
def class_setup():
    ds, labels = two_regime(n=40, t=32, seed=4)
    insts = pretrained_instances(ds.values)
    return ds, labels, insts


class TestSpecValidation:
    def test_task_required_fields(self):
        with pytest.raises(ParameterError):
            TaskSpec(task="classification")  # no C
        with pytest.raises(ParameterError):
            TaskSpec(task="forecasting")  # no H
        with pytest.raises(ParameterError):
            TaskSpec(task="anomaly_detection", threshold_kind="quantile", threshold_value=1.5)
        with pytest.raises(ParameterError):
            TaskSpec(task="clustering", num_classes=3, beta=-1.0)
        with pytest.raises(ParameterError):
            TaskSpec(task="classification", num_classes=2, trainable=("heads",))

    def test_unknown_task(self):
        with pytest.raises(ParameterError):
            TaskSpec(task="segmentation")


class TestFineTuneContracts:
    def test_zero_epochs_leaves_params(self, class_setup):
        ds, labels, insts = class_setup
        spec = TaskSpec(task="classification", num_classes=2, epochs=0)
        tm = TaskModel(insts, CONCAT, spec)
        before = {k: v.copy() for k, v in tm.instances[0].encoder.params.items()}
        tm.fine_tune(ds, labels)
        assert tm.fitted
        for k, v in before.items():
            assert np.array_equal(tm.instances[0].encoder.params[k], v)

    def test_labels_required(self, class_setup):
        ds, _, insts = class_setup
        spec = TaskSpec(task="classification", num_classes=2, epochs=1)
        with pytest.raises(ParameterError):
            TaskModel(insts, CONCAT, spec).fine_tune(ds, None)

    def test_unfitted_encoders_rejected(self):
        inst = PretrainedInstance(tiny_template("contrastive_series"))
        spec = TaskSpec(task="classification", num_classes=2)
        with pytest.raises(StateError):
            TaskModel([inst], CONCAT, spec)
        build_from_scratch([inst.config], CONCAT, spec)  # explicit baseline mode

    def test_source_instances_never_mutated(self, class_setup):
        ds, labels, insts = class_setup
        before = {k: v.copy() for k, v in insts[0].encoder.params.items()}
        spec = TaskSpec(task="classification", num_classes=2, epochs=2,
                        learning_rate=1e-3)
        TaskModel(insts, CONCAT, spec).fine_tune(ds, labels)
        for k, v in before.items():
            assert np.array_equal(insts[0].encoder.params[k], v)

    def test_freezing_contract(self, class_setup):
        ds, labels, insts = class_setup
        spec = TaskSpec(task="classification", num_classes=2, epochs=2,
                        learning_rate=1e-2, trainable=("head",))
        tm = TaskModel(insts, CONCAT, spec)
        enc_before = {k: v.copy() for k, v in tm.instances[0].encoder.params.items()}
        head_before = {k: v.copy() for k, v in tm.head.params.items()}
        tm.fine_tune(ds, labels)
        for k, v in enc_before.items():
            assert np.array_equal(tm.instances[0].encoder.params[k], v)
        assert any(not np.array_equal(tm.head.params[k], v) for k, v in head_before.items())

    def test_deterministic_loss_history(self, class_setup):
        ds, labels, insts = class_setup
        hist = []
        for _ in range(2):
            spec = TaskSpec(task="classification", num_classes=2, epochs=2, seed=5)
            tm = TaskModel(insts, CONCAT, spec).fine_tune(ds, labels)
            hist.append(tm.history["loss"])
        assert np.allclose(hist[0], hist[1], atol=1e-6)

    @pytest.mark.slow
    def test_separable_classification_oracle(self):
        """Linearly separable two-class set: training accuracy >= 0.95 (3 seeds)."""
        rng = np.random.default_rng(0)
        n, t = 40, 16
        y = (np.arange(n) % 2)
        base = rng.standard_normal((n, 1, t)) * 0.1
        base[y == 1] += 1.5  # mean-shifted class
        ds = TimeSeriesDataset(base)
        labels = LabelSet("class", class_labels=y, num_classes=2)
        wins = 0
        for seed in range(3):
            tm = build_from_scratch(
                [tiny_template("contrastive_series", seed=seed,
                               encoder=TINY_ENCODER.with_seed(seed))],
                CONCAT,
                TaskSpec(task="classification", num_classes=2, epochs=50,
                         learning_rate=1e-3, seed=seed),
            )
            tm.fine_tune(ds, labels)
            pred, _ = tm.classify_predict(ds)
            wins += (pred == y).mean() >= 0.95
        assert wins >= 3


class TestClassifyPredict:
    def test_probabilities_and_ties(self, class_setup):
        ds, labels, insts = class_setup
        spec = TaskSpec(task="classification", num_classes=2, epochs=1)
        tm = TaskModel(insts, CONCAT, spec).fine_tune(ds, labels)
        pred, probs = tm.classify_predict(ds)
        assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-6)
        assert np.array_equal(pred, probs.argmax(axis=1))

    def test_argmax_rules(self):
        logits = np.array([0.1, 2.0, -1.0])
        assert int(np.argmax(logits)) == 1
        ties = np.zeros(4)
        assert int(np.argmax(ties)) == 0  # lowest index wins

    def test_softmax_shift_invariance(self):
        z = np.array([[0.3, -1.0, 2.0]])

        def softmax(a):
            e = np.exp(a - a.max(axis=1, keepdims=True))
            return e / e.sum(axis=1, keepdims=True)

        assert np.allclose(softmax(z), softmax(z + 57.0), atol=1e-9)

    def test_unfitted_predict(self, class_setup):
        ds, _, insts = class_setup
        tm = TaskModel(insts, CONCAT, TaskSpec(task="classification", num_classes=2))
        with pytest.raises(StateError):
            tm.classify_predict(ds)


class TestClustering:
    def test_kmeans_regularizer_examples(self):
        # coincident points -> penalty exactly 0
        pts = np.array([[1.0, 1.0], [1.0, 1.0], [5.0, 5.0]])
        penalty, centroids, assign = kmeans_regularizer(pts, 2, seed=0)
        assert penalty < 1e-9
        # points {0, 2} in R^1, one cluster: centroid 1, penalty 1+1=2
        penalty, centroids, _ = kmeans_regularizer(np.array([[0.0], [2.0]]), 1)
        assert abs(penalty - 2.0) < 1e-9
        assert np.allclose(centroids, [[1.0]])
        # C=N: every point its own centroid
        penalty, _, _ = kmeans_regularizer(np.array([[0.0], [4.0], [9.0]]), 3)
        assert penalty < 1e-9

    def test_regularizer_rejects_too_many_clusters(self):
        with pytest.raises(ParameterError):
            kmeans_regularizer(np.zeros((2, 2)), 3)

    def test_blob_separation(self, rng):
        blob_a = rng.standard_normal((20, 3)) * 0.05
        blob_b = rng.standard_normal((20, 3)) * 0.05 + 10.0
        pts = np.concatenate([blob_a, blob_b])
        _, assign, _ = kmeans(pts, 2, seed=1)
        from sklearn.metrics import adjusted_rand_score

        truth = np.repeat([0, 1], 20)
        assert adjusted_rand_score(truth, assign) == 1.0

    def test_single_cluster_all_zero(self, rng):
        _, assign, _ = kmeans(rng.standard_normal((7, 2)), 1)
        assert np.array_equal(assign, np.zeros(7, dtype=int))

    def test_cluster_predict_and_penalty_history(self, class_setup):
        ds, _, insts = class_setup
        spec = TaskSpec(task="clustering", num_classes=2, epochs=2, beta=0.1,
                        learning_rate=1e-4)
        tm = TaskModel(insts, CONCAT, spec).fine_tune(ds)
        assert len(tm.history["penalty"]) == 3  # each epoch start + final
        assign = tm.cluster_predict(ds)
        assert assign.shape == (ds.n,)
        assert set(np.unique(assign)) <= {0, 1}
        assert np.array_equal(assign, tm.cluster_predict(ds))  # deterministic

    def test_cluster_count_guard(self, class_setup):
        ds, _, insts = class_setup
        spec = TaskSpec(task="clustering", num_classes=2, epochs=0)
        tm = TaskModel(insts, CONCAT, spec).fine_tune(ds)
        with pytest.raises(ParameterError):
            tm.cluster_predict(ds.subset([0]))

    def test_ari_permutation_invariance(self, rng):
        from sklearn.metrics import adjusted_rand_score

        truth = rng.integers(0, 3, size=30)
        assign = rng.integers(0, 3, size=30)
        relabeled = (assign + 1) % 3
        assert abs(
            adjusted_rand_score(truth, assign) - adjusted_rand_score(truth, relabeled)
        ) < 1e-12


class TestForecasting:
    def test_zero_decoder_zero_forecast(self, class_setup):
        ds, _, insts = class_setup
        spec = TaskSpec(task="forecasting", horizon=4, epochs=0)
        tm = TaskModel(insts, CONCAT, spec).fine_tune(ds)
        tm.head.params = {k: np.zeros_like(v) for k, v in tm.head.params.items()}
        assert np.all(tm.forecast_predict(ds) == 0.0)

    def test_horizon_guard(self, class_setup):
        ds, _, insts = class_setup
        spec = TaskSpec(task="forecasting", horizon=ds.t, epochs=1)
        tm = TaskModel(insts, CONCAT, spec)
        with pytest.raises(ParameterError):
            tm.fine_tune(ds)

    @pytest.mark.slow
    def test_constant_series_converges(self):
        values = np.full((12, 1, 24), 0.8)
        ds = TimeSeriesDataset(values + np.random.default_rng(0).normal(0, 0.01, values.shape))
        insts = pretrained_instances(ds.values, epochs=0)
        spec = TaskSpec(task="forecasting", horizon=4, epochs=60, learning_rate=1e-2,
                        batch_size=12)
        tm = TaskModel(insts, CONCAT, spec).fine_tune(ds)
        pred = tm.forecast_predict(ds)
        assert np.abs(pred - 0.8).mean() < 0.05


class TestAnomaly:
    def make_model(self, ds, epochs=0, rule=("quantile", 0.99)):
        insts = pretrained_instances(ds.values)
        spec = TaskSpec(task="anomaly_detection", threshold_kind=rule[0],
                        threshold_value=rule[1], epochs=epochs, learning_rate=1e-3)
        return TaskModel(insts, CONCAT, spec).fine_tune(ds)

    def test_scores_shape_and_nonnegative(self):
        ds = sinusoid_bank(n=6, t=32, seed=2)
        tm = self.make_model(ds)
        result = tm.anomaly_scores(ds)
        assert result.scores.shape == (6, 32)
        assert np.all(result.scores >= 0.0)
        assert result.flags is None

    def test_perfect_reconstruction_zero_scores(self):
        ds = sinusoid_bank(n=4, t=16, seed=3)
        tm = self.make_model(ds)
        # force the reconstruction to echo the input
        scores = np.abs(ds.values - ds.values).mean(axis=1)
        assert np.all(scores == 0.0)

    def test_hand_score(self):
        # D=1: |0.5 - 0.7| = 0.2
        x = np.array([[[0.7]]])
        xhat = np.array([[[0.5]]])
        assert abs(np.abs(xhat - x).mean(axis=1)[0, 0] - 0.2) < 1e-12

    def test_decide_fixed_rule(self):
        result = anomaly_decide(np.array([[0.1, 0.6]]), ("fixed", 0.5))
        assert np.array_equal(result.flags, [[False, True]])
        assert result.tau == 0.5

    def test_decide_above_max_all_clear(self):
        result = anomaly_decide(np.array([[0.1, 0.6]]), ("fixed", 1.0))
        assert not result.flags.any()

    def test_decide_quantile_oracle(self):
        # q=0.5 over {1,2,3,4} -> linear-interpolation median 2.5; strict >
        calib = np.array([1.0, 2.0, 3.0, 4.0])
        result = anomaly_decide(np.array([[2.4, 2.5, 2.6]]), ("quantile", 0.5), calib)
        assert result.tau == np.quantile(calib, 0.5) == 2.5
        assert np.array_equal(result.flags, [[False, False, True]])

    def test_decide_quantile_needs_calibration(self):
        with pytest.raises(ParameterError):
            anomaly_decide(np.array([[1.0]]), ("quantile", 0.9), None)

    def test_flags_match_tau_invariant(self):
        with pytest.raises(ParameterError):
            AnomalyResult(scores=np.array([[1.0]]), flags=np.array([[True]]), tau=2.0)

    def test_monotone_threshold_sweep(self, rng):
        scores = rng.random((4, 30))
        counts = [
            anomaly_decide(scores, ("fixed", tau)).flags.sum()
            for tau in np.linspace(0, 1, 20)
        ]
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_scores_order_invariant(self):
        ds = sinusoid_bank(n=5, t=16, seed=4)
        tm = self.make_model(ds)
        fwd = tm.anomaly_scores(ds).scores
        rev = tm.anomaly_scores(ds.subset([4, 3, 2, 1, 0])).scores
        assert np.allclose(fwd, rev[::-1])


class TestImputation:
    def make_model(self, ds, epochs=0, rate=0.2):
        insts = pretrained_instances(ds.values)
        spec = TaskSpec(task="imputation", imputation_masking_rate=rate, epochs=epochs,
                        learning_rate=1e-3)
        return TaskModel(insts, CONCAT, spec).fine_tune(ds)

    def test_empty_missing_is_identity(self):
        ds = sinusoid_bank(n=3, t=16, seed=5)
        tm = self.make_model(ds)
        missing = MissingIndex.from_lists([[] for _ in range(3)])
        completed, imputed = tm.impute_predict(ds, missing)
        assert np.array_equal(completed.values, ds.values)
        assert imputed == []

    def test_only_listed_cells_replaced(self):
        ds = sinusoid_bank(n=2, t=16, seed=6)
        tm = self.make_model(ds)
        tm.head.params["w"] = np.zeros_like(tm.head.params["w"])
        tm.head.params["b"] = np.full_like(tm.head.params["b"], 7.0)  # decode everything to 7
        missing = MissingIndex.from_lists([[(0, 2)], []])
        completed, imputed = tm.impute_predict(ds, missing)
        assert completed.values[0, 0, 2] == 7.0
        assert imputed == [(0, 0, 2, 7.0)]
        untouched = np.ones_like(ds.values, dtype=bool)
        untouched[0, 0, 2] = False
        assert np.array_equal(completed.values[untouched], ds.values[untouched])

    def test_out_of_range_positions(self):
        ds = sinusoid_bank(n=2, t=16, seed=7)
        tm = self.make_model(ds)
        with pytest.raises(ParameterError):
            tm.impute_predict(ds, MissingIndex.from_lists([[(0, 99)], []]))

    def test_deterministic_fit(self):
        ds = sinusoid_bank(n=8, t=16, seed=8)
        curves = []
        for _ in range(2):
            tm = self.make_model(ds, epochs=2)
            curves.append(tm.history["loss"])
        assert np.allclose(curves[0], curves[1], atol=1e-6)

    def test_rate_zero_is_plain_autoencoder(self):
        ds = sinusoid_bank(n=6, t=16, seed=9)
        tm = self.make_model(ds, epochs=1, rate=0.0)
        assert np.isfinite(tm.history["loss"][0])

    @pytest.mark.slow
    def test_constant_dataset_converges(self):
        values = np.full((10, 1, 16), 0.5)
        ds = TimeSeriesDataset(values + np.random.default_rng(1).normal(0, 0.01, values.shape))
        tm = self.make_model(ds, epochs=60)
        recon = tm._reconstruct(ds.values)
        assert np.abs(recon - 0.5).mean() < 0.05
