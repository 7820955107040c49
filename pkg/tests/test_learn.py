import numpy as np
import pytest

from trinketauth.errors import (
    DegenerateTrainingSet,
    FeatureWidthMismatch,
    UndefinedMetric,
)
from trinketauth.learn import (
    Dataset,
    EvalReport,
    Model,
    compute_eer,
    evaluate,
    mlp_loss_and_grads,
    roc_auc,
    train,
)


def separable_dataset(rng, n=200):
    X0 = rng.normal([-2, -2], 0.5, size=(n // 2, 2))
    X1 = rng.normal([2, 2], 0.5, size=(n // 2, 2))
    X = np.vstack([X0, X1])
    y = np.r_[np.zeros(n // 2, int), np.ones(n // 2, int)]
    idx = rng.permutation(n)
    return Dataset(X[idx], y[idx])


def xor_dataset(rng, n=400):
    centers = [((-2, -2), 0), ((2, 2), 0), ((-2, 2), 1), ((2, -2), 1)]
    X, y = [], []
    for (cx, cy), label in centers:
        X.append(rng.normal([cx, cy], 0.5, size=(n // 4, 2)))
        y += [label] * (n // 4)
    X = np.vstack(X)
    y = np.array(y)
    idx = rng.permutation(len(y))
    return Dataset(X[idx], y[idx])


def accuracy(model, ds):
    return np.mean([model.predict(r) == l for r, l in zip(ds.X, ds.y)])


class TestTrain:
    @pytest.mark.parametrize("kind", ["TREE", "RF", "MLP"])
    def test_separable_training_accuracy(self, kind):
        ds = separable_dataset(np.random.default_rng(0))
        model = train(kind, ds, seed=1)
        assert accuracy(model, ds) == 1.0

    def test_xor_rf_mlp_beat_stump(self):
        rng = np.random.default_rng(1)
        train_ds = xor_dataset(rng)
        test_ds = xor_dataset(rng)
        rf = train("RF", train_ds, seed=2)
        mlp = train("MLP", train_ds, {"epochs": 400, "lr": 0.3}, seed=2)
        stump = train("TREE", train_ds, {"max_depth": 1}, seed=2)
        assert accuracy(rf, test_ds) > 0.95
        assert accuracy(mlp, test_ds) > 0.95
        assert accuracy(stump, test_ds) <= 0.75
        assert accuracy(rf, test_ds) >= accuracy(stump, test_ds)

    def test_deterministic_same_seed(self):
        ds = separable_dataset(np.random.default_rng(2), n=60)
        for kind in ("TREE", "RF", "MLP"):
            hp = {"n_trees": 10} if kind == "RF" else {"epochs": 5}
            m1 = train(kind, ds, hp, seed=7)
            m2 = train(kind, ds, hp, seed=7)
            assert m1.to_json() == m2.to_json()

    def test_single_class_raises(self):
        X = np.zeros((10, 2))
        with pytest.raises(DegenerateTrainingSet):
            train("RF", Dataset(X, np.ones(10, int)))

    def test_unknown_kind(self):
        ds = separable_dataset(np.random.default_rng(3), n=20)
        with pytest.raises(ValueError):
            train("SVM", ds)

    def test_mlp_loss_decreases_per_epoch(self):
        ds = separable_dataset(np.random.default_rng(4))
        model = train("MLP", ds, {"epochs": 50}, seed=3)
        hist = model.params["loss_history"]
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


class TestPredictProba:
    def test_rf_unanimous(self):
        trees = [{"prob": 1.0} for _ in range(10)]
        m = Model(kind="RF", n_features=2, seed=0, params={"trees": trees})
        assert m.predict_proba(np.zeros(2)) == 1.0

    def test_rf_vote_fraction(self):
        trees = [{"prob": 1.0}] * 50 + [{"prob": 0.0}] * 50
        m = Model(kind="RF", n_features=2, seed=0, params={"trees": trees})
        assert m.predict_proba(np.zeros(2)) == 0.5

    def test_width_mismatch(self):
        m = Model(kind="RF", n_features=3, seed=0, params={"trees": [{"prob": 1.0}]})
        with pytest.raises(FeatureWidthMismatch):
            m.predict_proba(np.zeros(2))

    def test_output_in_unit_interval(self):
        ds = xor_dataset(np.random.default_rng(5), n=80)
        for kind in ("TREE", "RF", "MLP"):
            hp = {"n_trees": 10} if kind == "RF" else {"epochs": 20}
            m = train(kind, ds, hp, seed=1)
            for row in ds.X[:10]:
                assert 0.0 <= m.predict_proba(row) <= 1.0


class TestMlpGradientCheck:
    def test_analytic_vs_finite_differences(self):
        rng = np.random.default_rng(6)
        for trial in range(5):
            X = rng.normal(size=(5, 4))
            y = rng.integers(0, 2, size=5).astype(np.float64)
            params = {
                "w1": rng.normal(0, 0.5, size=(4, 3)),
                "b1": rng.normal(0, 0.1, size=3),
                "w2": rng.normal(0, 0.5, size=(3, 1)),
                "b2": rng.normal(0, 0.1, size=1),
            }
            _, grads = mlp_loss_and_grads(params, X, y)
            eps = 1e-6
            for key in params:
                flat = params[key].ravel()
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + eps
                    lp, _ = mlp_loss_and_grads(params, X, y)
                    flat[i] = orig - eps
                    lm, _ = mlp_loss_and_grads(params, X, y)
                    flat[i] = orig
                    num = (lp - lm) / (2 * eps)
                    ana = grads[key].ravel()[i]
                    denom = max(abs(num), abs(ana), 1e-8)
                    assert abs(num - ana) / denom < 1e-4


class TestSerialization:
    @pytest.mark.parametrize("kind", ["TREE", "RF", "MLP"])
    def test_round_trip_bit_exact(self, tmp_path, kind):
        ds = separable_dataset(np.random.default_rng(7), n=60)
        hp = {"n_trees": 10} if kind == "RF" else {"epochs": 10}
        m = train(kind, ds, hp, seed=5)
        p = tmp_path / "model.json"
        m.save(p)
        m2 = Model.load(p)
        assert m.to_json() == m2.to_json()
        for row in ds.X[:10]:
            assert m.predict_proba(row) == m2.predict_proba(row)

    def test_rejects_foreign_file(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text('{"foo": 1}')
        with pytest.raises(ValueError):
            Model.load(p)


class TestEvaluate:
    def test_perfect_separation(self):
        scores = [(1.0, 1)] * 10 + [(0.0, 0)] * 10
        r = evaluate(scores, 0.5)
        assert (r.far, r.frr, r.f_measure) == (0.0, 0.0, 100.0)

    def test_constant_scores_all_accepted(self):
        rng = np.random.default_rng(8)
        scores = [(0.7, int(l)) for l in rng.integers(0, 2, size=50)]
        if not any(l == 0 for _, l in scores) or not any(l == 1 for _, l in scores):
            pytest.skip("degenerate draw")
        r = evaluate(scores, 0.5)
        assert r.frr == 0.0
        assert r.far == 100.0

    def test_reported_fold_shape_arithmetic(self):
        # 35 genuine (2 FR), 1190 fraud (1 FA)
        scores = [(0.9, 1)] * 33 + [(0.1, 1)] * 2 + [(0.9, 0)] * 1 + [(0.1, 0)] * 1189
        r = evaluate(scores, 0.5)
        assert r.far == pytest.approx(100.0 / 1190, abs=1e-6)
        assert r.far == pytest.approx(0.084, abs=0.001)
        assert r.frr == pytest.approx(200.0 / 35, abs=1e-6)
        assert r.frr == pytest.approx(5.71, abs=0.01)

    def test_one_class_raises(self):
        with pytest.raises(UndefinedMetric):
            evaluate([(0.5, 1), (0.6, 1)], 0.5)

    def test_far_frr_monotone_in_threshold(self):
        rng = np.random.default_rng(9)
        scores = [(float(rng.uniform()), int(rng.integers(0, 2)))
                  for _ in range(300)]
        prev_far, prev_frr = None, None
        for t in np.linspace(0, 1.01, 40):
            r = evaluate(scores, t)
            if prev_far is not None:
                assert r.far <= prev_far + 1e-12   # FAR falls as t rises
                assert r.frr >= prev_frr - 1e-12   # FRR rises as t rises
            prev_far, prev_frr = r.far, r.frr


class TestComputeEer:
    def test_perfect_separation_zero(self):
        scores = [(1.0, 1)] * 20 + [(0.0, 0)] * 20
        eer, _ = compute_eer(scores)
        assert eer == 0.0

    def test_identical_distributions_near_half(self):
        rng = np.random.default_rng(10)
        scores = [(float(rng.uniform()), int(rng.integers(0, 2)))
                  for _ in range(10_000)]
        eer, _ = compute_eer(scores)
        assert abs(eer - 50.0) <= 3.0

    def test_overlapping_uniforms_analytic(self):
        # genuine ~ U(0.4, 1.0), fraud ~ U(0.0, 0.6): EER = 1/6
        rng = np.random.default_rng(11)
        n = 10_000
        scores = [(float(rng.uniform(0.4, 1.0)), 1) for _ in range(n)]
        scores += [(float(rng.uniform(0.0, 0.6)), 0) for _ in range(n)]
        eer, thr = compute_eer(scores)
        assert abs(eer - 100.0 / 6) <= 1.5
        assert abs(thr - 0.5) <= 0.02

    def test_one_class_raises(self):
        with pytest.raises(UndefinedMetric):
            compute_eer([(0.5, 0)])


class TestRocAuc:
    def test_perfect(self):
        assert roc_auc([(1.0, 1), (0.0, 0)]) == 1.0

    def test_random_near_half(self):
        rng = np.random.default_rng(12)
        scores = [(float(rng.uniform()), int(rng.integers(0, 2)))
                  for _ in range(4000)]
        assert abs(roc_auc(scores) - 0.5) < 0.05
