import numpy as np
import pytest

from flaegis.core import flatten
from flaegis.learner import (
    Dataset,
    MlpModel,
    TrainConfig,
    dirichlet_partition,
    evaluate,
    gradient,
    label_entropy,
    load_csv,
    local_train,
    synth_dataset,
)


def small_model(seed=0, sizes=(8, 16, 5)):
    return MlpModel(sizes, seed=seed)


class TestModel:
    def test_softmax_rows_sum_to_one(self):
        m = small_model()
        rng = np.random.Generator(np.random.PCG64(1))
        m.set_flat(rng.normal(size=m.param_count()))
        p = m.forward(rng.normal(size=(40, 8)))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(np.isfinite(p))

    def test_param_count_desk_model(self):
        assert small_model().param_count() == 229

    def test_flat_round_trip(self):
        m = small_model(3)
        rng = np.random.Generator(np.random.PCG64(5))
        v = rng.normal(size=m.param_count())
        m.set_flat(v)
        np.testing.assert_array_equal(m.get_flat(), v)

    def test_initial_prediction_uniform(self):
        # zero output layer -> exactly uniform class probabilities
        m = small_model(9)
        p = m.forward(np.random.Generator(np.random.PCG64(0)).normal(size=(10, 8)))
        np.testing.assert_allclose(p, 0.2, atol=1e-12)


class TestGradient:
    def central_diff(self, model, ds, eps=1e-4):
        base = model.get_flat()
        g = np.zeros_like(base)
        for i in range(base.size):
            for s, out in ((+eps, 0), (-eps, 1)):
                v = base.copy()
                v[i] += s
                model.set_flat(v)
                probs = model.forward(ds.x)
                loss = -np.mean(np.log(probs[np.arange(ds.n), ds.y] + 1e-300))
                if out == 0:
                    up = loss
                else:
                    down = loss
            g[i] = (up - down) / (2 * eps)
        model.set_flat(base)
        return g

    def test_matches_finite_differences(self):
        rng = np.random.Generator(np.random.PCG64(2))
        for trial in range(3):
            m = MlpModel([4, 6, 3], seed=trial)
            m.set_flat(rng.normal(scale=0.5, size=m.param_count()))
            ds = Dataset(rng.normal(size=(12, 4)), rng.integers(0, 3, size=12))
            g = gradient(m, ds)
            fd = self.central_diff(m, ds)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel <= 1e-4

    def test_duplicated_batch_invariant(self):
        rng = np.random.Generator(np.random.PCG64(3))
        m = MlpModel([4, 6, 3], seed=1)
        m.set_flat(rng.normal(scale=0.5, size=m.param_count()))
        ds = Dataset(rng.normal(size=(8, 4)), rng.integers(0, 3, size=8))
        doubled = Dataset(np.vstack([ds.x, ds.x]), np.concatenate([ds.y, ds.y]))
        np.testing.assert_allclose(gradient(m, ds), gradient(m, doubled), atol=1e-12)

    def test_tied_units_symmetric_gradient(self):
        # two hidden units with identical weights see identical gradients
        m = MlpModel([3, 2, 2], seed=0)
        m.weights[0] = np.array([[0.3, 0.3], [0.1, 0.1], [-0.2, -0.2]])
        m.biases[0] = np.array([0.05, 0.05])
        m.weights[1] = np.array([[0.4, -0.4], [0.4, -0.4]])
        m.biases[1] = np.zeros(2)
        rng = np.random.Generator(np.random.PCG64(4))
        ds = Dataset(rng.normal(size=(6, 3)), rng.integers(0, 2, size=6))
        _, gw, _ = m.loss_and_grads(ds.x, ds.y)
        np.testing.assert_allclose(gw[0][:, 0], gw[0][:, 1], atol=1e-12)


class TestSynthDataset:
    def test_deterministic(self):
        a = synth_dataset(11, n=50, d=3, C=4)
        b = synth_dataset(11, n=50, d=3, C=4)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)

    def test_rejects_more_classes_than_samples(self):
        with pytest.raises(ValueError):
            synth_dataset(0, n=3, d=2, C=5)

    def test_single_class(self):
        ds = synth_dataset(0, n=10, d=2, C=1)
        assert set(ds.y.tolist()) == {0}

    def test_linearly_separable_when_tight(self):
        ds = synth_dataset(7, n=10, d=2, C=2, cluster_spread=0.01)
        # one-layer perceptron trained by hand reaches 100% on separable data
        w = np.zeros((2, 2))
        b = np.zeros(2)
        for _ in range(200):
            scores = ds.x @ w + b
            pred = scores.argmax(axis=1)
            for i in np.flatnonzero(pred != ds.y):
                w[:, ds.y[i]] += 0.1 * ds.x[i]
                b[ds.y[i]] += 0.1
                w[:, pred[i]] -= 0.1 * ds.x[i]
                b[pred[i]] -= 0.1
        final = (ds.x @ w + b).argmax(axis=1)
        assert (final == ds.y).mean() == 1.0

    def test_labels_balanced(self):
        ds = synth_dataset(1, n=100, d=4, C=5)
        counts = np.bincount(ds.y, minlength=5)
        assert counts.min() == counts.max() == 20


class TestDirichletPartition:
    def test_true_partition(self):
        ds = synth_dataset(3, n=200, d=4, C=5)
        parts = dirichlet_partition(ds, K=7, alpha=0.5, seed=5)
        assert sum(p.n for p in parts) == ds.n
        # multiset union of rows equals the source rows
        all_rows = np.vstack([p.x for p in parts])
        src = ds.x[np.lexsort(ds.x.T)]
        got = all_rows[np.lexsort(all_rows.T)]
        np.testing.assert_array_equal(src, got)

    def test_no_empty_clients(self):
        ds = synth_dataset(4, n=100, d=2, C=5)
        for seed in range(5):
            parts = dirichlet_partition(ds, K=10, alpha=0.1, seed=seed)
            assert all(p.n > 0 for p in parts)

    def test_rejects_too_few_samples(self):
        ds = synth_dataset(0, n=5, d=2, C=2)
        with pytest.raises(ValueError):
            dirichlet_partition(ds, K=6, alpha=1.0, seed=0)

    def test_single_client_gets_everything(self):
        ds = synth_dataset(2, n=30, d=2, C=3)
        parts = dirichlet_partition(ds, K=1, alpha=0.5, seed=0)
        assert len(parts) == 1 and parts[0].n == 30

    def test_high_alpha_near_uniform(self):
        ds = synth_dataset(5, n=2000, d=2, C=5)
        parts = dirichlet_partition(ds, K=10, alpha=1e6, seed=1)
        ents = [label_entropy(p, 5) for p in parts]
        assert min(ents) > 0.99

    def test_low_alpha_skewed(self):
        ds = synth_dataset(6, n=4000, d=2, C=5)
        parts = dirichlet_partition(ds, K=20, alpha=0.1, seed=2)
        mean_ent = np.mean([label_entropy(p, 5) for p in parts])
        assert mean_ent < 0.8

    def test_deterministic(self):
        ds = synth_dataset(8, n=300, d=2, C=4)
        a = dirichlet_partition(ds, K=5, alpha=0.5, seed=9)
        b = dirichlet_partition(ds, K=5, alpha=0.5, seed=9)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.x, pb.x)
            np.testing.assert_array_equal(pa.y, pb.y)


class TestLabelEntropy:
    def test_uniform_is_one(self):
        ds = Dataset(np.zeros((10, 1)), np.arange(10) % 5)
        assert label_entropy(ds, 5) == pytest.approx(1.0)

    def test_single_class_is_zero(self):
        ds = Dataset(np.zeros((10, 1)), np.zeros(10, dtype=int))
        assert label_entropy(ds, 5) == 0.0


class TestLocalTrain:
    def test_zero_epochs_identity(self):
        m = small_model(1)
        ds = synth_dataset(1, n=40, d=8, C=5)
        out = local_train(m, ds, TrainConfig(epochs=0), seed=0)
        np.testing.assert_array_equal(out, m.get_flat())

    def test_deterministic(self):
        m = small_model(2)
        ds = synth_dataset(2, n=64, d=8, C=5)
        cfg = TrainConfig(epochs=2, batch_size=16)
        a = local_train(m, ds, cfg, seed=77)
        b = local_train(m, ds, cfg, seed=77)
        np.testing.assert_array_equal(a, b)

    def test_does_not_mutate_input_model(self):
        m = small_model(3)
        before = m.get_flat().copy()
        ds = synth_dataset(3, n=64, d=8, C=5)
        local_train(m, ds, TrainConfig(), seed=1)
        np.testing.assert_array_equal(m.get_flat(), before)

    def test_separable_toy_reaches_95(self):
        ds = synth_dataset(4, n=60, d=4, C=2, cluster_spread=0.05)
        m = MlpModel([4, 8, 2], seed=0)
        out = local_train(m, ds, TrainConfig(epochs=50, batch_size=16), seed=3)
        m2 = MlpModel([4, 8, 2], seed=0)
        m2.set_flat(out)
        assert evaluate(m2, ds) >= 0.95

    def test_seed_changes_batch_order(self):
        m = small_model(5)
        ds = synth_dataset(5, n=64, d=8, C=5)
        cfg = TrainConfig(epochs=1, batch_size=8)
        a = local_train(m, ds, cfg, seed=1)
        b = local_train(m, ds, cfg, seed=2)
        assert not np.array_equal(a, b)


class TestEvaluate:
    def test_constant_predictor_scores_one_over_c(self):
        m = small_model(0)  # zero output layer -> uniform probs -> argmax class 0
        ds = synth_dataset(0, n=500, d=8, C=5)
        acc = evaluate(m, ds)
        assert acc == pytest.approx(0.2, abs=1e-9)

    def test_random_init_near_chance(self):
        ds = synth_dataset(1, n=500, d=8, C=5)
        accs = [evaluate(small_model(s), ds) for s in range(5)]
        assert all(abs(a - 0.2) <= 0.1 for a in accs)


class TestCsvLoader:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "toy.csv"
        p.write_text("f0,f1,label\n0.5,1.5,0\n-1.0,2.0,1\n")
        ds = load_csv(p)
        assert ds.n == 2 and ds.d == 2
        np.testing.assert_array_equal(ds.y, [0, 1])

    def test_rejects_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            load_csv(p)
