import math

import mpmath
import numpy as np
import pytest

from kforms.data import PathDatasetSpec, gen_paths
from kforms.model import (
    Dataset,
    Item,
    TrainConfig,
    TrainingDivergence,
    build_classifier,
    cross_entropy,
    evaluate,
    finite_difference_error,
    kfold_cv,
    load_classifier,
    readout_backward,
    readout_forward,
    rechain_dataset,
    save_classifier,
    stratified_folds,
    stratified_split,
    train,
)
from kforms.nn import Mlp
from kforms.simplicial import Chain, ChainTuple, Embedding, build_complex, standard_basis_chains


def tiny_paths(samples=8, points=6, seed=0) -> Dataset:
    return gen_paths(PathDatasetSpec(samples_per_class=samples, points_per_path=points, seed=seed))


def small_item(rng, label=0) -> Item:
    complex_ = build_complex([(0, 1, 2)], num_vertices=3)
    emb = Embedding(rng.normal(size=(3, 2)))
    return Item(complex_, emb, standard_basis_chains(complex_, 1), label)


class TestReadouts:
    X = np.array([[1.0, -2.0], [3.0, 4.0]])

    def test_forward_values(self):
        assert np.allclose(readout_forward("column_sum", self.X), [4.0, 2.0])
        assert np.allclose(readout_forward("column_l1", self.X), [4.0, 6.0])
        assert np.allclose(
            readout_forward("column_l2", self.X), [math.sqrt(10.0), math.sqrt(20.0)]
        )

    def test_unknown_readout_rejected(self):
        with pytest.raises(ValueError):
            readout_forward("column_max", self.X)
        with pytest.raises(ValueError):
            readout_backward("column_max", self.X, np.ones(2), np.ones(2))

    @pytest.mark.parametrize("kind", ["column_sum", "column_l1", "column_l2"])
    def test_backward_matches_finite_differences(self, kind):
        rng = np.random.default_rng(14)
        for trial in range(10):
            X = rng.normal(size=(4, 3)) + 0.5  # keep entries away from the l1 kink
            d_feats = rng.normal(size=3)
            feats = readout_forward(kind, X)
            dX = readout_backward(kind, X, feats, d_feats)
            eps = 1e-7
            for a in range(4):
                for b in range(3):
                    Xp, Xm = X.copy(), X.copy()
                    Xp[a, b] += eps
                    Xm[a, b] -= eps
                    fd = np.dot(
                        d_feats, readout_forward(kind, Xp) - readout_forward(kind, Xm)
                    ) / (2 * eps)
                    assert dX[a, b] == pytest.approx(fd, abs=1e-6)

    def test_l1_subgradient_at_zero_is_zero(self):
        X = np.array([[0.0, 1.0]])
        dX = readout_backward("column_l1", X, readout_forward("column_l1", X), np.ones(2))
        assert dX[0, 0] == 0.0
        assert dX[0, 1] == 1.0

    def test_l2_zero_column_gets_zero_gradient(self):
        X = np.array([[0.0, 2.0], [0.0, -1.0]])
        feats = readout_forward("column_l2", X)
        dX = readout_backward("column_l2", X, feats, np.ones(2))
        assert np.all(dX[:, 0] == 0.0)
        assert np.all(np.isfinite(dX))

    def test_row_order_is_irrelevant(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(6, 2))
        shuffled = X[rng.permutation(6)]
        for kind in ("column_sum", "column_l1", "column_l2"):
            assert np.allclose(
                readout_forward(kind, X), readout_forward(kind, shuffled), atol=1e-12
            )


class TestCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        for c in (2, 3, 10):
            loss, grad = cross_entropy(np.zeros(c), 0)
            assert loss == pytest.approx(math.log(c), abs=1e-12)
            assert grad.sum() == pytest.approx(0.0, abs=1e-12)

    def test_matches_mpmath_oracle(self):
        mpmath.mp.dps = 50
        rng = np.random.default_rng(21)
        for trial in range(20):
            logits = rng.normal(scale=3.0, size=int(rng.integers(2, 6)))
            label = int(rng.integers(logits.size))
            loss, grad = cross_entropy(logits, label)
            exps = [mpmath.e ** mpmath.mpf(z) for z in logits]
            total = sum(exps)
            expected = -mpmath.log(exps[label] / total)
            assert loss == pytest.approx(float(expected), abs=1e-12)
            for i in range(logits.size):
                p_i = float(exps[i] / total)
                assert grad[i] == pytest.approx(p_i - (i == label), abs=1e-12)

    def test_shift_invariance(self):
        logits = np.array([1.0, -2.0, 0.5])
        base, _ = cross_entropy(logits, 2)
        shifted, _ = cross_entropy(logits + 1000.0, 2)
        assert shifted == pytest.approx(base, abs=1e-9)

    def test_extreme_logits_stay_finite(self):
        loss, grad = cross_entropy(np.array([1e4, -1e4]), 1)
        assert math.isfinite(loss)
        assert np.all(np.isfinite(grad))
        assert loss == pytest.approx(2e4, rel=1e-12)


class TestDataset:
    def test_label_bounds_checked(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="label"):
            Dataset((small_item(rng, label=5),), num_classes=2)

    def test_ambient_dims_must_agree(self):
        rng = np.random.default_rng(0)
        complex_ = build_complex([(0, 1)], num_vertices=2)
        a = Item(complex_, Embedding(np.zeros((2, 2))), standard_basis_chains(complex_, 1), 0)
        b = Item(complex_, Embedding(np.zeros((2, 3))), standard_basis_chains(complex_, 1), 0)
        with pytest.raises(ValueError, match="ambient"):
            Dataset((a, b), num_classes=1)

    def test_split_indices_checked(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="split"):
            Dataset((small_item(rng),), num_classes=1, splits={"train": (4,)})

    def test_subset_and_labels(self):
        data = tiny_paths(samples=3)
        sub = data.subset([0, 4, 8])
        assert len(sub) == 3
        assert np.array_equal(sub.labels(), data.labels()[[0, 4, 8]])

    def test_rechain_swaps_in_vertex_basis(self):
        data = tiny_paths(samples=2)
        flat = rechain_dataset(data, 0)
        assert flat.chain_dim == 0
        item = flat.items[0]
        assert len(item.chains) == item.complex.num_simplices(0)
        assert item.complex is data.items[0].complex


class TestTrainConfig:
    def test_defaults_are_valid(self):
        cfg = TrainConfig()
        assert cfg.lr == 1e-3
        assert cfg.batch_size == 16
        assert cfg.hidden_dim == 16
        assert cfg.steps == 5
        assert cfg.max_epochs == 100
        assert cfg.early_stop_patience == 40

    @pytest.mark.parametrize(
        "bad",
        [
            {"k": -1},
            {"num_forms": 0},
            {"lr": 0.0},
            {"max_epochs": -1},
            {"plateau_factor": 0.0},
            {"plateau_factor": 1.5},
            {"readout": "nope"},
            {"val_fraction": 1.0},
            {"early_stop_patience": 0},
        ],
    )
    def test_invalid_values_rejected(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


class TestClassifier:
    def test_headless_needs_matching_classes(self):
        cfg = TrainConfig(num_forms=3, use_head=False)
        with pytest.raises(ValueError, match="headless"):
            build_classifier(2, 2, cfg, np.random.default_rng(0))

    def test_head_input_dim_checked(self):
        from kforms.forms import NeuralKForm
        from kforms.model import KFormClassifier

        form = NeuralKForm.init(2, 1, 3, (4,), "tanh", np.random.default_rng(0))
        head = Mlp.init([5, 4, 2], "tanh", np.random.default_rng(0))
        with pytest.raises(ValueError, match="head"):
            KFormClassifier(form, head, "column_sum")

    def test_headless_logits_are_features(self):
        rng = np.random.default_rng(7)
        cfg = TrainConfig(num_forms=3, use_head=False, activation="tanh")
        clf = build_classifier(2, 3, cfg, rng)
        item = small_item(rng, label=1)
        assert np.array_equal(clf.forward(item), clf.features(item))

    def test_predict_is_argmax(self):
        rng = np.random.default_rng(8)
        cfg = TrainConfig(num_forms=2, hidden_dim=4)
        clf = build_classifier(2, 2, cfg, rng)
        item = small_item(rng)
        assert clf.predict(item) == int(np.argmax(clf.forward(item)))

    def test_minimum_classes(self):
        with pytest.raises(ValueError, match="2 classes"):
            build_classifier(2, 1, TrainConfig(), np.random.default_rng(0))

    def test_norm_readouts_ignore_chain_orientation(self):
        rng = np.random.default_rng(9)
        complex_ = build_complex([(0, 1, 2)], num_vertices=3)
        emb = Embedding(rng.normal(size=(3, 2)))
        basis = standard_basis_chains(complex_, 1)
        flipped = ChainTuple(tuple(c.scaled(-1.0) for c in basis))
        for kind in ("column_l1", "column_l2"):
            cfg = TrainConfig(num_forms=2, readout=kind, activation="tanh")
            clf = build_classifier(2, 2, cfg, np.random.default_rng(9))
            a = clf.features(Item(complex_, emb, basis, 0))
            b = clf.features(Item(complex_, emb, flipped, 0))
            assert np.allclose(a, b, atol=1e-14)


class TestEvaluate:
    def test_counts_with_constant_logits(self):
        # a head with zero weights and a fixed bias always predicts class 0
        from kforms.forms import NeuralKForm
        from kforms.model import KFormClassifier

        rng = np.random.default_rng(10)
        form = NeuralKForm.init(2, 1, 2, (3,), "tanh", rng)
        head = Mlp(weights=[np.zeros((2, 2))], biases=[np.array([1.0, 0.0])])
        clf = KFormClassifier(form, head, "column_sum")
        data = tiny_paths(samples=4)  # labels 0,1,2 but only 2 head outputs
        data = Dataset(tuple(Item(i.complex, i.embedding, i.chains, i.label % 2) for i in data.items), 2)
        rep = evaluate(clf, data)
        assert rep.per_class_total == (
            sum(1 for i in data.items if i.label == 0),
            sum(1 for i in data.items if i.label == 1),
        )
        assert rep.per_class_correct[0] == rep.per_class_total[0]
        assert rep.per_class_correct[1] == 0
        assert rep.accuracy == pytest.approx(rep.per_class_total[0] / len(data))
        expected_loss = np.mean(
            [cross_entropy(np.array([1.0, 0.0]), it.label)[0] for it in data.items]
        )
        assert rep.loss == pytest.approx(expected_loss, abs=1e-12)

    def test_empty_selection_rejected(self):
        rng = np.random.default_rng(11)
        cfg = TrainConfig(num_forms=2, hidden_dim=3)
        clf = build_classifier(2, 2, cfg, rng)
        with pytest.raises(ValueError):
            evaluate(clf, tiny_paths(samples=2), indices=[])


class TestSplits:
    def test_stratified_split_properties(self):
        rng = np.random.default_rng(12)
        labels = np.repeat([0, 1, 2], 20)
        rest, held = stratified_split(labels, 0.25, rng)
        assert set(rest) | set(held) == set(range(60))
        assert set(rest) & set(held) == set()
        for cls in range(3):
            assert np.sum(labels[held] == cls) == 5

    def test_singleton_class_stays_in_rest(self):
        rng = np.random.default_rng(13)
        labels = np.array([0, 0, 0, 0, 1])
        rest, held = stratified_split(labels, 0.5, rng)
        assert 4 in rest
        assert np.sum(labels[held] == 0) >= 1

    def test_stratified_folds_partition(self):
        rng = np.random.default_rng(14)
        labels = np.repeat([0, 1], [21, 14])
        folds = stratified_folds(labels, 5, rng)
        all_idx = np.concatenate(folds)
        assert sorted(all_idx) == list(range(35))
        sizes = [
            [int(np.sum(labels[f] == cls)) for f in folds] for cls in (0, 1)
        ]
        for per_class in sizes:
            assert max(per_class) - min(per_class) <= 1

    def test_small_class_rejected(self):
        rng = np.random.default_rng(15)
        labels = np.array([0] * 10 + [1] * 3)
        with pytest.raises(ValueError, match="fewer than"):
            stratified_folds(labels, 5, rng)

    def test_minimum_fold_count(self):
        with pytest.raises(ValueError):
            stratified_folds(np.zeros(4, dtype=int), 1, np.random.default_rng(0))


class TestTrain:
    def test_history_structure_and_determinism(self):
        data = tiny_paths()
        cfg = TrainConfig(max_epochs=3, hidden_dim=4, num_forms=3, use_head=False, seed=5)
        r1 = train(cfg, data)
        r2 = train(cfg, data)
        assert r1.history == r2.history
        assert [row["epoch"] for row in r1.history] == [0, 0, 1, 1, 2, 2, 3, 3]
        assert {row["split"] for row in r1.history} == {"train", "val"}
        for row in r1.history:
            assert set(row) == {"epoch", "split", "loss", "accuracy"}

    def test_zero_epochs_only_records_initial_state(self):
        data = tiny_paths()
        cfg = TrainConfig(max_epochs=0, hidden_dim=4, num_forms=3, use_head=False)
        result = train(cfg, data)
        assert len(result.history) == 2
        assert result.best_epoch == 0

    def test_best_parameters_are_restored(self):
        data = tiny_paths()
        cfg = TrainConfig(max_epochs=4, hidden_dim=4, num_forms=3, use_head=False, seed=2)
        result = train(cfg, data)
        rep = evaluate(result.classifier, data, result.val_indices)
        assert rep.loss == result.best_val_loss

    def test_explicit_splits_are_honored(self):
        base = tiny_paths()
        train_idx = tuple(range(0, len(base), 2))
        val_idx = tuple(range(1, len(base), 2))
        data = Dataset(base.items, base.num_classes, {"train": train_idx, "val": val_idx})
        cfg = TrainConfig(max_epochs=1, hidden_dim=4, num_forms=3, use_head=False)
        result = train(cfg, data)
        assert np.array_equal(result.train_indices, np.array(train_idx))
        assert np.array_equal(result.val_indices, np.array(val_idx))

    def test_chain_dimension_checked(self):
        data = tiny_paths()
        cfg = TrainConfig(k=2, max_epochs=1, hidden_dim=4, num_forms=3, use_head=False)
        with pytest.raises(ValueError, match="dimension"):
            train(cfg, data)

    def test_early_stopping_shortens_but_never_changes_prefix(self):
        # sgd steps of 1e-30 leave the validation loss bit-identical, so
        # every epoch is stale and patience 2 must trip at epoch 2
        data = tiny_paths(samples=6, seed=3)
        kw = dict(max_epochs=25, hidden_dim=4, num_forms=3, use_head=False,
                  seed=4, optimizer="sgd", lr=1e-30)
        short = train(TrainConfig(early_stop_patience=2, **kw), data)
        long = train(TrainConfig(early_stop_patience=40, **kw), data)
        n = len(short.history)
        assert n == 2 * 3  # epochs 0..2, two rows each
        assert short.history == long.history[:n]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_is_reported(self):
        data = tiny_paths(samples=4)
        cfg = TrainConfig(
            max_epochs=10, hidden_dim=4, num_forms=3, optimizer="sgd", lr=1e12,
        )
        with pytest.raises(TrainingDivergence):
            train(cfg, data)


class TestKFoldCv:
    def test_folds_are_disjoint_and_exhaustive(self):
        data = tiny_paths(samples=5)
        cfg = TrainConfig(max_epochs=1, hidden_dim=3, num_forms=3, use_head=False, seed=1)
        cv = kfold_cv(cfg, data, folds=3)
        assert len(cv.folds) == 3
        assert len(cv.accuracies) == 3
        assert cv.mean_accuracy == pytest.approx(np.mean(cv.accuracies))
        assert cv.std_accuracy == pytest.approx(np.std(cv.accuracies))
        tested = [f.report for f in cv.folds]
        assert sum(sum(r.per_class_total) for r in tested) == len(data)

    def test_class_smaller_than_fold_count_rejected(self):
        data = tiny_paths(samples=3)
        cfg = TrainConfig(max_epochs=1, hidden_dim=3, num_forms=3, use_head=False)
        with pytest.raises(ValueError, match="fewer than"):
            kfold_cv(cfg, data, folds=4)


class TestGradCheckHarness:
    def test_small_pipelines_pass_and_corruption_fails(self):
        from kforms._gradcheck_cases import build_cases

        cases = build_cases(0)
        assert len(cases) == 6
        label, clf, item = cases[3]
        assert finite_difference_error(clf, item) < 1e-4
        assert finite_difference_error(clf, item, corrupt=True) > 1e-2


class TestClassifierCheckpoints:
    def test_round_trip_with_head(self, tmp_path):
        rng = np.random.default_rng(30)
        cfg = TrainConfig(num_forms=2, hidden_dim=4, readout="column_l2", steps=3)
        clf = build_classifier(2, 3, cfg, rng)
        path = tmp_path / "clf.kfc"
        save_classifier(clf, path)
        loaded = load_classifier(path)
        assert loaded.readout == "column_l2"
        assert loaded.steps == 3
        item = small_item(rng)
        assert np.array_equal(loaded.forward(item), clf.forward(item))

    def test_round_trip_headless(self, tmp_path):
        rng = np.random.default_rng(31)
        cfg = TrainConfig(num_forms=2, hidden_dim=4, use_head=False)
        clf = build_classifier(2, 2, cfg, rng)
        path = tmp_path / "clf.kfc"
        save_classifier(clf, path)
        loaded = load_classifier(path)
        assert loaded.head is None
        item = small_item(rng)
        assert np.array_equal(loaded.forward(item), clf.forward(item))

    def test_wrong_kind_rejected(self, tmp_path):
        from kforms.nn import write_blob

        path = tmp_path / "bad.kfc"
        write_blob(path, {"kind": "mlp"}, np.zeros(3))
        with pytest.raises(ValueError, match="classifier"):
            load_classifier(path)
