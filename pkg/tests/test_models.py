import numpy as np
import pytest

from oracles import fd_relative_error, logloss
from rugwarn.errors import ColumnMismatch, NonFiniteFeature, SingleClassTraining
from rugwarn.metrics import roc_auc
from rugwarn.models import (
    LOGREG,
    RANDOM_FOREST,
    DecisionTree,
    Scaler,
    TrainedModel,
    _best_split,
    bootstrap_indices,
    build_tree,
    class_weights,
    load_model,
    logreg_loss_grad,
    predict_proba,
    save_model,
    train_logreg,
    train_random_forest,
    warn,
)


def xor_blobs(rng, n=400):
    centers = np.array([[0, 0], [1, 1], [0, 1], [1, 0]], dtype=float)
    labels = np.array([0, 0, 1, 1])
    k = rng.integers(0, 4, size=n)
    return centers[k] + rng.normal(0, 0.12, size=(n, 2)), labels[k]


def test_separable_one_d():
    X = np.array([[-1.0]] * 10 + [[1.0]] * 10)
    y = np.array([0] * 10 + [1] * 10)
    m = train_logreg(X, y)
    assert np.mean(warn(m, X) == y) == 1.0
    assert m.weights[0] > 0


def test_training_preconditions():
    X = np.ones((4, 2))
    with pytest.raises(SingleClassTraining):
        train_logreg(X, np.zeros(4))
    with pytest.raises(SingleClassTraining):
        train_random_forest(X, np.ones(4))
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(NonFiniteFeature):
        train_random_forest(bad, np.array([0, 1, 0, 1]))


def test_loss_matches_plain_formula():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(15, 3))
    y = rng.integers(0, 2, 15)
    w, b = rng.normal(size=3), 0.3
    loss, _, _ = logreg_loss_grad(w, b, X, y, l2=0.1)
    assert loss == pytest.approx(logloss(w, b, X, y, 0.1), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_with_l2_and_weights(seed):
    assert fd_relative_error(100 + seed, l2=0.3, weighted=True) < 1e-5


def test_gradient_descent_decreases_loss():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 4))
    y = (X[:, 0] + 0.5 * rng.normal(size=60) > 0).astype(int)
    m = train_logreg(X, y, max_epochs=50)
    z = m.scaler.transform(X)
    assert m.params["final_loss"] < logreg_loss_grad(np.zeros(4), 0.0, z, y)[0]
    assert m.params["epochs_run"] <= 50


def test_scaler_constant_column():
    s = Scaler.fit(np.array([[1.0, 5.0], [3.0, 5.0]]))
    assert list(s.std) == [1.0, 1.0]
    np.testing.assert_array_equal(s.transform([[2.0, 5.0]]), [[0.0, 0.0]])


def test_zero_weights_give_half():
    m = TrainedModel(LOGREG, ["a", "b"], weights=np.zeros(2), bias=0.0, scaler=Scaler(np.zeros(2), np.ones(2)))
    np.testing.assert_array_equal(predict_proba(m, np.random.default_rng(0).normal(size=(5, 2))), 0.5)


def leaf(pos, tot):
    return DecisionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(pos)]),
                        np.array([float(tot)]))


def test_identical_leaves_average():
    m = TrainedModel(RANDOM_FOREST, ["a"], trees=[leaf(3, 4)] * 5)
    np.testing.assert_array_equal(predict_proba(m, [[0.0], [9.0]]), 0.75)


def test_depth_zero_single_tree_is_bootstrap_prior():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(37, 3))
    y = rng.integers(0, 2, 37)
    m = train_random_forest(X, y, seed=11, n_trees=1, max_depth=0)
    stream = np.random.Generator(np.random.PCG64(np.random.SeedSequence(11).spawn(1)[0]))
    prior = y[bootstrap_indices(stream, 37)].mean()
    np.testing.assert_allclose(predict_proba(m, X), prior)


def test_forest_memorizes_at_least_as_well_as_lr():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(120, 3))
    y = (X[:, 0] - X[:, 1] > 0).astype(int)
    rf = train_random_forest(X, y, seed=1, n_trees=30)
    lr = train_logreg(X, y)
    assert np.mean(warn(rf, X) == y) >= np.mean(warn(lr, X) == y)


def test_xor_forest_beats_linear():
    rng = np.random.default_rng(4)
    X, y = xor_blobs(rng)
    tr, te = np.arange(280), np.arange(280, 400)
    rf = train_random_forest(X[tr], y[tr], seed=5)
    lr = train_logreg(X[tr], y[tr])
    assert roc_auc(y[te], predict_proba(rf, X[te])) > 0.95
    assert roc_auc(y[te], predict_proba(lr, X[te])) < 0.65


def test_forest_deterministic_and_thread_independent():
    rng = np.random.default_rng(6)
    X, y = xor_blobs(rng, 150)
    a = train_random_forest(X, y, seed=9, n_trees=20)
    b = train_random_forest(X, y, seed=9, n_trees=20)
    c = train_random_forest(X, y, seed=9, n_trees=20, threads=4)
    assert a.to_dict() == b.to_dict() == c.to_dict()
    assert train_random_forest(X, y, seed=10, n_trees=20).to_dict() != a.to_dict()


def test_tree_invariants():
    rng = np.random.default_rng(7)
    X, y = xor_blobs(rng, 200)
    for depth in (None, 1, 3):
        t = build_tree(X, y, np.random.default_rng(0), max_depth=depth, mtry=2)
        reach = {0}
        for i in range(t.n_nodes):
            if t.left[i] >= 0 and i in reach:
                reach |= {int(t.left[i]), int(t.right[i])}
        assert reach == set(range(t.n_nodes))
        if depth is not None:
            assert t.depth() <= depth
        leaves = t.left < 0
        np.testing.assert_array_equal(t.leaf_probability()[leaves], t.positive[leaves] / t.total[leaves])
    full = build_tree(X, y, np.random.default_rng(0))
    assert np.mean((full.predict_proba(X) > 0.5) == y) == 1.0


def test_row_order_does_not_change_tree():
    rng = np.random.default_rng(8)
    X = np.round(rng.normal(size=(60, 4)), 1)
    y = rng.integers(0, 2, 60)
    perm = rng.permutation(60)
    a = build_tree(X, y, np.random.default_rng(3), mtry=2)
    b = build_tree(X[perm], y[perm], np.random.default_rng(3), mtry=2)
    assert a.to_dict() == b.to_dict()


def test_split_ties_lowest_feature_then_threshold():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = np.array([0, 0, 1, 1])
    assert _best_split(X, y, np.ones(4), [1, 0]) == (0, 1.5)
    # two equally good cuts on one feature: the lower threshold wins
    X1 = np.array([[0.0], [1.0], [2.0]])
    assert _best_split(X1, np.array([0, 1, 0]), np.ones(3), [0]) == (0, 0.5)


def test_balanced_weights():
    w = class_weights(np.array([1, 0, 0, 0]), "balanced")
    assert w[0] * 1 == pytest.approx(w[1:].sum())
    with pytest.raises(ValueError):
        class_weights(np.array([0, 1]), "inverse")
    rng = np.random.default_rng(9)
    X = rng.normal(size=(40, 2))
    y = (X[:, 0] > 0.8).astype(int)
    m = train_random_forest(X, y, n_trees=5, class_weight="balanced")
    assert ((predict_proba(m, X) >= 0) & (predict_proba(m, X) <= 1)).all()
    train_logreg(X, y, class_weight="balanced", l2=0.01)


@pytest.mark.parametrize("kind", [LOGREG, RANDOM_FOREST])
def test_save_load_round_trip(tmp_path, kind):
    rng = np.random.default_rng(10)
    X, y = xor_blobs(rng, 100)
    m = train_logreg(X, y, ["a", "b"]) if kind == LOGREG else train_random_forest(X, y, ["a", "b"], n_trees=10)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(predict_proba(back, X), predict_proba(m, X))
    assert back.to_dict() == m.to_dict()


def test_unknown_artifact_version():
    with pytest.raises(ValueError):
        TrainedModel.from_dict({"version": 99})


def test_column_mismatch():
    m = TrainedModel(RANDOM_FOREST, ["a", "b"], trees=[leaf(1, 2)])
    with pytest.raises(ColumnMismatch):
        predict_proba(m, np.zeros((1, 3)))
    with pytest.raises(ColumnMismatch):
        predict_proba(m, np.zeros((1, 2)), columns=["b", "a"])


def test_warn_is_strict():
    m = TrainedModel(RANDOM_FOREST, ["a"], threshold=0.5, trees=[leaf(1, 2)])
    assert not warn(m, [[0.0]])[0]
    m51 = TrainedModel(RANDOM_FOREST, ["a"], threshold=0.5, trees=[leaf(51, 100)])
    assert warn(m51, [[0.0]])[0]


def test_warnings_shrink_as_threshold_grows():
    rng = np.random.default_rng(12)
    X, y = xor_blobs(rng, 120)
    m = train_random_forest(X, y, n_trees=15)
    scores = predict_proba(m, X)
    prev = None
    for tau in np.r_[0.0, np.unique(scores), 1.0]:
        flags = warn(m, X, threshold=tau)
        if prev is not None:
            assert not (flags & ~prev).any()
            assert flags.sum() <= prev.sum()
        prev = flags
