import numpy as np
import pytest

from ctscreen import classifiers
from ctscreen.classifiers import (
    ALGORITHMS,
    Normalizer,
    TrainedModel,
    fit,
    predict,
    predict_batch,
    resolve_hp,
    svm_objective,
)
from ctscreen.evaluation import stratified_kfold


def blobs(seed=0, n=200, d=4, sep=10.0):
    rng = np.random.default_rng(seed)
    y = np.repeat([1, 0], n // 2)
    X = rng.normal(size=(n, d))
    X[y == 1, 0] += sep
    return X, y


def xor(seed=0, n=200):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0], [5, 5], [0, 5], [5, 0]], float)
    labels = np.array([0, 0, 1, 1])
    k = rng.integers(0, 4, n)
    return centers[k] + rng.normal(scale=0.5, size=(n, 2)), labels[k]


def accuracy(model, X, y):
    return float(np.mean(model.predict_codes(X) == y))


@pytest.mark.parametrize("algo", ALGORITHMS)
def test_separable_blobs(algo):
    X, y = blobs()
    assert accuracy(fit(algo, X, y, seed=1), X, y) >= 0.99


@pytest.mark.parametrize("algo", ["dt", "rf", "knn"])
def test_xor_nonlinear_learners(algo):
    X, y = xor()
    assert accuracy(fit(algo, X, y, seed=1), X, y) >= 0.95


def test_xor_linear_svm_fails():
    X, y = xor()
    assert accuracy(fit("svm", X, y, seed=1), X, y) <= 0.6


@pytest.mark.parametrize("algo", ALGORITHMS)
def test_single_class_and_nan_rejected(algo):
    X, _ = blobs(n=10)
    with pytest.raises(ValueError):
        fit(algo, X, np.ones(10))
    X[0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        fit(algo, X, np.repeat([1, 0], 5))


def test_hyperparameter_validation():
    assert resolve_hp("knn", {"k": 3}) == {"k": 3}
    with pytest.raises(ValueError):
        resolve_hp("knn", {"depth": 3})
    with pytest.raises(ValueError):
        resolve_hp("lda")


@pytest.mark.parametrize("algo", ALGORITHMS)
def test_prediction_contract(algo):
    X, y = blobs(seed=2)
    model = fit(algo, X, y, seed=3)
    for p in predict_batch(model, X[:20]):
        assert (p.label == "covid") == (p.score >= model.threshold)
    with pytest.raises(ValueError):
        predict(model, X[0, :2])
    with pytest.raises(ValueError):
        model.scores(X[:, :3])


@pytest.mark.parametrize("algo", ALGORITHMS)
def test_deterministic_and_serializable(algo):
    X, y = blobs(seed=4, sep=1.5)
    probe = np.random.default_rng(9).normal(size=(30, 4))
    a, b = fit(algo, X, y, seed=5), fit(algo, X, y, seed=5)
    assert np.array_equal(a.scores(probe), b.scores(probe))
    again = TrainedModel.from_json(a.to_json())
    assert np.allclose(again.scores(probe), a.scores(probe), rtol=0, atol=1e-12)


@pytest.mark.parametrize("algo", ["nb", "knn", "dt"])
def test_row_permutation_invariance(algo):
    X, y = blobs(seed=6, sep=1.0)
    perm = np.random.default_rng(1).permutation(len(y))
    probe = np.random.default_rng(2).normal(size=(50, 4)) + [0.5, 0, 0, 0]
    a = fit(algo, X, y).predict_codes(probe)
    b = fit(algo, X[perm], y[perm]).predict_codes(probe)
    assert np.array_equal(a, b)


def test_rf_scores_are_vote_fractions():
    X, y = blobs(seed=7, sep=1.0)
    model = fit("rf", X, y, hp={"n_trees": 20}, seed=0)
    s = model.scores(X)
    assert np.all((0 <= s) & (s <= 1))
    assert np.allclose(s * 20, np.round(s * 20))


def test_svm_score_is_margin():
    X, y = blobs(seed=8)
    m = fit("svm", X, y, seed=0)
    Xn = m.normalizer.apply(X)
    assert np.allclose(m.scores(X), Xn @ m.params["w"] + m.params["b"])


def test_svm_objective_decreases():
    X, y = blobs(seed=10, sep=4.0)
    m = fit("svm", X, y, seed=0)
    hist = m.params["history"]
    assert len(hist) == 200 and hist[-1] < hist[0]
    s = np.where(y == 1, 1.0, -1.0)
    assert svm_objective(m.params["w"], m.params["b"], m.normalizer.apply(X), s, 1e-4) == pytest.approx(hist[-1])


def test_knn_k1_memorizes_training_set():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(60, 3))
    y = rng.integers(0, 2, 60)
    y[:2] = [0, 1]
    assert accuracy(fit("knn", X, y, hp={"k": 1}), X, y) == 1.0


def test_knn_duplicated_points_predict_own_label():
    X, y = blobs(seed=12, n=40)
    Xd, yd = np.repeat(X, 5, axis=0), np.repeat(y, 5)
    m = fit("knn", Xd, yd, hp={"k": 5})
    assert np.array_equal(m.predict_codes(X), y)


def test_dt_leaves_pure_or_capped():
    X, y = xor(seed=3)
    tree = fit("dt", X, y).params["tree"]
    assert tree.depth() <= 10
    shallow = fit("dt", X, y, hp={"max_depth": 1}).params["tree"]
    assert shallow.depth() <= 1


def test_normalizer_stats_and_leakage_guard():
    X, y = blobs(seed=13)
    Z = Normalizer.fit(X).apply(X)
    assert np.allclose(Z.mean(axis=0), 0, atol=1e-12) and np.allclose(Z.std(axis=0), 1)
    const = Normalizer.fit(np.ones((5, 2)))
    assert np.all(const.std == 1e-12)

    folds = stratified_kfold(y, 5, 0)
    train, test = folds != 0, folds == 0
    before = fit("svm", X[train], y[train]).normalizer
    X2 = X.copy()
    X2[test] = 1e6  # outliers only in the held-out fold
    after = fit("svm", X2[train], y[train]).normalizer
    assert np.array_equal(before.mean, after.mean) and np.array_equal(before.std, after.std)


def test_label_encoding():
    assert classifiers.encode_labels(["covid", "normal"]).tolist() == [1, 0]
    with pytest.raises(ValueError):
        classifiers.encode_labels(["flu"])
