import numpy as np
import pytest
from numpy.testing import assert_allclose

from deepboost.boosting import (
    INDICATOR,
    SampleWeights,
    StrongClassifier,
    Stump,
    exponential_loss,
    fit_stump,
    fit_stump_indicator,
    score,
    sign,
    train_strong,
    update_weights,
    weighted_squared_error,
    write_round_diagnostics,
)
from utils.exceptions import BoostingError, DimensionMismatchError, WeightDivergenceError


def _separable(rng, n=40):
    X = rng.uniform(-10.0, 10.0, (n, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    X[:, 0] += 3.0 * y
    return X, y


def test_constant_target_predicts_positive():
    X = np.arange(6, dtype=float).reshape(-1, 1)
    stump = fit_stump(X, np.ones(6), np.full(6, 1 / 6))
    assert np.all(sign(stump.predict(X)) == 1)


def test_one_dimensional_threshold_lands_between_classes():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    stump = fit_stump(X, y, SampleWeights.uniform(4))
    assert 1.0 < stump.delta < 2.0
    assert np.all(sign(stump.predict(X)) == y)


def test_zero_weight_sample_is_ignored(rng):
    X = rng.standard_normal((30, 3))
    y = np.where(rng.random(30) > 0.5, 1.0, -1.0)
    w = np.full(30, 1 / 29)
    w[4] = 0.0
    before = fit_stump(X, y, w)
    X[4] = [100.0, -100.0, 55.0]
    after = fit_stump(X, y, w)
    assert before == after


def test_all_zero_weights_rejected():
    with pytest.raises(BoostingError):
        fit_stump(np.zeros((3, 1)), np.array([1.0, -1.0, 1.0]), np.zeros(3))


def test_constant_feature_gives_constant_fit():
    X = np.full((5, 1), 2.0)
    y = np.array([1.0, 1.0, 1.0, -1.0, -1.0])
    stump = fit_stump(X, y, np.full(5, 0.2))
    assert stump.a == 0.0
    assert stump.b == pytest.approx(0.2)


def test_indicator_fit_on_separable_data():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([-1.0, -1.0, 1.0, 1.0])
    stump = fit_stump_indicator(X, y, np.full(4, 0.25))
    assert stump.kind == INDICATOR
    assert stump.a == pytest.approx(2.0)
    assert stump.b == pytest.approx(-1.0)
    assert weighted_squared_error(stump, X, y, np.full(4, 0.25)) == pytest.approx(0.0, abs=1e-12)


def test_zero_stump_leaves_weights_unchanged():
    w = SampleWeights(np.array([0.2, 0.3, 0.5]))
    updated = update_weights(w, np.zeros(3), np.array([1.0, -1.0, 1.0]))
    assert_allclose(updated.w, w.w)


def test_weight_update_example():
    updated = update_weights(np.array([0.5, 0.5]), np.array([1.0, 1.0]), np.array([1.0, -1.0]))
    assert_allclose(updated.w, [0.1192, 0.8808], atol=1e-4)
    assert updated.total == pytest.approx(1.0)


def test_weight_underflow_is_divergence():
    with pytest.raises(WeightDivergenceError):
        update_weights(np.array([0.5, 0.5]), np.array([1e4, 1e4]), np.array([1.0, 1.0]))


def test_zero_rounds_scores_zero(rng):
    X, y = _separable(rng)
    clf, diagnostics = train_strong(X, y, rounds=0)
    assert clf.stumps == []
    assert diagnostics == []
    assert not clf.decision_function(X).any()


def test_separable_data_within_five_rounds(rng):
    X, y = _separable(rng)
    clf, diagnostics = train_strong(X, y, rounds=5)
    assert np.all(clf.predict(X) == y)
    assert len(diagnostics) <= 5
    oracle, _ = train_strong(X, y, rounds=5, kind=INDICATOR)
    assert np.all(oracle.predict(X) == clf.predict(X))


def test_exponential_loss_never_increases():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((50, 4))
        y = np.where(X[:, 0] + 0.8 * rng.standard_normal(50) > 0, 1.0, -1.0)
        clf, diagnostics = train_strong(X, y, rounds=15)
        losses = [float(len(y))] + [r.exp_loss for r in diagnostics]
        assert all(b <= a + 1e-9 for a, b in zip(losses, losses[1:]))


def test_early_stop_after_zero_error_streak(rng):
    X, y = _separable(rng)
    clf, diagnostics = train_strong(X, y, rounds=50, patience=3)
    assert len(clf.stumps) < 50
    assert [r.train_error for r in diagnostics[-3:]] == [0.0, 0.0, 0.0]


def test_score_examples():
    assert score(StrongClassifier(dimension=3), np.zeros(3)) == 0.0
    x = np.array([0.5, 2.0])
    single = StrongClassifier(stumps=[Stump(d=1, delta=2.0, a=2.0, b=-1.0)], rounds=1, dimension=2)
    assert score(single, x) == pytest.approx(0.0)
    s1 = Stump(d=0, delta=0.0, a=1.0, b=0.5)
    s2 = Stump(d=1, delta=1.0, a=-2.0, b=0.0, kind=INDICATOR)
    pair = StrongClassifier(stumps=[s1, s2], rounds=2, dimension=2)
    expected = (1.0 / (1.0 + np.exp(-0.5)) + 0.5) + (-2.0)
    assert score(pair, x) == pytest.approx(expected)


def test_score_dimension_mismatch():
    clf = StrongClassifier(dimension=4)
    with pytest.raises(DimensionMismatchError):
        score(clf, np.zeros(3))


def test_sign_of_zero_is_positive():
    assert sign(np.array([0.0, -1e-9, 2.0])).tolist() == [1, -1, 1]


def test_exponential_loss_of_zero_scores():
    assert exponential_loss(np.zeros(7), np.ones(7)) == pytest.approx(7.0)


def test_round_diagnostics_csv(rng, tmp_path):
    X, y = _separable(rng)
    _, diagnostics = train_strong(X, y, rounds=3)
    path = write_round_diagnostics(diagnostics, tmp_path / "rounds.csv")
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("round,d,delta")
    assert len(lines) == len(diagnostics) + 1


def test_duplicated_samples_with_halved_weights_fit_the_same_stump(rng):
    X = rng.uniform(-1.0, 1.0, (12, 2))
    y = np.where(X[:, 1] > 0.1, 1.0, -1.0)
    w = rng.uniform(0.5, 1.5, 12)
    w /= w.sum()
    single = fit_stump(X, y, w)
    doubled = fit_stump(np.vstack([X, X]), np.concatenate([y, y]), np.concatenate([w, w]) / 2)
    assert (doubled.d, doubled.delta) == (single.d, single.delta)
    assert doubled.a == pytest.approx(single.a)
    assert doubled.b == pytest.approx(single.b)


def test_negated_labels_negate_the_fit(rng):
    X = rng.standard_normal((25, 3))
    y = np.where(X[:, 0] + 0.3 * rng.standard_normal(25) > 0, 1.0, -1.0)
    w = SampleWeights.uniform(25)
    stump = fit_stump(X, y, w)
    flipped = fit_stump(X, -y, w)
    assert (flipped.d, flipped.delta) == (stump.d, stump.delta)
    assert flipped.a == pytest.approx(-stump.a)
    assert flipped.b == pytest.approx(-stump.b)

    clf, _ = train_strong(X, y, rounds=6)
    clf_flipped, _ = train_strong(X, -y, rounds=6)
    assert_allclose(clf_flipped.decision_function(X), -clf.decision_function(X), atol=1e-9)
