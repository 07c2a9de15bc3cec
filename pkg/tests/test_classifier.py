import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dtnet.classifier import ConfusionMatrix, Mlp, evaluate, mlp_train, softmax, vectorize
from dtnet.errors import ConfigError, CorruptBlobError, InputError, TrainingError
from dtnet.hierarchy import FeatureVolume

from gradcheck import mlp_errors


def test_vectorize_examples():
    assert not vectorize(FeatureVolume(3, 2, 4)).any()
    v = FeatureVolume(1, 1, 2).write(0, 0, [0.25, 0.75], 3)
    np.testing.assert_array_equal(vectorize(v), [0.25, 0.75])


def test_vectorize_order_y_x_channel():
    v = FeatureVolume(2, 2, 1)
    v.write(1, 0, [1.0], 0).write(0, 1, [2.0], 0).write(1, 1, [3.0], 0)
    np.testing.assert_array_equal(vectorize(v), [0.0, 1.0, 2.0, 3.0])


def test_zero_weights_give_uniform_probabilities():
    m = Mlp(5, 3, 4)
    for p in m.params().values():
        p[...] = 0
    np.testing.assert_allclose(m.forward(np.ones(5)), 0.25, rtol=1e-15)


def test_softmax_is_stable():
    p = softmax(np.array([[1000.0, 1000.0], [-1000.0, 0.0]]))
    np.testing.assert_allclose(p, [[0.5, 0.5], [0.0, 1.0]], atol=1e-300)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-1e3, 1e3))
def test_probabilities_sum_to_one_and_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    m = Mlp(6, 4, 5, seed=rng)
    X = rng.normal(size=(8, 6))
    np.testing.assert_allclose(m.forward(X).sum(axis=1), 1.0, rtol=1e-12)
    before = m.predict(X)
    m.b2 += shift
    np.testing.assert_array_equal(m.predict(X), before)


def test_ties_go_to_lowest_class():
    m = Mlp(3, 2, 4)
    m.W2[:] = 0
    m.b2[:] = [0.0, 1.0, 1.0, 0.5]
    assert m.predict(np.zeros(3)) == 1


@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("loss", ["cross_entropy", "squared"])
def test_gradients_match_finite_differences(seed, loss):
    rng = np.random.default_rng(seed)
    m = Mlp(7, 5, 3, loss=loss, seed=rng)
    m.b1 = rng.normal(0, 0.1, 5)
    m.b2 = rng.normal(0, 0.1, 3)
    X = rng.random((4, 7))
    errs = mlp_errors(m, X, rng.integers(0, 3, 4))
    assert max(errs.values()) < 1e-4, errs


def test_factored_input_gradient(rng):
    m = Mlp(7, 5, 3, seed=1)
    X, y = rng.random((4, 7)), rng.integers(0, 3, 4)
    _, full = m.loss_and_gradients(X, y)
    _, parts = m.loss_and_gradients(X, y, input_weight_grad=False)
    np.testing.assert_allclose(parts["d_hidden"].T @ parts["inputs"], full["W1"], rtol=1e-14)


def two_blobs(rng, n=200):
    labels = np.repeat([0, 1], n // 2)
    X = rng.normal(0, 0.5, (n, 2)) + np.where(labels[:, None] == 0, -1.5, 1.5)
    return X, labels


def test_separable_blobs(rng):
    X, y = two_blobs(rng)
    m = Mlp(2, 8, 2, seed=0)
    rep = mlp_train(m, X, y, epochs=50, learning_rate=0.1, seed=0)
    assert rep.epoch_accuracy[-1] >= 0.95
    assert rep.epoch_loss[-1] < rep.epoch_loss[0]


def test_minibatch_and_standardized_training(rng):
    X, y = two_blobs(rng)
    m = Mlp(2, 8, 2, seed=0)
    m.fit_standardization(X * 100 + 7)
    rep = mlp_train(m, X * 100 + 7, y, epochs=30, learning_rate=0.2, seed=0, batch_size=16)
    assert rep.epoch_accuracy[-1] >= 0.95


def test_rank_one_update_equals_plain_update(rng):
    X, y = two_blobs(rng, 40)
    a, b = Mlp(2, 6, 2, seed=3), Mlp(2, 6, 2, seed=3)
    b.W1 = np.asfortranarray(b.W1)   # forces the generic update path
    mlp_train(a, X, y, epochs=3, learning_rate=0.1, seed=4)
    mlp_train(b, X, y, epochs=3, learning_rate=0.1, seed=4)
    np.testing.assert_allclose(a.W1, b.W1, rtol=0, atol=1e-13)


def test_zero_epochs_leave_weights(rng):
    X, y = two_blobs(rng, 20)
    m = Mlp(2, 4, 2)
    before = {k: v.copy() for k, v in m.params().items()}
    mlp_train(m, X, y, epochs=0)
    for k, v in m.params().items():
        np.testing.assert_array_equal(v, before[k])


def test_training_is_deterministic(rng):
    X, y = two_blobs(rng, 60)
    a, b = Mlp(2, 4, 2, seed=5), Mlp(2, 4, 2, seed=5)
    assert mlp_train(a, X, y, 5, seed=6) == mlp_train(b, X, y, 5, seed=6)
    assert a.to_bytes() == b.to_bytes()


def test_training_validation(rng):
    m = Mlp(2, 4, 2)
    X, y = two_blobs(rng, 10)
    with pytest.raises(InputError):
        mlp_train(m, X, y[:-1])
    with pytest.raises(InputError):
        mlp_train(m, X, y + 2)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(InputError):
        mlp_train(m, bad, y)
    with pytest.raises(ConfigError):
        mlp_train(m, X, y, learning_rate=0)
    with pytest.raises(ConfigError):
        Mlp(2, 4, 1)


def test_divergence_backs_off_then_fails(rng, monkeypatch):
    X, y = two_blobs(rng, 10)
    m = Mlp(2, 4, 2)
    import dtnet.classifier as clf
    calls = []

    def always_diverge(*args):
        calls.append(args[-1])
        return None

    monkeypatch.setattr(clf, "_run_epoch", always_diverge)
    with pytest.raises(TrainingError):
        mlp_train(m, X, y, epochs=2, learning_rate=0.8)
    assert calls == [0.8, 0.4, 0.2, 0.1]


def test_blob_round_trip(rng):
    m = Mlp(6, 4, 3, loss="squared", seed=2)
    m.fit_standardization(rng.random((10, 6)))
    back = Mlp.from_bytes(m.to_bytes())
    X = rng.random((5, 6))
    np.testing.assert_array_equal(back.logits(X), m.logits(X))
    assert back.loss == "squared"
    with pytest.raises(CorruptBlobError):
        Mlp.from_bytes(m.to_bytes()[:-7])


# -- confusion matrices ---------------------------------------------------------------------

def test_perfect_and_constant_predictors():
    labels = np.repeat(np.arange(10), 5)
    cm = ConfusionMatrix.from_predictions(labels, labels, 10)
    assert cm.overall_rate == 1.0
    assert np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0
    cm = ConfusionMatrix.from_predictions(labels, np.zeros_like(labels), 10)
    assert cm.overall_rate == pytest.approx(0.1)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300), c=st.integers(2, 12))
def test_confusion_identities(seed, n, c):
    rng = np.random.default_rng(seed)
    labels, preds = rng.integers(0, c, n), rng.integers(0, c, n)
    cm = ConfusionMatrix.from_predictions(labels, preds, c)
    np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(labels, minlength=c))
    np.testing.assert_array_equal(cm.counts.sum(axis=0), np.bincount(preds, minlength=c))
    assert cm.total == n
    assert cm.overall_rate == pytest.approx(np.mean(labels == preds))
    half = n // 2
    merged = ConfusionMatrix.from_predictions(labels[:half], preds[:half], c).merge(
        ConfusionMatrix.from_predictions(labels[half:], preds[half:], c))
    np.testing.assert_array_equal(merged.counts, cm.counts)


def test_reports_are_well_formed():
    cm = ConfusionMatrix.from_predictions([0, 0, 1, 2], [0, 1, 1, 2], 3, ["a", "b", "c"])
    text = cm.to_text()
    assert "overall recognition rate: 0.7500 (3/4)" in text
    rows = cm.to_csv().strip().splitlines()
    assert rows[0] == "true,a,b,c"
    assert rows[1] == "a,1,1,0"
    rates = cm.rates_csv().strip().splitlines()
    assert rates[1] == "a,2,1,0.500000"
    assert rates[-1] == "overall,4,3,0.750000"
    assert np.isnan(ConfusionMatrix(2).per_class_rates()).all()


def test_evaluate(rng):
    X, y = two_blobs(rng, 40)
    m = Mlp(2, 4, 2)
    cm = evaluate(m, X, y)
    assert cm.total == 40
    np.testing.assert_array_equal(cm.counts.sum(axis=0), np.bincount(m.predict(X), minlength=2))
