"""
Tests for the reference classifier: features, loss, optimizer and training.
"""

import math

import numpy as np
import pytest

from ctvbench.core.config import TrainConfig
from ctvbench.core.errors import ArtifactError, TrainingError
from ctvbench.core.events import WARNING
from ctvbench.core.models import Catalog, ManifestRef, Partition, Protocol
from ctvbench.features.baseline import (
    FEATURE_DIM,
    FeatureExtractor,
    FeatureStore,
    LinearSoftmaxModel,
    Optimizer,
    cosine_lr,
    extract_features,
    fit,
    loss_and_grad,
    orientation_histogram,
    predict,
    softmax,
    train,
)
from ctvbench.features.catalog import load_label_map, scan_dataset
from ctvbench.features.splits import make_rng, toto_splits

from conftest import make_record


def _ramp(horizontal: bool) -> np.ndarray:
    values = np.arange(224, dtype=np.uint8)
    gray = np.tile(values[None, :], (224, 1)) if horizontal else np.tile(values[:, None], (1, 224))
    return np.repeat(gray[..., None], 3, axis=2)


def _separable(n_per_class: int = 20, classes: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    X = rng.random((n_per_class * classes, FEATURE_DIM)) * 0.1
    y = np.repeat(np.arange(classes), n_per_class)
    X[np.arange(len(y)), y] += 1.0
    return X, y


def test_feature_vector_constant_red():
    """Test a constant red image puts all mass in the extreme colour bins."""
    red = np.zeros((30, 50, 3), dtype=np.uint8)
    red[..., 0] = 255
    features = extract_features(red)
    assert features.shape == (FEATURE_DIM,)
    assert features[15] == 1.0
    assert features[16] == 1.0
    assert features[32] == 1.0
    assert features[48:].tolist() == [1.0 / 8] * 8


def test_feature_vector_ramps():
    """Test horizontal and vertical ramps hit the 0 and 90 degree orientation bins."""
    horizontal = extract_features(_ramp(True))
    expected_hist = np.array([1.0 / 14] * 14 + [0.0, 0.0])
    np.testing.assert_allclose(horizontal[:16], expected_hist)
    np.testing.assert_allclose(horizontal[16:32], expected_hist)
    assert horizontal[48] == pytest.approx(1.0)
    vertical = extract_features(_ramp(False))
    assert vertical[48 + 4] == pytest.approx(1.0)
    for features in (horizontal, vertical):
        for block in (features[0:16], features[16:32], features[32:48], features[48:]):
            assert block.sum() == pytest.approx(1.0)


def test_orientation_histogram_flat():
    """Test an image without gradient gives the uniform histogram."""
    np.testing.assert_allclose(orientation_histogram(np.full((8, 8), 3.0)), np.full(8, 0.125))


def test_cosine_schedule():
    """Test endpoints, midpoint and range checks of the cosine schedule."""
    assert cosine_lr(0, 20, 1e-2, 1e-6) == pytest.approx(1e-2)
    assert cosine_lr(20, 20, 1e-2, 1e-6) == pytest.approx(1e-6)
    assert cosine_lr(10, 20, 1e-2, 1e-6) == pytest.approx((1e-2 + 1e-6) / 2)
    with pytest.raises(TrainingError):
        cosine_lr(21, 20, 1e-2, 1e-6)


def test_zero_model_loss_is_log_classes():
    """Test a zero-initialised model has loss ln(C)."""
    X, y = _separable()
    loss, _, _ = loss_and_grad(LinearSoftmaxModel.zeros(["a", "b", "c"]), X, y)
    assert loss == pytest.approx(math.log(3))


def test_gradient_matches_finite_differences():
    """Test analytic gradients element-wise against central differences on 20 random model/batch pairs."""
    rng = np.random.default_rng(3)
    eps = 1e-5
    for _ in range(20):
        X = rng.random((5, FEATURE_DIM))
        y = rng.integers(0, 4, size=5)
        model = LinearSoftmaxModel(list("abcd"), rng.normal(0, 0.5, (4, FEATURE_DIM)), rng.normal(0, 0.5, 4))
        _, grad_w, grad_b = loss_and_grad(model, X, y)
        numeric, analytic = [], []
        for param, grad in ((model.W, grad_w), (model.b, grad_b)):
            for index in np.ndindex(param.shape):
                original = param[index]
                param[index] = original + eps
                plus = loss_and_grad(model, X, y)[0]
                param[index] = original - eps
                minus = loss_and_grad(model, X, y)[0]
                param[index] = original
                numeric.append((plus - minus) / (2 * eps))
                analytic.append(grad[index])
        numeric, analytic = np.array(numeric), np.array(analytic)
        # floor for near-zero components
        scale = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-4)
        assert np.max(np.abs(numeric - analytic) / scale) < 1e-5


def test_softmax_rows_and_loss_sign():
    """Test softmax rows sum to one even for extreme scores and the loss is never negative."""
    rng = np.random.default_rng(8)
    scores = np.vstack([rng.normal(0, 5, (10, 4)), [[1000.0, -1000.0, 0.0, 999.0]], [[-800.0] * 4]])
    probabilities = softmax(scores)
    assert np.all(probabilities >= 0)
    assert np.allclose(probabilities.sum(axis=1), 1.0, atol=1e-9, rtol=0)
    for _ in range(10):
        model = LinearSoftmaxModel(list("abcd"), rng.normal(0, 3, (4, FEATURE_DIM)), rng.normal(0, 3, 4))
        X = rng.random((7, FEATURE_DIM))
        loss, _, _ = loss_and_grad(model, X, rng.integers(0, 4, size=7))
        assert loss >= 0.0


def test_argmax_ignores_constant_score_shift():
    """Test adding the same constant to every class score leaves predictions unchanged."""
    rng = np.random.default_rng(9)
    model = LinearSoftmaxModel(list("abc"), rng.normal(0, 1, (3, FEATURE_DIM)), rng.normal(0, 1, 3))
    X = rng.random((50, FEATURE_DIM))
    for shift in (-123.5, 0.25, 42.0):
        shifted = LinearSoftmaxModel(model.classes, model.W, model.b + shift)
        assert np.array_equal(shifted.predict_indices(X), model.predict_indices(X))


def test_duplicated_batch_gives_same_loss_and_gradient():
    """Test the loss is a per-sample mean."""
    X, y = _separable(4)
    model = LinearSoftmaxModel(["a", "b", "c"], np.ones((3, FEATURE_DIM)) * np.arange(3)[:, None] * 0.01, np.zeros(3))
    single = loss_and_grad(model, X, y)
    double = loss_and_grad(model, np.vstack([X, X]), np.concatenate([y, y]))
    assert double[0] == pytest.approx(single[0])
    np.testing.assert_allclose(double[1], single[1])
    np.testing.assert_allclose(double[2], single[2])


def test_loss_rejects_bad_batches():
    """Test empty batches, label mismatches and non-finite inputs."""
    model = LinearSoftmaxModel.zeros(["a", "b"])
    with pytest.raises(TrainingError):
        loss_and_grad(model, np.zeros((0, FEATURE_DIM)), np.zeros(0))
    with pytest.raises(TrainingError):
        loss_and_grad(model, np.zeros((2, FEATURE_DIM)), np.zeros(3))
    X = np.zeros((1, FEATURE_DIM))
    X[0, 0] = np.nan
    with pytest.raises(TrainingError):
        loss_and_grad(model, X, np.zeros(1))


def test_sgd_full_batch_loss_decreases():
    """Test full-batch gradient descent lowers the loss every step."""
    X, y = _separable(10)
    model = LinearSoftmaxModel.zeros(["a", "b", "c"])
    optimizer = Optimizer("sgd")
    losses = []
    for _ in range(15):
        loss, grad_w, grad_b = loss_and_grad(model, X, y)
        losses.append(loss)
        optimizer.step(model, {"W": grad_w, "b": grad_b}, 0.1)
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_unknown_optimizer():
    """Test optimizer names are validated."""
    with pytest.raises(TrainingError):
        Optimizer("lbfgs")


def test_fit_separable_reaches_full_accuracy():
    """Test a linearly separable problem is learned exactly."""
    X, y = _separable()
    config = TrainConfig(epochs=30, dropout=0.0, lr0=0.05)
    model, curve = fit(X, y, ["a", "b", "c"], config, rng=make_rng(1, "fit"))
    assert curve.epochs[-1].train_acc == 1.0
    assert (model.predict_indices(X) == y).all()


def test_fit_curve_and_determinism():
    """Test one curve entry per epoch, NaN for missing sets, identical reruns."""
    X, y = _separable()
    config = TrainConfig()
    first, curve = fit(X, y, ["a", "b", "c"], config, rng=make_rng(42, "fit"))
    second, again = fit(X, y, ["a", "b", "c"], config, rng=make_rng(42, "fit"))
    assert len(curve) == 20
    assert [e.epoch for e in curve.epochs] == list(range(1, 21))
    assert all(math.isnan(v) for v in curve.column("val_acc"))
    np.testing.assert_array_equal(first.W, second.W)
    assert curve.column("train_acc") == again.column("train_acc")


def test_fit_empty_partition():
    """Test training without samples is refused."""
    with pytest.raises(TrainingError):
        fit(np.zeros((0, FEATURE_DIM)), np.zeros(0), ["a"], TrainConfig())


def _store_and_catalog():
    records = [
        make_record(f"t{k % 2}/c{k % 3}/{k}.jpg", team=f"t{k % 2}", label=f"c{k % 3}", phash=k + 1)
        for k in range(12)
    ]
    catalog = Catalog(records)
    rng = np.random.default_rng(5)
    store = FeatureStore([r.image_id for r in catalog], rng.random((12, FEATURE_DIM)))
    return catalog, store


def test_zero_model_predicts_first_class():
    """Test ties resolve to the lowest class index."""
    catalog, store = _store_and_catalog()
    ref = ManifestRef(Protocol.TOTO, "t0", Partition.TEST)
    preds = predict(LinearSoftmaxModel.zeros(["c0", "c1", "c2"]), store.ids, catalog, store, ref)
    assert {p.predicted for p in preds.items} == {"c0"}


def test_prediction_independent_of_batch_size():
    """Test batching does not change predictions."""
    catalog, store = _store_and_catalog()
    rng = np.random.default_rng(9)
    model = LinearSoftmaxModel(["c0", "c1", "c2"], rng.normal(size=(3, FEATURE_DIM)), rng.normal(size=3))
    ref = ManifestRef(Protocol.LOTO, "t1", Partition.VAL)
    one = predict(model, store.ids, catalog, store, ref, batch_size=1)
    many = predict(model, store.ids, catalog, store, ref, batch_size=256)
    assert one.items == many.items


def test_feature_store_roundtrip(tmp_path):
    """Test saved stores reload equal and save byte-identically."""
    _, store = _store_and_catalog()
    first = store.save(tmp_path / "a" / "features.npz")
    second = store.save(tmp_path / "b" / "features.npz")
    assert first.read_bytes() == second.read_bytes()
    loaded = FeatureStore.load(first)
    assert loaded.ids == store.ids
    np.testing.assert_array_equal(loaded.rows(store.ids[:3]), store.matrix[:3])
    with pytest.raises(TrainingError):
        loaded.rows(["missing"])


def test_feature_store_version_mismatch(tmp_path):
    """Test stores from another feature definition are refused."""
    _, store = _store_and_catalog()
    store.spec_version = "hist-0"
    path = store.save(tmp_path / "features.npz")
    with pytest.raises(ArtifactError):
        FeatureStore.load(path)


def test_model_serialization():
    """Test models survive to_dict/from_dict and reject other feature specs."""
    rng = np.random.default_rng(2)
    model = LinearSoftmaxModel(["a", "b"], rng.normal(size=(2, FEATURE_DIM)), rng.normal(size=2))
    payload = model.to_dict(TrainConfig())
    restored = LinearSoftmaxModel.from_dict(payload)
    np.testing.assert_array_equal(restored.W, model.W)
    assert payload["config"]["epochs"] == 20
    payload["feature_spec"] = "other"
    with pytest.raises(ArtifactError):
        LinearSoftmaxModel.from_dict(payload)


def test_extract_and_train_fold(tiny_dataset, event_bus):
    """Test feature extraction and one TOTO fold on a small tree."""
    catalog = scan_dataset(tiny_dataset, load_label_map())
    bad = tiny_dataset / "alpha" / "oak" / "img_0.png"
    warnings = []
    event_bus.subscribe(WARNING, warnings.append)
    store = FeatureExtractor(event_bus, threads=2).extract(catalog, lambda r: tiny_dataset / r.rel_path)
    assert len(store) == 18

    bad.write_bytes(b"not an image")
    damaged = FeatureExtractor(event_bus).extract(catalog, lambda r: tiny_dataset / r.rel_path)
    assert len(damaged) == 17
    assert [w.data.code for w in warnings] == ["feature_failure"]

    manifest = toto_splits(catalog)[0]
    config = TrainConfig(epochs=3)
    outcome = train(manifest, catalog, config, damaged)
    assert len(outcome.curve) == 3
    assert outcome.val_predictions.manifest_ref.partition is Partition.VAL
    assert len(outcome.test_predictions) == len(manifest.test_ids)
    expected_val = outcome.curve.epochs[-1].val_acc
    val_ids = [p.image_id for p in outcome.val_predictions.items]
    assert val_ids == [i for i in manifest.val_ids if i in damaged]
    correct = sum(p.correct for p in outcome.val_predictions.items)
    assert correct / len(val_ids) == pytest.approx(expected_val)
