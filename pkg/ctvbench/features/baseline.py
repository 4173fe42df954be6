"""
Reference classifier: colour/orientation histogram features and a linear
softmax head trained with a cosine-annealed AdamW schedule.

Everything here is deterministic given the manifest, the feature store and
the training config. Feature extraction may run on several threads; the
optimizer loop is single-threaded.
"""

import io
import math
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp
from scipy.special import softmax as _softmax

from ..core.config import FEATURE_SPEC_VERSION, TrainConfig
from ..core.errors import ArtifactError, ImageDecodeError, TrainingError
from ..core.events import EventBus, Event, WARNING
from ..core.models import (
    Catalog,
    ClassLabel,
    ImageRecord,
    ManifestRef,
    Partition,
    PipelineWarning,
    Prediction,
    PredictionSet,
    SplitManifest,
)
from ..utils.logging import get_logger
from .phash import ImageLike, load_rgb, luma, resample_bicubic, to_array
from .splits import make_rng

logger = get_logger(__name__)

INPUT_SIZE = 224
HIST_BINS = 16
ORIENT_BINS = 8
FEATURE_DIM = 3 * HIST_BINS + ORIENT_BINS
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
# zip entries carry a timestamp; pin it so features.npz is reproducible
_NPZ_DATE_TIME = (1980, 1, 1, 0, 0, 0)


def _as_rgb_uint8(image: ImageLike) -> np.ndarray:
    arr = to_array(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    elif arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.shape[2] > 3:
        arr = arr[..., :3]
    resized = resample_bicubic(arr, INPUT_SIZE, INPUT_SIZE)
    return np.clip(np.floor(resized + 0.5), 0, 255).astype(np.uint8)


def orientation_histogram(gray: np.ndarray) -> np.ndarray:
    """
    Unsigned gradient-orientation histogram over pixels with nonzero gradient.

    Orientation is folded into [0, pi); an image without gradient gets the
    uniform histogram.
    """
    gy, gx = np.gradient(np.asarray(gray, dtype=np.float64))
    magnitude = np.hypot(gx, gy)
    moving = magnitude > 0
    if not moving.any():
        return np.full(ORIENT_BINS, 1.0 / ORIENT_BINS)
    theta = np.mod(np.arctan2(gy[moving], gx[moving]), np.pi)
    bins = np.floor(theta * ORIENT_BINS / np.pi + 1e-9).astype(np.int64) % ORIENT_BINS
    counts = np.bincount(bins, minlength=ORIENT_BINS).astype(np.float64)
    return counts / counts.sum()


def extract_features(image: ImageLike) -> np.ndarray:
    """56-dimensional feature vector: three 16-bin channel histograms then 8 orientation bins."""
    pixels = _as_rgb_uint8(image)
    n = pixels.shape[0] * pixels.shape[1]
    blocks = []
    for channel in range(3):
        bins = (pixels[..., channel] >> 4).ravel()
        blocks.append(np.bincount(bins, minlength=HIST_BINS).astype(np.float64) / n)
    blocks.append(orientation_histogram(luma(pixels.astype(np.float64))))
    return np.concatenate(blocks)


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax."""
    return _softmax(np.asarray(scores, dtype=np.float64), axis=-1)


def cosine_lr(epoch: int, total_epochs: int, lr0: float, lr_min: float) -> float:
    """Cosine annealing from lr0 at epoch 0 to lr_min at total_epochs."""
    if total_epochs < 1 or not 0 <= epoch <= total_epochs:
        raise TrainingError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class FeatureStore:
    """Feature matrix keyed by image id."""

    ids: List[str]
    matrix: np.ndarray
    spec_version: str = FEATURE_SPEC_VERSION
    _index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(len(self.ids), FEATURE_DIM)
        self._index = {image_id: i for i, image_id in enumerate(self.ids)}

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def __len__(self) -> int:
        return len(self.ids)

    def rows(self, image_ids: Sequence[str]) -> np.ndarray:
        missing = [i for i in image_ids if i not in self._index]
        if missing:
            raise TrainingError(f"no features for {len(missing)} images, e.g. {missing[0]}")
        return self.matrix[[self._index[i] for i in image_ids]]

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {
            "ids": np.array(self.ids, dtype=str),
            "features": self.matrix,
            "spec_version": np.array(self.spec_version),
        }
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                buffer = io.BytesIO()
                np.lib.format.write_array(buffer, arr, allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_NPZ_DATE_TIME), buffer.getvalue())
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FeatureStore":
        path = Path(path)
        if not path.exists():
            raise ArtifactError(f"missing input artifact: {path}")
        with np.load(path, allow_pickle=False) as data:
            version = str(data["spec_version"])
            if version != FEATURE_SPEC_VERSION:
                raise ArtifactError(f"{path}: feature spec {version!r}, expected {FEATURE_SPEC_VERSION!r}")
            return cls(ids=[str(i) for i in data["ids"]], matrix=data["features"], spec_version=version)


class FeatureExtractor:
    """Computes features for every readable record of a catalog."""

    def __init__(self, event_bus: Optional[EventBus] = None, threads: int = 1):
        self.event_bus = event_bus or EventBus()
        self.threads = max(1, threads)
        self.extracted = 0
        self.failed = 0

    def extract(self, catalog: Catalog, image_path: Callable[[ImageRecord], Path]) -> FeatureStore:
        """Extract features; images that fail to decode are skipped with a warning."""
        records = [r for r in catalog.records if r.readable]

        def task(record: ImageRecord) -> Tuple[str, Optional[np.ndarray], Optional[str]]:
            try:
                return record.image_id, extract_features(load_rgb(image_path(record))), None
            except ImageDecodeError as exc:
                return record.image_id, None, str(exc)

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                outcomes = list(pool.map(task, records))
        else:
            outcomes = [task(r) for r in records]

        ids, vectors = [], []
        self.failed = 0
        for image_id, vector, reason in sorted(outcomes, key=lambda o: o[0]):
            if vector is None:
                self.failed += 1
                self._warn(image_id, reason or "feature extraction failed")
                continue
            ids.append(image_id)
            vectors.append(vector)
        self.extracted = len(ids)
        logger.info("extracted %d feature vectors (%d failed)", self.extracted, self.failed)
        matrix = np.vstack(vectors) if vectors else np.zeros((0, FEATURE_DIM))
        return FeatureStore(ids=ids, matrix=matrix)

    def _warn(self, image_id: str, reason: str):
        logger.warning("feature extraction failed for %s: %s", image_id, reason)
        warning = PipelineWarning(code="feature_failure", message=reason, stage="train", subject=image_id)
        self.event_bus.publish(Event(WARNING, data=warning, source="FeatureExtractor"))

    def get_status(self) -> Dict[str, Any]:
        """Get current status of the extractor."""
        return {"threads": self.threads, "extracted": self.extracted, "failed": self.failed}


@dataclass
class LinearSoftmaxModel:
    """Class scores W x + b over the feature vector."""

    classes: List[ClassLabel]
    W: np.ndarray
    b: np.ndarray

    @classmethod
    def zeros(cls, classes: Sequence[ClassLabel], dim: int = FEATURE_DIM) -> "LinearSoftmaxModel":
        return cls(list(classes), np.zeros((len(classes), dim)), np.zeros(len(classes)))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def scores(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.W.T + self.b

    def predict_indices(self, features: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.scores(features), axis=1)

    def to_dict(self, config: Optional[TrainConfig] = None) -> Dict[str, Any]:
        return {
            "classes": list(self.classes),
            "W": self.W.tolist(),
            "b": self.b.tolist(),
            "feature_spec": FEATURE_SPEC_VERSION,
            "config": config.model_dump() if config is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LinearSoftmaxModel":
        if data.get("feature_spec") != FEATURE_SPEC_VERSION:
            raise ArtifactError(f"model feature spec {data.get('feature_spec')!r} is not {FEATURE_SPEC_VERSION!r}")
        try:
            return cls(
                list(data["classes"]),
                np.asarray(data["W"], dtype=np.float64),
                np.asarray(data["b"], dtype=np.float64),
            )
        except KeyError as exc:
            raise ArtifactError(f"malformed model: missing {exc}") from exc


def loss_and_grad(
    model: LinearSoftmaxModel, features: np.ndarray, labels: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy over the batch and its gradients with respect to W and b."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("batch must be a non-empty 2-D feature array")
    if y.shape != (X.shape[0],):
        raise TrainingError(f"expected {X.shape[0]} labels, got shape {y.shape}")
    if not (np.isfinite(X).all() and np.isfinite(model.W).all() and np.isfinite(model.b).all()):
        raise TrainingError("non-finite values in features or parameters")
    n = X.shape[0]
    scores = model.scores(X)
    rows = np.arange(n)
    loss = float(np.mean(logsumexp(scores, axis=1) - scores[rows, y]))
    delta = softmax(scores)
    delta[rows, y] -= 1.0
    delta /= n
    return loss, delta.T @ X, delta.sum(axis=0)


class Optimizer:
    """Parameter update with weight decay applied as a separate shrink."""

    def __init__(self, kind: str = "adamw", weight_decay: float = 0.0):
        if kind not in ("adamw", "sgd"):
            raise TrainingError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.weight_decay = weight_decay
        self.t = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, model: LinearSoftmaxModel, grads: Dict[str, np.ndarray], lr: float):
        self.t += 1
        beta1, beta2 = ADAM_BETAS
        for name, grad in grads.items():
            param = getattr(model, name)
            if self.weight_decay:
                param -= lr * self.weight_decay * param
            if self.kind == "sgd":
                param -= lr * grad
                continue
            m = self._m.setdefault(name, np.zeros_like(param))
            v = self._v.setdefault(name, np.zeros_like(param))
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            m_hat = m / (1.0 - beta1 ** self.t)
            v_hat = v / (1.0 - beta2 ** self.t)
            param -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_acc: float
    val_acc: float
    test_acc: float


@dataclass
class LearningCurve:
    epochs: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def column(self, name: str) -> List[float]:
        return [getattr(e, name) for e in self.epochs]

    def rows(self) -> List[List[Any]]:
        return [[e.epoch, round(e.train_acc, 6), round(e.val_acc, 6), round(e.test_acc, 6)] for e in self.epochs]

    @classmethod
    def from_rows(cls, rows: Sequence[Dict[str, str]]) -> "LearningCurve":
        return cls([
            EpochRecord(int(r["epoch"]), float(r["train_acc"]), float(r["val_acc"]), float(r["test_acc"]))
            for r in rows
        ])


EvalSet = Tuple[np.ndarray, np.ndarray]


def _accuracy(model: LinearSoftmaxModel, data: Optional[EvalSet]) -> float:
    if data is None or len(data[1]) == 0:
        return float("nan")
    X, y = data
    return float(np.mean(model.predict_indices(X) == y))


def fit(
    features: np.ndarray,
    labels: np.ndarray,
    classes: Sequence[ClassLabel],
    config: TrainConfig,
    rng: Optional[np.random.Generator] = None,
    val: Optional[EvalSet] = None,
    test: Optional[EvalSet] = None,
) -> Tuple[LinearSoftmaxModel, LearningCurve]:
    """
    Mini-batch training on a feature matrix.

    Each epoch reshuffles with rng, applies inverted dropout to the batch
    features and uses the cosine learning rate for that epoch.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise TrainingError("empty train partition")
    rng = rng if rng is not None else make_rng(config.seed, "fit")
    model = LinearSoftmaxModel.zeros(classes, X.shape[1])
    optimizer = Optimizer(config.optimizer, config.weight_decay)
    keep = 1.0 - config.dropout
    curve = LearningCurve()
    n = X.shape[0]
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr0, config.lr_min)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = X[idx]
            if config.dropout > 0:
                batch = batch * (rng.random(batch.shape) < keep) / keep
            _, grad_w, grad_b = loss_and_grad(model, batch, y[idx])
            optimizer.step(model, {"W": grad_w, "b": grad_b}, lr)
        curve.epochs.append(
            EpochRecord(epoch + 1, _accuracy(model, (X, y)), _accuracy(model, val), _accuracy(model, test))
        )
        logger.debug("epoch %d lr=%.3g train=%.4f", epoch + 1, lr, curve.epochs[-1].train_acc)
    return model, curve


def predict(
    model: LinearSoftmaxModel,
    ids: Sequence[str],
    catalog: Catalog,
    features: FeatureStore,
    ref: ManifestRef,
    batch_size: int = 256,
) -> PredictionSet:
    """Argmax predictions for ids, labelled with their catalogue class."""
    items = []
    for start in range(0, len(ids), batch_size):
        chunk = list(ids[start:start + batch_size])
        if not chunk:
            continue
        for image_id, index in zip(chunk, model.predict_indices(features.rows(chunk))):
            items.append(Prediction(image_id, catalog.get(image_id).label, model.classes[int(index)]))
    return PredictionSet(ref, items)


@dataclass
class TrainOutcome:
    model: LinearSoftmaxModel
    curve: LearningCurve
    val_predictions: PredictionSet
    test_predictions: PredictionSet


def _with_features(ids: Sequence[str], features: FeatureStore, partition: str, fold: str) -> List[str]:
    kept = [i for i in ids if i in features]
    if len(kept) < len(ids):
        logger.warning("%s: %d %s images have no features and are skipped", fold, len(ids) - len(kept), partition)
    return kept


def train(
    manifest: SplitManifest,
    catalog: Catalog,
    config: TrainConfig,
    features: FeatureStore,
    classes: Optional[Sequence[ClassLabel]] = None,
) -> TrainOutcome:
    """Train one fold and predict its validation and test partitions."""
    fold = manifest.file_name
    classes = list(classes) if classes is not None else catalog.classes
    index = {label: i for i, label in enumerate(classes)}

    def arrays(ids: Sequence[str]) -> EvalSet:
        return features.rows(ids), np.array([index[catalog.get(i).label] for i in ids], dtype=np.int64)

    train_ids = _with_features(manifest.train_ids, features, "train", fold)
    val_ids = _with_features(manifest.val_ids, features, "val", fold)
    test_ids = _with_features(manifest.test_ids, features, "test", fold)
    if not train_ids:
        raise TrainingError(f"{fold}: empty train partition")

    rng = make_rng(config.seed, "train", manifest.protocol.value, manifest.focal_team)
    X, y = arrays(train_ids)
    model, curve = fit(X, y, classes, config, rng=rng, val=arrays(val_ids), test=arrays(test_ids))
    logger.info(
        "%s: train %.4f val %.4f test %.4f",
        fold, curve.epochs[-1].train_acc, curve.epochs[-1].val_acc, curve.epochs[-1].test_acc,
    )
    val_ref = ManifestRef(manifest.protocol, manifest.focal_team, Partition.VAL)
    test_ref = ManifestRef(manifest.protocol, manifest.focal_team, Partition.TEST)
    return TrainOutcome(
        model=model,
        curve=curve,
        val_predictions=predict(model, val_ids, catalog, features, val_ref),
        test_predictions=predict(model, test_ids, catalog, features, test_ref),
    )
