"""Trajectory-choice classifier and demonstration dataset handling.

The network compresses each utility row to a scalar with one shared affine map,
then runs the m-vector through three dense layers (m -> h1 -> h2 -> m, ReLU
after the first two) and a softmax over the m trajectory bins. Forward and
backward passes are written out explicitly so the gradients can be checked
against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import Pose
from .utility import UTILITY_COLUMNS, UtilityFeature

__all__ = [
    "DemoRecord",
    "Dataset",
    "save_dataset",
    "load_dataset",
    "merge_datasets",
    "Prediction",
    "Classifier",
    "Adam",
    "SGD",
    "backward_and_step",
    "TrainConfig",
    "EpochStats",
    "TrainResult",
    "train",
    "save_model",
    "load_model",
    "ModelFormatError",
    "TrainingError",
    "DatasetFormatError",
    "PROB_FLOOR",
]

DATASET_FORMAT = 1
DATASET_KIND = "terrapref-demo-dataset"
MODEL_FORMAT = 1
MODEL_KIND = "terrapref-classifier"

# Probabilities are clamped here before the log so the loss stays finite.
PROB_FLOOR = 1e-12

# Path-follower initialization. The trunk starts as scaled identity blocks
# so per-bin structure passes straight through; the compressor starts small
# on the closeness column and cautious on terrain columns: every terrain
# begins equally worth avoiding, and crossing demonstrations pull each
# column down to exactly the tolerance the demonstrator showed for it.
# Where the data never contradicts the caution (a terrain that is only
# ever dodged), the caution stays, which is what keeps the planner off
# obstacle edges that a pure fit would graze. The hazard column starts
# higher still: driving into it ends an episode, so its floor is a safety
# property rather than a preference.
TRUNK_GAIN = 4.0
PATH_COLUMN_INIT = 0.25
TERRAIN_COLUMN_INIT = -0.12
HAZARD_COLUMN_INIT = -0.30
HIDDEN_BIAS = 0.1
INIT_JITTER = 0.02

# Lower bound for learned per-column feature scales; a terrain absent from
# a training split would otherwise divide by ~0.
FEATURE_SCALE_FLOOR = 1e-3


class ModelFormatError(ValueError):
    """A model file is malformed, truncated, or the wrong version."""


class DatasetFormatError(ValueError):
    """A dataset file is malformed, truncated, or the wrong version."""


class TrainingError(RuntimeError):
    """Training diverged or was fed unusable data."""


@dataclass(frozen=True)
class DemoRecord:
    """One perception tick of a demonstration: features plus the chosen bin."""

    utility_feature: np.ndarray  # (m, 5)
    label_index: int
    timestamp: float
    vehicle_pose: Pose

    def __post_init__(self) -> None:
        values = np.asarray(self.utility_feature, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(UTILITY_COLUMNS):
            raise ValueError("demo record needs an (m, 5) utility matrix")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "utility_feature", values)
        if not 0 <= self.label_index < values.shape[0]:
            raise ValueError(
                f"label index {self.label_index} outside [0, {values.shape[0]})"
            )

    @property
    def m(self) -> int:
        return int(self.utility_feature.shape[0])


@dataclass
class Dataset:
    """Ordered demonstration records with collection metadata."""

    records: list[DemoRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def m(self) -> int:
        if not self.records:
            raise ValueError("dataset is empty")
        return self.records[0].m

    def append(self, record: DemoRecord) -> None:
        if self.records and record.m != self.m:
            raise ValueError(f"record has m={record.m}, dataset has m={self.m}")
        self.records.append(record)

    def feature_tensor(self) -> np.ndarray:
        return np.stack([r.utility_feature for r in self.records])

    def label_array(self) -> np.ndarray:
        return np.array([r.label_index for r in self.records], dtype=np.int64)


def merge_datasets(datasets: list[Dataset], metadata: dict | None = None) -> Dataset:
    merged = Dataset(metadata=dict(metadata or {}))
    for ds in datasets:
        for record in ds.records:
            merged.append(record)
    return merged


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a line-delimited dataset: one metadata header, then one record per line."""
    header = {
        "format": DATASET_FORMAT,
        "kind": DATASET_KIND,
        "m": dataset.m if dataset.records else None,
        "columns": list(UTILITY_COLUMNS),
        "metadata": dataset.metadata,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in dataset.records:
            fh.write(
                json.dumps(
                    {
                        "utility_feature": r.utility_feature.tolist(),
                        "label_index": r.label_index,
                        "timestamp": r.timestamp,
                        "pose": [r.vehicle_pose.x, r.vehicle_pose.y, r.vehicle_pose.theta],
                    }
                )
                + "\n"
            )


def load_dataset(path: str | Path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DatasetFormatError("dataset file is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"dataset header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("kind") != DATASET_KIND:
        raise DatasetFormatError("not a demonstration dataset file")
    if header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"unsupported dataset format {header.get('format')!r}")
    dataset = Dataset(metadata=header.get("metadata", {}))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            x, y, theta = doc["pose"]
            dataset.append(
                DemoRecord(
                    utility_feature=np.asarray(doc["utility_feature"], dtype=float),
                    label_index=int(doc["label_index"]),
                    timestamp=float(doc["timestamp"]),
                    vehicle_pose=Pose(x, y, theta),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"bad dataset record on line {lineno}: {exc}") from exc
    expected_m = header.get("m")
    if expected_m is not None and dataset.records and dataset.m != expected_m:
        raise DatasetFormatError(f"header says m={expected_m}, records have m={dataset.m}")
    return dataset


@dataclass(frozen=True)
class Prediction:
    """Softmax output over the m bins; argmax ties resolve to the lowest index."""

    probabilities: np.ndarray
    argmax_index: int


@dataclass
class Classifier:
    """Shared row compression followed by a three-layer dense head.

    feature_shift/feature_scale are fixed per-column preprocessing constants
    (not trained); the compressor reads (u - shift) / scale. Identity by
    default; train() sets them from the training split so the sparse terrain
    columns arrive at unit variance.
    """

    m: int
    hidden: tuple[int, int]
    weights: dict[str, np.ndarray]
    activation: str = "relu"
    columns: tuple[str, ...] = UTILITY_COLUMNS
    feature_shift: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    # Explicit parameter order; serialization and optimizers follow it.
    PARAM_ORDER = ("wc", "bc", "w1", "b1", "w2", "b2", "w3", "b3")

    def __post_init__(self) -> None:
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        shapes = self._expected_shapes()
        for name in self.PARAM_ORDER:
            if name not in self.weights:
                raise ValueError(f"missing parameter {name!r}")
            got = self.weights[name].shape
            if got != shapes[name]:
                raise ValueError(f"parameter {name!r} has shape {got}, expected {shapes[name]}")
        f = len(UTILITY_COLUMNS)
        if self.feature_shift is None:
            self.feature_shift = np.zeros(f)
        if self.feature_scale is None:
            self.feature_scale = np.ones(f)
        self.feature_shift = np.asarray(self.feature_shift, dtype=float)
        self.feature_scale = np.asarray(self.feature_scale, dtype=float)
        if self.feature_shift.shape != (f,) or self.feature_scale.shape != (f,):
            raise ValueError(f"feature shift/scale must have shape ({f},)")
        if np.any(self.feature_scale <= 0.0):
            raise ValueError("feature scales must be strictly positive")

    def _expected_shapes(self) -> dict[str, tuple]:
        h1, h2 = self.hidden
        f = len(UTILITY_COLUMNS)
        return {
            "wc": (f,),
            "bc": (),
            "w1": (self.m, h1),
            "b1": (h1,),
            "w2": (h1, h2),
            "b2": (h2,),
            "w3": (h2, self.m),
            "b3": (self.m,),
        }

    @classmethod
    def initialize(
        cls, m: int, hidden: tuple[int, int] = (32, 32), seed: int = 0
    ) -> "Classifier":
        if m < 2:
            raise ValueError(f"classifier needs m >= 2 bins, got {m}")
        h1, h2 = hidden
        if h1 < 1 or h2 < 1:
            raise ValueError(f"hidden widths must be positive, got {hidden}")
        rng = np.random.default_rng(seed)
        f = len(UTILITY_COLUMNS)
        weights = {
            "wc": rng.normal(0.0, math.sqrt(1.0 / f), size=f),
            "bc": np.zeros(()),
            "w1": rng.normal(0.0, math.sqrt(2.0 / m), size=(m, h1)),
            "b1": np.zeros(h1),
            "w2": rng.normal(0.0, math.sqrt(2.0 / h1), size=(h1, h2)),
            "b2": np.zeros(h2),
            "w3": rng.normal(0.0, math.sqrt(1.0 / h2), size=(h2, m)),
            "b3": np.zeros(m),
        }
        return cls(m=m, hidden=(h1, h2), weights=weights)

    @classmethod
    def initialize_path_follower(
        cls, m: int, hidden: tuple[int, int] = (32, 32), seed: int = 0
    ) -> "Classifier":
        """Start as an amplified per-bin passthrough of the path column.

        The trunk begins as noisy scaled identity blocks and the compressor
        reads path closeness plus a flat dose of terrain caution, i.e. the
        net starts out steering toward the reference path while treating
        all terrain as equally undesirable. The point of the gain is
        budget: Adam at a fixed learning rate moves any weight by roughly
        lr per step, so whatever the compressor learns about a terrain
        column gets multiplied by the trunk into a usable logit difference
        within a short training run. The terrain ORDERING is entirely
        data-driven; the flat prior contributes none.
        """
        base = cls.initialize(m, hidden=hidden, seed=seed)
        rng = np.random.default_rng(seed)
        w = base.weights
        f = len(UTILITY_COLUMNS)
        wc = np.full(f, TERRAIN_COLUMN_INIT)
        wc[0] = HAZARD_COLUMN_INIT
        wc[-1] = PATH_COLUMN_INIT
        w["wc"][:] = wc + rng.normal(0.0, INIT_JITTER, f)
        w["bc"] = np.zeros(())
        for name in ("w1", "w2", "w3"):
            rows, cols = w[name].shape
            w[name][:] = rng.normal(0.0, INIT_JITTER, (rows, cols))
            k = min(rows, cols)
            w[name][np.arange(k), np.arange(k)] += TRUNK_GAIN
        w["b1"].fill(HIDDEN_BIAS)
        w["b2"].fill(HIDDEN_BIAS)
        w["b3"].fill(0.0)
        return base

    def clone(self) -> "Classifier":
        return Classifier(
            m=self.m,
            hidden=self.hidden,
            weights={k: v.copy() for k, v in self.weights.items()},
            activation=self.activation,
            columns=self.columns,
            feature_shift=self.feature_shift.copy(),
            feature_scale=self.feature_scale.copy(),
        )

    def _forward_cache(self, feats: np.ndarray) -> dict[str, np.ndarray]:
        w = self.weights
        x = (feats - self.feature_shift) / self.feature_scale
        z0 = x @ w["wc"] + w["bc"]  # (B, m): shared affine row compression
        h1 = z0 @ w["w1"] + w["b1"]
        a1 = np.maximum(h1, 0.0)
        h2 = a1 @ w["w2"] + w["b2"]
        a2 = np.maximum(h2, 0.0)
        logits = a2 @ w["w3"] + w["b3"]
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        return {"x": x, "z0": z0, "h1": h1, "a1": a1, "h2": h2, "a2": a2, "probs": probs}

    def _as_batch(self, features) -> np.ndarray:
        if isinstance(features, UtilityFeature):
            features = features.values
        feats = np.asarray(features, dtype=float)
        if feats.ndim == 2:
            feats = feats[None, :, :]
        if feats.ndim != 3 or feats.shape[1] != self.m or feats.shape[2] != len(UTILITY_COLUMNS):
            raise ValueError(
                f"expected features shaped (batch, {self.m}, {len(UTILITY_COLUMNS)}), got {feats.shape}"
            )
        return feats

    def probabilities(self, features) -> np.ndarray:
        """(B, m) softmax outputs for a feature batch."""
        return self._forward_cache(self._as_batch(features))["probs"]

    def forward(self, feature) -> Prediction:
        probs = self.probabilities(feature)[0]
        return Prediction(probabilities=probs, argmax_index=int(np.argmax(probs)))

    def loss(self, features, labels) -> float:
        """Mean cross entropy of the true bins, probabilities clamped at 1e-12."""
        feats = self._as_batch(features)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != feats.shape[0]:
            raise ValueError("feature batch and label batch sizes differ")
        probs = self._forward_cache(feats)["probs"]
        p_true = np.clip(probs[np.arange(len(labels)), labels], PROB_FLOOR, None)
        return float(-np.log(p_true).mean())

    def backward(self, features, labels) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy loss and analytic gradients for a batch."""
        feats = self._as_batch(features)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != feats.shape[0]:
            raise ValueError("feature batch and label batch sizes differ")
        if np.any(labels < 0) or np.any(labels >= self.m):
            raise ValueError("labels outside [0, m)")
        w = self.weights
        cache = self._forward_cache(feats)
        batch = feats.shape[0]
        idx = np.arange(batch)
        p_true = np.clip(cache["probs"][idx, labels], PROB_FLOOR, None)
        loss = float(-np.log(p_true).mean())

        dlogits = cache["probs"].copy()
        dlogits[idx, labels] -= 1.0
        dlogits /= batch
        grads: dict[str, np.ndarray] = {}
        grads["w3"] = cache["a2"].T @ dlogits
        grads["b3"] = dlogits.sum(axis=0)
        da2 = dlogits @ w["w3"].T
        dh2 = da2 * (cache["h2"] > 0.0)
        grads["w2"] = cache["a1"].T @ dh2
        grads["b2"] = dh2.sum(axis=0)
        da1 = dh2 @ w["w2"].T
        dh1 = da1 * (cache["h1"] > 0.0)
        grads["w1"] = cache["z0"].T @ dh1
        grads["b1"] = dh1.sum(axis=0)
        dz0 = dh1 @ w["w1"].T
        grads["wc"] = np.einsum("bm,bmf->f", dz0, cache["x"])
        grads["bc"] = np.asarray(dz0.sum())
        return loss, grads


class Adam:
    """Adam with the usual defaults (0.9, 0.999, 1e-8) and bias correction."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.mean: dict[str, np.ndarray] = {}
        self.var: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        for name, grad in grads.items():
            if name not in self.mean:
                self.mean[name] = np.zeros_like(params[name])
                self.var[name] = np.zeros_like(params[name])
            m = self.mean[name]
            v = self.var[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad**2
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    """Plain gradient descent; kept as the no-moment baseline option."""

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for name, grad in grads.items():
            params[name] -= lr * grad


def make_optimizer(name: str):
    if name == "adam":
        return Adam()
    if name == "sgd":
        return SGD()
    raise ValueError(f"unknown optimizer {name!r}")


def backward_and_step(model: Classifier, features, labels, optimizer, lr: float) -> float:
    """One training step in place; returns the pre-step batch loss."""
    loss, grads = model.backward(features, labels)
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss!r} (lr={lr}, batch={np.shape(labels)})")
    optimizer.step(model.weights, grads, lr)
    return loss


@dataclass
class TrainConfig:
    epochs: int = 15
    lr: float = 1e-3
    batch_size: int = 256
    split: float = 0.8
    seed: int = 0
    hidden: tuple[int, int] = (32, 32)
    optimizer: str = "adam"
    m: int | None = None  # if set, the dataset must match


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    model: Classifier
    best_epoch: int
    history: list[EpochStats]
    checkpoints: list[Classifier]


def _evaluate(model: Classifier, feats: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    probs = model.probabilities(feats)
    idx = np.arange(len(labels))
    p_true = np.clip(probs[idx, labels], PROB_FLOOR, None)
    loss = float(-np.log(p_true).mean())
    accuracy = float(np.mean(np.argmax(probs, axis=1) == labels))
    return loss, accuracy


def train(dataset: Dataset, config: TrainConfig | None = None) -> TrainResult:
    """Seeded shuffle split, minibatch epochs, checkpoint selection by val loss.

    Deterministic for a fixed dataset, config, and seed; two runs with the
    same seed produce bit-identical histories and parameters.
    """
    config = config or TrainConfig()
    if len(dataset) < 2:
        raise ValueError(f"training needs at least 2 records, got {len(dataset)}")
    m = dataset.m
    if config.m is not None and config.m != m:
        raise ValueError(f"config expects m={config.m}, dataset has m={m}")
    if not 0.0 < config.split < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {config.split}")
    if config.batch_size < 1 or config.epochs < 1:
        raise ValueError("batch size and epochs must be positive")

    feats = dataset.feature_tensor()
    labels = dataset.label_array()
    total = len(dataset)
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(total)
    n_train = min(max(int(total * config.split), 1), total - 1)
    train_idx = perm[:n_train]
    val_idx = perm[n_train:]

    model = Classifier.initialize_path_follower(m, hidden=config.hidden, seed=config.seed)
    # Standardize the sparse terrain columns from the training split; the
    # closeness column is already min-max normalized per tick by construction.
    flat = feats[train_idx].reshape(-1, feats.shape[2])
    shift = flat.mean(axis=0)
    scale = np.maximum(flat.std(axis=0), FEATURE_SCALE_FLOOR)
    shift[-1] = 0.0
    scale[-1] = 1.0
    model.feature_shift = shift
    model.feature_scale = scale
    optimizer = make_optimizer(config.optimizer)
    history: list[EpochStats] = []
    checkpoints: list[Classifier] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        loss_sum = 0.0
        for lo in range(0, n_train, config.batch_size):
            batch = train_idx[order[lo : lo + config.batch_size]]
            loss = backward_and_step(model, feats[batch], labels[batch], optimizer, config.lr)
            loss_sum += loss * len(batch)
        val_loss, val_accuracy = _evaluate(model, feats[val_idx], labels[val_idx])
        history.append(EpochStats(epoch, loss_sum / n_train, val_loss, val_accuracy))
        checkpoints.append(model.clone())
    best_epoch = int(np.argmin([h.val_loss for h in history]))
    return TrainResult(
        model=checkpoints[best_epoch],
        best_epoch=best_epoch,
        history=history,
        checkpoints=checkpoints,
    )


def save_model(model: Classifier, path: str | Path) -> None:
    """Write the classifier as versioned JSON with an explicit field order."""
    doc = {
        "format": MODEL_FORMAT,
        "kind": MODEL_KIND,
        "m": model.m,
        "hidden": list(model.hidden),
        "activation": model.activation,
        "columns": list(model.columns),
        "feature_shift": model.feature_shift.tolist(),
        "feature_scale": model.feature_scale.tolist(),
        "weights": {name: model.weights[name].tolist() for name in Classifier.PARAM_ORDER},
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path) -> Classifier:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("kind") != MODEL_KIND:
        raise ModelFormatError("not a classifier model file")
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"unsupported model format {doc.get('format')!r}")
    try:
        weights = {
            name: np.asarray(doc["weights"][name], dtype=float)
            for name in Classifier.PARAM_ORDER
        }
        weights["bc"] = weights["bc"].reshape(())
        model = Classifier(
            m=int(doc["m"]),
            hidden=(int(doc["hidden"][0]), int(doc["hidden"][1])),
            weights=weights,
            activation=str(doc["activation"]),
            columns=tuple(doc["columns"]),
            feature_shift=np.asarray(doc["feature_shift"], dtype=float)
            if "feature_shift" in doc
            else None,
            feature_scale=np.asarray(doc["feature_scale"], dtype=float)
            if "feature_scale" in doc
            else None,
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ModelFormatError(f"bad model document: {exc}") from exc
    return model


def load_reference_model() -> Classifier:
    """The model shipped with the package, trained on the stock course.

    Byte-reproducible: training is deterministic, so retraining on a fresh
    collection of the stock course yields this exact file.
    """
    return load_model(Path(__file__).parent / "data" / "reference_model.json")
