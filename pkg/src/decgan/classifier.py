"""Treatment-outcome classifier: a 6 -> 4x10 ReLU -> 1 sigmoid network with dropout,
trained by mini-batch Adam with validation-based early stopping."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (
    Dataset,
    DatasetError,
    EmptyDatasetError,
    SplitSpec,
    StandardizationParams,
    fit_standardizer,
    split_indices,
)
from .nn_core import (
    AdamState,
    DenseNetwork,
    adam_step,
    backward,
    bce_loss,
    forward,
    init_network,
    load_checkpoint,
    mlp_layers,
    save_checkpoint,
)


@dataclass(frozen=True)
class ClassifierConfig:
    hidden_layers: int = 4
    hidden_width: int = 10
    activation: str = "relu"
    dropout: float = 0.2
    max_epochs: int = 2000
    patience: int = 50
    min_delta: float = 1e-4
    val_fraction: float = 0.2
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"validation fraction must lie in (0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.min_delta < 0:
            raise ValueError("min_delta must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.hidden_layers < 0:
            raise ValueError("batch size and epoch budget must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")

    def with_seed(self, seed) -> "ClassifierConfig":
        return replace(self, seed=int(seed))

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainedClassifier:
    network: DenseNetwork
    standardization: StandardizationParams
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def predict_proba(self, features) -> np.ndarray:
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if not np.all(np.isfinite(x)):
            raise DatasetError("features must be finite")
        out, _ = forward(self.network, self.standardization.transform(x))
        return out[:, 0]

    def predict_labels(self, features) -> np.ndarray:
        return (self.predict_proba(features) >= 0.5).astype(np.int64)

    def save(self, path):
        save_checkpoint(path, {"classifier": self.network}, extra={
            "standardization": self.standardization.to_dict(),
            "train_loss": self.train_loss, "val_loss": self.val_loss,
            "stopped_epoch": self.stopped_epoch, "best_epoch": self.best_epoch,
        })

    @classmethod
    def load(cls, path):
        nets, _, extra = load_checkpoint(path)
        return cls(nets["classifier"], StandardizationParams.from_dict(extra["standardization"]),
                   extra["train_loss"], extra["val_loss"], extra["stopped_epoch"], extra["best_epoch"])

    def write_history(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, (a, b) in enumerate(zip(self.train_loss, self.val_loss), start=1):
                w.writerow([i, repr(a), repr(b)])


def build_network(config: ClassifierConfig, in_width: int, seed) -> DenseNetwork:
    widths = [in_width] + [config.hidden_width] * config.hidden_layers + [1]
    layers = mlp_layers(widths, config.activation, "sigmoid", dropout=config.dropout)
    return init_network(layers, seed)


def _check_trainable(data: Dataset):
    if len(data) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    n0, n1 = data.class_counts()
    if min(n0, n1) < 2:
        raise DatasetError(f"need at least 2 records per class, got {n0} label-0 and {n1} label-1")


def _mean_loss(net, x, y):
    out, _ = forward(net, x)
    return float(bce_loss(out[:, 0], y).mean())


def train_classifier(data: Dataset, config: ClassifierConfig = ClassifierConfig()) -> TrainedClassifier:
    """Fit the classifier, holding out ``config.val_fraction`` for early stopping.

    The standardizer is fitted on real records of the fitting portion.
    Training stops after ``patience`` epochs without a validation improvement
    of at least ``min_delta``; the parameters from the lowest validation loss
    seen are restored.
    """
    _check_trainable(data)
    rng = np.random.default_rng([config.seed, 0xC1A55])
    fit_idx, val_idx = split_indices(data.labels, SplitSpec(config.val_fraction, int(rng.integers(2**63))))
    fit = data.subset(fit_idx)
    val = data.subset(val_idx)

    basis = fit.real_only() if fit.n_real else fit
    params = fit_standardizer(basis)
    x_fit = params.transform(fit.features)
    y_fit = fit.labels.astype(np.float64)
    x_val = params.transform(val.features)
    y_val = val.labels.astype(np.float64)

    net = build_network(config, data.width, rng)
    opt = AdamState.for_params(net.params, lr=config.learning_rate)
    n = len(fit)
    batch = min(config.batch_size, n)

    best_val = math.inf
    best_state = net.get_state()
    best_epoch = 0
    reference = math.inf
    wait = 0
    train_hist, val_hist = [], []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            xb, yb = x_fit[idx], y_fit[idx]
            out, trace = forward(net, xb, training=True, rng=rng)
            p = out[:, 0]
            total += float(bce_loss(p, yb).sum())
            grads, _ = backward(net, trace, ((p - yb) / len(idx))[:, None], wrt_preactivation=True)
            adam_step(net.params, grads, opt)
        train_hist.append(total / n)
        v = _mean_loss(net, x_val, y_val)
        val_hist.append(v)
        if v < best_val:
            best_val = v
            best_state = net.get_state()
            best_epoch = epoch
        if v < reference - config.min_delta:
            reference = v
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    net.set_state(best_state)
    return TrainedClassifier(net, params, train_hist, val_hist, epoch, best_epoch)


def predict(model: TrainedClassifier, features) -> tuple[float, int]:
    """Probability and label (1 iff probability >= 0.5) for one record in raw units."""
    p = float(model.predict_proba(features)[0])
    return p, int(p >= 0.5)


def mislabelled_mask(labels, predictions, threshold=1.0) -> np.ndarray:
    """Records wrong in at least ``threshold * len(predictions)`` of the prediction runs."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    labels = np.asarray(labels)
    wrong = np.zeros(len(labels), dtype=np.int64)
    for pred in predictions:
        wrong += np.asarray(pred) != labels
    need = threshold * len(predictions)
    return wrong >= need - 1e-9


def mislabel_indices(data: Dataset, config: ClassifierConfig, repeats=1, threshold=1.0):
    """Row indices flagged by :func:`find_mislabelled`, plus the trained models."""
    if repeats < 1:
        raise ValueError("repeats must be positive")
    preds, models = [], []
    for r in range(repeats):
        model = train_classifier(data, config.with_seed(config.seed + r))
        preds.append(model.predict_labels(data.features))
        models.append(model)
    return np.flatnonzero(mislabelled_mask(data.labels, preds, threshold)), models


def find_mislabelled(data: Dataset, config: ClassifierConfig = ClassifierConfig(),
                     repeats=1, threshold=1.0) -> Dataset:
    """Subset of ``data`` that independently seeded classifiers get wrong.

    Classifier ``r`` uses seed ``config.seed + r`` and predicts on the same
    records it was trained on.  Original labels and order are kept.
    """
    idx, _ = mislabel_indices(data, config, repeats, threshold)
    return data.subset(idx, name=f"{data.name}-mislabelled")
