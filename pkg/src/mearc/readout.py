"""Trained readout: softmax single-layer perceptron with mini-batch SGD,
stratified k-fold cross-validation, and the spatial-shuffle chance baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .seeds import derive_seed, substream


@dataclass
class LabeledDataset:
    """Feature matrix plus labels and per-sample provenance tags."""

    features: np.ndarray            # (n, d) float
    labels: np.ndarray              # (n,) label per sample
    tags: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=object)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels must agree on sample count")
        if not self.tags:
            self.tags = [{} for _ in range(len(self.labels))]

    def __len__(self) -> int:
        return self.features.shape[0]

    def classes(self) -> list:
        return sorted(set(self.labels.tolist()), key=str)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx],
                              [self.tags[i] for i in idx])

    @staticmethod
    def from_states(states) -> "LabeledDataset":
        feats = np.stack([np.asarray(s.counts, dtype=np.float64) for s in states])
        labels = [s.label for s in states]
        tags = [dict(s.meta) for s in states]
        return LabeledDataset(feats, labels, tags)


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss_grad(weights, bias, X, y_idx, n_classes):
    """Mean cross-entropy over the batch and its analytic gradient."""
    scores = X @ weights.T + bias
    probs = softmax(scores)
    n = X.shape[0]
    eps = 1e-12
    loss = -float(np.mean(np.log(probs[np.arange(n), y_idx] + eps)))
    delta = probs
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    return loss, delta.T @ X, delta.sum(axis=0)


@dataclass
class ReadoutModel:
    weights: np.ndarray             # (n_classes, d)
    bias: np.ndarray                # (n_classes,)
    classes: list
    feat_mean: np.ndarray
    feat_std: np.ndarray
    standardized: bool
    metadata: dict = field(default_factory=dict)

    def _prep(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.shape[1]:
            raise ValueError(f"feature dimension {X.shape[1]} does not match "
                             f"model dimension {self.weights.shape[1]}")
        if self.standardized:
            X = (X - self.feat_mean) / self.feat_std
        return X

    def scores(self, X: np.ndarray) -> np.ndarray:
        return self._prep(X) @ self.weights.T + self.bias


def train_slp(ds: LabeledDataset, epochs: int = 1000, lr0: float = 0.01,
              seed: int = 0, batch_size: int = 8, standardize: bool = True,
              lr_decay_epochs: float = 250.0) -> ReadoutModel:
    """Mini-batch SGD on the softmax cross-entropy, lr = lr0/(1 + epoch/decay).

    Features are standardized per dimension on the training data only (toggle
    with `standardize`). Deterministic in `seed`. The per-epoch loss trace is
    recorded in the model metadata.
    """
    X = np.asarray(ds.features, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values in training data")
    classes = ds.classes()
    if len(classes) < 2:
        raise ValueError(f"training needs at least 2 classes, got {len(classes)}")
    class_idx = {c: i for i, c in enumerate(classes)}
    y = np.asarray([class_idx[l] for l in ds.labels], dtype=np.int64)

    if standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd == 0.0, 1.0, sd)
        X = (X - mu) / sd
    else:
        mu = np.zeros(X.shape[1])
        sd = np.ones(X.shape[1])

    n, d = X.shape
    C = len(classes)
    W = np.zeros((C, d))
    b = np.zeros(C)
    rng = substream(seed, "sgd")
    loss_trace = []
    for epoch in range(epochs):
        lr = lr0 / (1.0 + epoch / lr_decay_epochs)
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            loss, gW, gb = cross_entropy_loss_grad(W, b, X[batch], y[batch], C)
            W -= lr * gW
            b -= lr * gb
            epoch_loss += loss
            n_batches += 1
        loss_trace.append(epoch_loss / max(n_batches, 1))
    return ReadoutModel(
        weights=W, bias=b, classes=classes, feat_mean=mu, feat_std=sd,
        standardized=standardize,
        metadata={"epochs": epochs, "lr0": lr0, "batch_size": batch_size,
                  "lr_decay_epochs": lr_decay_epochs, "seed": seed,
                  "final_loss": loss_trace[-1] if loss_trace else None,
                  "loss_trace": loss_trace},
    )


def predict(model: ReadoutModel, x) -> tuple:
    """(label, class scores) for one sample; ties break to the lowest class index."""
    scores = model.scores(x)[0]
    return model.classes[int(np.argmax(scores))], scores


def predict_batch(model: ReadoutModel, X) -> np.ndarray:
    scores = model.scores(X)
    idx = np.argmax(scores, axis=1)
    return np.asarray([model.classes[i] for i in idx], dtype=object)


def accuracy(model: ReadoutModel, ds: LabeledDataset) -> float:
    pred = predict_batch(model, ds.features)
    return float(np.mean(pred == ds.labels))


@dataclass
class CvResult:
    fold_accuracies: list[float]
    classes: list
    confusion: np.ndarray           # pooled, rows = true, cols = predicted
    fold_of_sample: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_accuracies))

    @property
    def n_folds(self) -> int:
        return len(self.fold_accuracies)

    def per_class_accuracy(self) -> dict:
        out = {}
        for i, c in enumerate(self.classes):
            total = self.confusion[i].sum()
            out[c] = float(self.confusion[i, i] / total) if total else float("nan")
        return out

    def to_dict(self) -> dict:
        return {
            "fold_accuracies": [round(a, 10) for a in self.fold_accuracies],
            "mean": {"mean": round(self.mean, 10), "std": round(self.std, 10),
                     "n": self.n_folds},
            "per_class_accuracy": {str(k): round(v, 10)
                                   for k, v in self.per_class_accuracy().items()},
            "confusion": self.confusion.tolist(),
            "classes": [str(c) for c in self.classes],
        }


def stratified_folds(labels, k: int, seed: int) -> np.ndarray:
    """Fold index per sample; each class is dealt round-robin after a seeded
    shuffle, so folds are balanced within one sample per class."""
    labels = np.asarray(labels, dtype=object)
    fold = np.full(len(labels), -1, dtype=np.int64)
    rng = substream(seed, "folds")
    for c in sorted(set(labels.tolist()), key=str):
        idx = np.nonzero(labels == c)[0]
        if idx.size < k:
            raise ValueError(f"class {c!r} has {idx.size} samples, fewer than k={k}")
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = np.arange(idx.size) % k
    return fold


def cross_validate(ds: LabeledDataset, k: int = 5, seed: int = 0,
                   **train_kwargs) -> CvResult:
    """Stratified k-fold CV; the model is frozen after training each fold."""
    fold = stratified_folds(ds.labels, k, seed)
    classes = ds.classes()
    class_idx = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    accs = []
    for f in range(k):
        test_idx = np.nonzero(fold == f)[0]
        train_idx = np.nonzero(fold != f)[0]
        model = train_slp(ds.subset(train_idx),
                          seed=derive_seed(seed, "fold", f), **train_kwargs)
        pred = predict_batch(model, ds.features[test_idx])
        truth = ds.labels[test_idx]
        accs.append(float(np.mean(pred == truth)))
        for t, p in zip(truth, pred):
            confusion[class_idx[t], class_idx[p]] += 1
    return CvResult(fold_accuracies=accs, classes=classes, confusion=confusion,
                    fold_of_sample=fold)


def shuffle_baseline(ds: LabeledDataset, seed: int = 0) -> LabeledDataset:
    """Chance-level control: permute each sample's feature entries independently,
    preserving its value multiset (and L1 magnitude); labels unchanged."""
    rng = substream(seed, "shuffle")
    out = np.empty_like(ds.features)
    d = ds.features.shape[1]
    for i in range(ds.features.shape[0]):
        out[i] = ds.features[i, rng.permutation(d)]
    return LabeledDataset(out, ds.labels.copy(), [dict(t) for t in ds.tags])


# --- persistence -----------------------------------------------------------------

def save_model(path, model: ReadoutModel) -> None:
    doc = {
        "classes": list(model.classes),
        "standardized": model.standardized,
        "feat_mean": model.feat_mean.tolist(),
        "feat_std": model.feat_std.tolist(),
        "weights": model.weights.tolist(),
        "bias": model.bias.tolist(),
        "metadata": {k: v for k, v in model.metadata.items() if k != "loss_trace"},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)


def load_model(path) -> ReadoutModel:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    return ReadoutModel(
        weights=np.asarray(doc["weights"], dtype=np.float64),
        bias=np.asarray(doc["bias"], dtype=np.float64),
        classes=doc["classes"],
        feat_mean=np.asarray(doc["feat_mean"], dtype=np.float64),
        feat_std=np.asarray(doc["feat_std"], dtype=np.float64),
        standardized=doc["standardized"],
        metadata=doc.get("metadata", {}),
    )
