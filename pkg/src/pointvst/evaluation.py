"""Linear probes on frozen codewords, visibility accuracy and NRErr."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabelsError, DegenerateVectorError, ShapeError
from .model import extract_codewords, predict_visibility
from .optim import Adam
from .tensor import Tape, Tensor, linear, softmax_cross_entropy

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.20, 0.80 + 1e-9, 0.05), 2))


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 500
    lr: float = 1e-2
    seed: int = 0


@dataclass
class ProbeResult:
    oacc: float
    per_class: np.ndarray  # accuracy per class; nan for classes absent from the test set
    confusion: np.ndarray  # rows true, columns predicted

    def table(self, class_names=None):
        names = class_names or [str(i) for i in range(len(self.per_class))]
        lines = [f"OAcc {self.oacc:.4f}"]
        for n, a in zip(names, self.per_class):
            lines.append(f"{n} {a:.4f}")
        return "\n".join(lines)

    def confusion_csv(self):
        return "\n".join(",".join(str(int(v)) for v in row) for row in self.confusion) + "\n"


def standardize(train, test):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return (train - mu) / sd, (test - mu) / sd


def linear_probe(train_x, train_y, test_x, test_y, config=ProbeConfig(), n_classes=None) -> ProbeResult:
    """Softmax regression on standardized features, full-batch Adam."""
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    if train_x.ndim != 2 or test_x.ndim != 2 or train_x.shape[1] != test_x.shape[1]:
        raise ShapeError("linear_probe", train_x.shape, test_x.shape)
    if len(np.unique(train_y)) < 2:
        raise DegenerateLabelsError("linear probe needs at least two classes in the training labels")
    K = n_classes or int(max(train_y.max(), test_y.max())) + 1
    xtr, xte = standardize(train_x, test_x)
    rng = np.random.default_rng(config.seed)
    bound = np.sqrt(1.0 / xtr.shape[1])
    w = Tensor(rng.uniform(-bound, bound, size=(xtr.shape[1], K)), requires_grad=True, name="w")
    b = Tensor(np.zeros(K), requires_grad=True, name="b")
    opt = Adam({"w": w, "b": b}, lr=config.lr)
    for _ in range(config.epochs):
        with Tape() as tape:
            loss = softmax_cross_entropy(linear(xtr, w, b), train_y)
            g = tape.backward(loss, wrt=[w, b])
        opt.step({"w": g[w], "b": g[b]})
    pred = np.argmax(xte @ w.data + b.data, axis=1)
    conf = np.zeros((K, K), dtype=np.int64)
    np.add.at(conf, (test_y, pred), 1)
    counts = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(counts > 0, np.diag(conf) / np.maximum(counts, 1), np.nan)
    return ProbeResult(float(np.trace(conf) / conf.sum()), per_class, conf)


def probe_codewords(params, train_points, train_y, test_points, test_y, config=ProbeConfig()):
    """Extract frozen codewords for both splits and probe them."""
    ftr = extract_codewords(params, train_points)
    fte = extract_codewords(params, test_points)
    return linear_probe(ftr, train_y, fte, test_y, config)


def threshold_accuracy(scores, truth, thresholds=DEFAULT_THRESHOLDS):
    """Agreement of ``scores >= t`` with the 0/1 mask, per threshold."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(truth).ravel().astype(bool)
    if s.shape != y.shape:
        raise ShapeError("threshold_accuracy", s.shape, y.shape)
    return {float(t): float(np.mean((s >= t) == y)) for t in thresholds}


def visibility_scores(params, ds, batch_size=16):
    """Predicted scores (C, V, N) for every (cloud, view) pair of a PretextSet."""
    C, V = ds.lat.shape
    out = np.zeros(ds.visibility.shape)
    pairs = [(c, v) for c in range(C) for v in range(V)]
    for i in range(0, len(pairs), batch_size):
        chunk = np.array(pairs[i:i + batch_size])
        c, v = chunk[:, 0], chunk[:, 1]
        out[c, v] = predict_visibility(params, ds.points[c], np.radians(ds.lat[c, v]), np.radians(ds.lon[c, v]))
    return out


def visibility_accuracy(params, ds, thresholds=DEFAULT_THRESHOLDS):
    return threshold_accuracy(visibility_scores(params, ds), ds.visibility, thresholds)


def nrerr(n_pred, n_gt):
    """Unoriented normal error: one minus the absolute cosine."""
    a = np.asarray(n_pred, dtype=np.float64)
    b = np.asarray(n_gt, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("normal vectors must be nonzero")
    return float(1.0 - min(1.0, abs(a @ b) / (na * nb)))
