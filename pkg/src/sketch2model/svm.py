"""L2-regularized hinge-loss linear classifiers.

The solver is deterministic epoch-based subgradient descent on the primal

    min_w  (lam/2) ||w||^2 + (1/n) sum_i max(0, 1 - y_i <w, x~_i>)

with x~ the feature vector with a constant 1 appended (the bias rides inside
w and is regularized with it), lam = 1/(C n), step size 1/(lam t), one full
shuffled pass per epoch, and the average of the post-update iterates as the
result.  If the averaged iterate ever scores worse than the zero vector the
zero vector is returned instead, which keeps the objective non-increasing on
any input.  All shuffles come from the seeded stream, so training is
bit-reproducible.

The inner loop is JIT-compiled with numba when available; the fallback runs
the same arithmetic in pure Python.
"""

import json
from dataclasses import dataclass

import numpy as np

from sketch2model.core import RandomStream, ShapeError

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap(args[0]) if args and callable(args[0]) else wrap

C_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)


@dataclass
class SvmConfig:
    c_reg: float = 1.0
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.c_reg <= 0:
            raise ValueError("c_reg must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class BinaryLinearModel:
    """(d+1)-vector of classifier weights; the last entry is the bias."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size < 2:
            raise ValueError("weights must be a vector of length d+1 >= 2")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights contain non-finite entries")

    @property
    def feature_dim(self):
        return self.weights.size - 1

    @property
    def bias(self):
        return self.weights[-1]


@dataclass
class MultiClassLinearModel:
    """(d+1) x c weight matrix with one column per class label."""

    weights: np.ndarray
    class_labels: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a (d+1) x c matrix")
        if self.weights.shape[1] != len(self.class_labels):
            raise ValueError(
                "weight columns (%d) must match class label count (%d)" % (self.weights.shape[1], len(self.class_labels))
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights contain non-finite entries")

    @property
    def feature_dim(self):
        return self.weights.shape[0] - 1


def augment(x):
    """Append the constant-1 bias coordinate to each row."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return np.concatenate([x, [1.0]])
    return np.hstack([x, np.ones((x.shape[0], 1))])


def primal_objective(w, x_aug, y, lam):
    """(lam/2)||w||^2 + mean hinge on augmented data."""
    margins = y * (x_aug @ w)
    return 0.5 * lam * float(w @ w) + float(np.maximum(0.0, 1.0 - margins).mean())


@njit(cache=True)
def _pegasos_updates(x, y, order, lam):
    n, d = x.shape
    w = np.zeros(d)
    wavg = np.zeros(d)
    radius = 1.0 / np.sqrt(lam)
    t = 0
    for s in range(order.shape[0]):
        i = order[s]
        t += 1
        eta = 1.0 / (lam * t)
        margin = 0.0
        for k in range(d):
            margin += w[k] * x[i, k]
        margin *= y[i]
        decay = 1.0 - eta * lam
        if margin < 1.0:
            step = eta * y[i]
            for k in range(d):
                w[k] = w[k] * decay + step * x[i, k]
        else:
            for k in range(d):
                w[k] = w[k] * decay
        # project back onto the ball that must contain the optimum
        sq = 0.0
        for k in range(d):
            sq += w[k] * w[k]
        if sq > radius * radius:
            shrink = radius / np.sqrt(sq)
            for k in range(d):
                w[k] *= shrink
        for k in range(d):
            wavg[k] += (w[k] - wavg[k]) / t
    return wavg


def _epoch_order(n, epochs, stream):
    order = np.empty(n * epochs, dtype=np.int64)
    for e in range(epochs):
        order[e * n : (e + 1) * n] = stream.permutation(n)
    return order


def _solve(x_aug, y, config, stream=None):
    n = x_aug.shape[0]
    lam = 1.0 / (config.c_reg * n)
    if stream is None:
        stream = RandomStream(config.seed)
    order = _epoch_order(n, config.epochs, stream)
    w = _pegasos_updates(x_aug, y, order, lam)
    # objective safety net: never return something worse than the zero model
    if primal_objective(w, x_aug, y, lam) > primal_objective(np.zeros_like(w), x_aug, y, lam):
        w = np.zeros_like(w)
    return w


def train_binary_svm(positives, negatives, config):
    """Train a binary hinge classifier from positive and negative feature rows."""
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if positives.shape[0] == 0 or negatives.shape[0] == 0:
        raise ValueError("need at least one positive and one negative example")
    if positives.shape[1] != negatives.shape[1]:
        raise ShapeError("positive dim %d != negative dim %d" % (positives.shape[1], negatives.shape[1]))
    x_aug = augment(np.vstack([positives, negatives]))
    y = np.concatenate([np.ones(positives.shape[0]), -np.ones(negatives.shape[0])])
    return BinaryLinearModel(weights=_solve(x_aug, y, config))


def train_multiclass_svm(per_class_positives, config):
    """One-vs-rest stack of binary classifiers, one column per class.

    Column order follows the input mapping's order.  Internally every column
    is fit on the same sample stack (classes concatenated in sorted-label
    order) with the same shuffle sequence, so relabelings act on the output
    by exact sign/permutation symmetry.
    """
    labels = list(per_class_positives.keys())
    if len(labels) < 2:
        raise ValueError("multi-class training needs >= 2 classes")
    blocks = {}
    for lab in labels:
        block = np.atleast_2d(np.asarray(per_class_positives[lab], dtype=np.float64))
        if block.shape[0] == 0:
            raise ValueError("class %r has no examples" % (lab,))
        blocks[lab] = block
    sorted_labels = sorted(labels)
    x_aug = augment(np.vstack([blocks[lab] for lab in sorted_labels]))
    owner = np.concatenate([np.full(blocks[lab].shape[0], si) for si, lab in enumerate(sorted_labels)])
    columns = {}
    for si, lab in enumerate(sorted_labels):
        y = np.where(owner == si, 1.0, -1.0)
        columns[lab] = _solve(x_aug, y, config)
    return MultiClassLinearModel(weights=np.stack([columns[lab] for lab in labels], axis=1), class_labels=labels)


def predict_score(model, x):
    """w . x + bias for one d-vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.feature_dim,):
        raise ShapeError("expected feature dim %d, got shape %s" % (model.feature_dim, x.shape))
    return float(model.weights[:-1] @ x + model.weights[-1])


def predict_scores(model, x_rows):
    """Scores for a batch of rows; returns (n,) for binary, (n, c) for multi-class."""
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    if x_rows.shape[1] != model.feature_dim:
        raise ShapeError("expected feature dim %d, got %d" % (model.feature_dim, x_rows.shape[1]))
    return augment(x_rows) @ model.weights


def predict_class(model, x):
    """Label of the highest-scoring column; ties go to the lowest column index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.feature_dim,):
        raise ShapeError("expected feature dim %d, got shape %s" % (model.feature_dim, x.shape))
    scores = augment(x[None, :]) @ model.weights
    return model.class_labels[int(np.argmax(scores[0]))]


def save_model(model, path_prefix):
    """Write <prefix>.json header plus <prefix>.w64le little-endian weights."""
    header = {"format_version": 1, "feature_dim": int(model.feature_dim)}
    if isinstance(model, MultiClassLinearModel):
        header["class_labels"] = list(model.class_labels)
    with open(path_prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    with open(path_prefix + ".w64le", "wb") as fh:
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_model(path_prefix):
    with open(path_prefix + ".json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    if header.get("format_version") != 1:
        raise ValueError("unsupported model format version %r" % (header.get("format_version"),))
    raw = np.fromfile(path_prefix + ".w64le", dtype="<f8")
    d = header["feature_dim"]
    if "class_labels" in header:
        labels = header["class_labels"]
        if raw.size != (d + 1) * len(labels):
            raise ValueError("weight payload size %d does not match header" % raw.size)
        return MultiClassLinearModel(weights=raw.reshape(d + 1, len(labels)), class_labels=labels)
    if raw.size != d + 1:
        raise ValueError("weight payload size %d does not match header" % raw.size)
    return BinaryLinearModel(weights=raw)
