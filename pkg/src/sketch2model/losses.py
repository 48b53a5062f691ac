"""Training losses for weight regression.

Two families: regression losses that pull a synthesized classifier toward a
ground-truth one (plain Euclidean / Frobenius distance, unsquared), and
performance losses that score the synthesized classifier directly on photo
features (hinge for binary models, softmax cross-entropy for multi-class).
The combined objective is their weighted sum.

Gradient conventions at non-smooth points: the regression gradient is the
zero vector at an exact match, and the hinge subgradient takes the zero
branch when the margin sits exactly at 1.
"""

from dataclasses import dataclass

import numpy as np

from sketch2model.core import ShapeError
from sketch2model.svm import augment

LOG_FLOOR = 1e-300


@dataclass
class LossWeights:
    alpha: float = 0.01
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("at least one loss weight must be positive")


def regression_loss_vec(predicted, target, squared=False):
    """Euclidean distance between weight vectors and its gradient.

    Returns (loss, grad wrt predicted).  With squared=True the loss is the
    squared distance instead, which keeps the gradient smooth everywhere.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape or predicted.ndim != 1:
        raise ShapeError("expected equal-length vectors, got %s and %s" % (predicted.shape, target.shape))
    diff = predicted - target
    if squared:
        return float(diff @ diff), 2.0 * diff
    norm = float(np.sqrt(diff @ diff))
    if norm == 0.0:
        return 0.0, np.zeros_like(diff)
    return norm, diff / norm


def regression_loss_mat(predicted, target, squared=False):
    """Frobenius-distance analog of regression_loss_vec for weight matrices."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape or predicted.ndim != 2:
        raise ShapeError("expected equal-shape matrices, got %s and %s" % (predicted.shape, target.shape))
    diff = predicted - target
    if squared:
        return float((diff * diff).sum()), 2.0 * diff
    norm = float(np.sqrt((diff * diff).sum()))
    if norm == 0.0:
        return 0.0, np.zeros_like(diff)
    return norm, diff / norm


def hinge_performance_loss(model, photos, labels):
    """Mean hinge loss of a binary model on labeled photos.

    labels are +/-1.  Returns (loss, grad wrt the (d+1) weight vector);
    margins exactly at 1 contribute nothing to the gradient.
    """
    photos = np.atleast_2d(np.asarray(photos, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64)
    if photos.shape[0] == 0:
        raise ValueError("photo batch is empty")
    if labels.shape != (photos.shape[0],):
        raise ShapeError("need one label per photo, got %s for %d photos" % (labels.shape, photos.shape[0]))
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    x_aug = augment(photos)
    if x_aug.shape[1] != model.weights.shape[0]:
        raise ShapeError("photo dim %d does not match model dim %d" % (photos.shape[1], model.feature_dim))
    margins = labels * (x_aug @ model.weights)
    active = margins < 1.0
    loss = float(np.maximum(0.0, 1.0 - margins).mean())
    grad = -(labels[active, None] * x_aug[active]).sum(axis=0) / photos.shape[0]
    return loss, grad


def softmax(scores):
    """Row-wise softmax with max subtraction."""
    scores = np.asarray(scores, dtype=np.float64)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def ce_performance_loss(model, photos, labels):
    """Mean softmax cross-entropy of a multi-class model on one-hot-labeled photos.

    Returns (loss, grad wrt the (d+1) x c weight matrix).
    """
    photos = np.atleast_2d(np.asarray(photos, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
    if photos.shape[0] == 0:
        raise ValueError("photo batch is empty")
    c = model.weights.shape[1]
    if labels.shape != (photos.shape[0], c):
        raise ShapeError("need one-hot labels of shape (%d, %d), got %s" % (photos.shape[0], c, labels.shape))
    onehot_ok = np.all(np.isin(labels, (0.0, 1.0))) and np.all(labels.sum(axis=1) == 1.0)
    if not onehot_ok:
        raise ValueError("labels must be one-hot rows")
    x_aug = augment(photos)
    if x_aug.shape[1] != model.weights.shape[0]:
        raise ShapeError("photo dim %d does not match model dim %d" % (photos.shape[1], model.feature_dim))
    probs = softmax(x_aug @ model.weights)
    n = photos.shape[0]
    loss = float(-(labels * np.log(np.maximum(probs, LOG_FLOOR))).sum() / n)
    grad = x_aug.T @ (probs - labels) / n
    return loss, grad


def combined_objective(reg_loss, perf_loss, weights):
    """alpha * regression loss + beta * performance loss."""
    if not (np.isfinite(reg_loss) and np.isfinite(perf_loss)):
        raise ValueError("losses must be finite")
    return weights.alpha * reg_loss + weights.beta * perf_loss
