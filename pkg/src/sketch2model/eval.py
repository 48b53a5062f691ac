"""Ranking metrics and the non-regression baselines.

Average precision ranks photos by classifier score (ties broken by original
index, via a stable sort) and averages precision at each positive.  The
nearest-neighbor baseline treats labeled sketches as if they were photos and
scores by negative Euclidean distance to the closest one.  Subspace
alignment maps PCA-projected source features into the target's principal
subspace with M = Xs^T Xt.
"""

from dataclasses import dataclass

import numpy as np

from sketch2model.core import ShapeError
from sketch2model.svm import augment


class MetricError(ValueError):
    pass


@dataclass
class RankedResult:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.scores.ndim != 1 or self.scores.shape != self.labels.shape:
            raise ShapeError(
                "scores and labels must be equal-length vectors, got %s and %s" % (self.scores.shape, self.labels.shape)
            )
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be binary")
        self.labels = self.labels.astype(np.int64)


def average_precision(result, interpolated=False):
    """Mean precision over positive ranks; Pascal-style interpolation optional."""
    if result.labels.sum() == 0:
        raise MetricError("average precision needs at least one positive label")
    order = np.argsort(-result.scores, kind="stable")
    ranked = result.labels[order]
    ranks = np.arange(1, ranked.size + 1)
    precision = np.cumsum(ranked) / ranks
    if interpolated:
        precision = np.maximum.accumulate(precision[::-1])[::-1]
    return float(precision[ranked == 1].mean())


def mean_ap(results, interpolated=False):
    if not results:
        raise MetricError("mean AP over an empty result list is undefined")
    return float(np.mean([average_precision(r, interpolated=interpolated) for r in results]))


def multiclass_accuracy(model, photos, labels):
    """Fraction of photos whose argmax column matches the true label."""
    photos = np.atleast_2d(np.asarray(photos, dtype=np.float64))
    if photos.shape[0] == 0:
        raise ValueError("empty evaluation set")
    if len(labels) != photos.shape[0]:
        raise ShapeError("need one label per photo")
    if photos.shape[1] != model.feature_dim:
        raise ShapeError("photo dim %d != model dim %d" % (photos.shape[1], model.feature_dim))
    for lab in labels:
        if lab not in model.class_labels:
            raise ValueError("label %r is not among the model's classes" % (lab,))
    scores = augment(photos) @ model.weights
    predicted = np.argmax(scores, axis=1)
    truth = np.array([model.class_labels.index(lab) for lab in labels])
    return float((predicted == truth).mean())


def nn_scores(photos, sketch_rows):
    """Negative distance from each photo to its nearest sketch in the set."""
    sketch_rows = np.atleast_2d(np.asarray(sketch_rows, dtype=np.float64))
    if sketch_rows.shape[0] == 0:
        raise ValueError("empty sketch set")
    diffs = photos[:, None, :] - sketch_rows[None, :, :]
    dists = np.sqrt((diffs * diffs).sum(axis=2))
    return -dists.min(axis=1)


def nn_baseline(query_photos, labeled_sketches):
    """Per-category ranked results for the sketch nearest-neighbor baseline.

    query_photos maps category -> photo rows (the evaluation pool), and
    labeled_sketches maps category -> sketch rows.  Every photo is scored
    against every sketch category.
    """
    photo_cats = []
    blocks = []
    for cat, rows in query_photos.items():
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        blocks.append(rows)
        photo_cats += [cat] * rows.shape[0]
    if not blocks:
        raise ValueError("no query photos")
    photos = np.vstack(blocks)
    results = {}
    for cat, sketches in labeled_sketches.items():
        scores = nn_scores(photos, sketches)
        labels = np.array([1 if pc == cat else 0 for pc in photo_cats])
        results[cat] = RankedResult(scores=scores, labels=labels)
    return results


def nn_predict(photos, labeled_sketches):
    """Nearest-sketch classification; ties resolved by category listing order."""
    photos = np.atleast_2d(np.asarray(photos, dtype=np.float64))
    cats = list(labeled_sketches.keys())
    score_matrix = np.stack([nn_scores(photos, labeled_sketches[c]) for c in cats], axis=1)
    return [cats[i] for i in np.argmax(score_matrix, axis=1)]


def _pca_basis(feats, d_sub):
    feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / feats.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:d_sub]
    evals = evals[order]
    basis = evecs[:, order]
    tol = max(evals[0], 0.0) * 1e-9 + 1e-12
    if evals[-1] <= tol:
        raise MetricError("data rank is below d_sub=%d" % d_sub)
    # sign convention: the largest-magnitude entry of each component is positive
    for j in range(basis.shape[1]):
        if basis[np.argmax(np.abs(basis[:, j])), j] < 0:
            basis[:, j] = -basis[:, j]
    return mean, basis


@dataclass
class SubspaceAlignment:
    mean_s: np.ndarray
    mean_t: np.ndarray
    basis_s: np.ndarray
    basis_t: np.ndarray
    m: np.ndarray

    def align_source(self, feats):
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        return (feats - self.mean_s) @ self.basis_s @ self.m

    def project_target(self, feats):
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        return (feats - self.mean_t) @ self.basis_t


def subspace_alignment(source_feats, target_feats, d_sub=32):
    """Align the source PCA subspace to the target's (M = Xs^T Xt)."""
    source_feats = np.atleast_2d(np.asarray(source_feats, dtype=np.float64))
    target_feats = np.atleast_2d(np.asarray(target_feats, dtype=np.float64))
    d = source_feats.shape[1]
    if target_feats.shape[1] != d:
        raise ShapeError("source dim %d != target dim %d" % (d, target_feats.shape[1]))
    if d_sub > min(d, source_feats.shape[0], target_feats.shape[0]):
        raise MetricError("d_sub=%d exceeds data dimensionality" % d_sub)
    mean_s, basis_s = _pca_basis(source_feats, d_sub)
    mean_t, basis_t = _pca_basis(target_feats, d_sub)
    return SubspaceAlignment(
        mean_s=mean_s, mean_t=mean_t, basis_s=basis_s, basis_t=basis_t, m=basis_s.T @ basis_t
    )
