"""End-to-end assembly: build regressor inputs, train against ground-truth
photo classifiers, synthesize classifiers for unseen categories.

A training pair couples one regressor input (a few-shot sketch model, a
fused sketch feature, a word embedding, or a coarse-model fusion) with the
target category's many-shot photo classifier.  The photo classifiers are
trained once per category and cached; variety across pairs comes from
resampled sketches and varied SVM regularization, as in the source
protocol.

All sampling flows from one seed through named stream children, so a run
is reproducible end to end:

    child(0) -> network init        child(3) -> epoch shuffles
    child(1) -> ground-truth SVMs   child(4) -> performance-loss batches
    child(2) -> input generation
"""

from dataclasses import dataclass, field

import numpy as np

from sketch2model.core import RandomStream, ShapeError
from sketch2model.dataset import CapacityError, CategorySplit, average_features, sample_few_shot
from sketch2model.losses import LOG_FLOOR, LossWeights
from sketch2model.regnet import (
    ConvRegressor,
    MlpRegressor,
    adam_step,
    conv_backward,
    conv_forward,
    create_adam,
    mlp_backward,
    mlp_forward,
)
from sketch2model.svm import (
    C_GRID,
    BinaryLinearModel,
    MultiClassLinearModel,
    SvmConfig,
    train_binary_svm,
    train_multiclass_svm,
)

BINARY_KINDS = (
    "model_to_model_binary",
    "feature_to_model_binary",
    "embedding_to_model",
    "feature_plus_embedding",
    "coarse_fusion",
)
MULTICLASS_KINDS = ("model_to_model_multiclass", "feature_to_model_multiclass")
MODALITY_KINDS = BINARY_KINDS + MULTICLASS_KINDS


@dataclass
class InputModality:
    kind: str
    k: int = 1
    c: int = 0

    def __post_init__(self):
        if self.kind not in MODALITY_KINDS:
            raise ValueError("unknown modality kind %r" % (self.kind,))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.is_multiclass and self.c < 2:
            raise ValueError("multiclass modalities need c >= 2")

    @property
    def is_multiclass(self):
        return self.kind in MULTICLASS_KINDS


@dataclass
class TrainingRun:
    modality: InputModality
    split: CategorySplit
    ensembles: int = 500
    loss_weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 2e-5
    batch_size: int = 0  # 0 resolves to the modality default: 64 binary, 16 multiclass
    epochs: int = 30
    seed: int = 0
    negatives: int = 600
    n_groups: int = 500
    svm_epochs: int = 50
    gt_c_reg: float = 1.0
    hidden: tuple = (512, 512, 512)
    perf_positives: int = 8
    kernel_m: int = 3
    pad_row: float = 1.0
    squared: bool = False

    def __post_init__(self):
        if self.ensembles < 1:
            raise ValueError("ensembles must be >= 1")
        if self.batch_size < 0 or self.batch_size == 1:
            raise ValueError("batch_size must be 0 (default) or >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @property
    def resolved_batch_size(self):
        if self.batch_size:
            return self.batch_size
        return 16 if self.modality.is_multiclass else 64


def _require_domain(manifest, domain, modality_kind):
    if domain not in manifest.dims:
        raise ValueError("modality %s requires the %s domain in the manifest" % (modality_kind, domain))


def input_dim_for(modality, manifest):
    """Flat input length (binary kinds) or (rows, c) shape (multiclass kinds)."""
    _require_domain(manifest, "sketch", modality.kind)
    d_s = manifest.dims["sketch"]
    if modality.kind == "model_to_model_binary":
        return d_s + 1
    if modality.kind == "feature_to_model_binary":
        return d_s
    if modality.kind == "embedding_to_model":
        _require_domain(manifest, "embedding", modality.kind)
        return manifest.dims["embedding"]
    if modality.kind == "feature_plus_embedding":
        _require_domain(manifest, "embedding", modality.kind)
        return d_s + manifest.dims["embedding"]
    if modality.kind == "coarse_fusion":
        _require_domain(manifest, "photo", modality.kind)
        return manifest.dims["photo"] + 1 + d_s
    return (d_s + 1, modality.c)


def _sampled_sketch_svm(manifest, category, k, negatives, svm_config, stream):
    pos, neg = sample_few_shot(manifest, category, "sketch", k, negatives, stream)
    return train_binary_svm(pos, neg, svm_config)


def _fused_feature(manifest, category, k, stream, quality_range=None):
    pos, _ = sample_few_shot(manifest, category, "sketch", k, 0, stream, quality_range=quality_range)
    return average_features(pos)


def _category_embedding(manifest, category):
    rows = manifest.vectors(category, "embedding")
    if rows.shape[0] == 0:
        raise ValueError("category %r has no embedding record" % (category,))
    return rows[0]


def build_input(
    modality,
    category,
    manifest,
    auxiliary=None,
    stream=None,
    negatives=600,
    svm_config=None,
    pad_row=1.0,
    quality_range=None,
):
    """One regressor input for a category (binary kinds) or category group.

    auxiliary carries the coarse photo model for coarse_fusion.  svm_config
    sets the solver for model-to-model inputs (default C=1).  quality_range
    restricts the sampled positive sketches when the manifest has scores.
    """
    if stream is None:
        stream = RandomStream(0)
    if svm_config is None:
        svm_config = SvmConfig(c_reg=1.0)
    kind = modality.kind
    if kind == "model_to_model_binary":
        return _sampled_sketch_svm(manifest, category, modality.k, negatives, svm_config, stream).weights
    if kind == "feature_to_model_binary":
        return _fused_feature(manifest, category, modality.k, stream, quality_range)
    if kind == "embedding_to_model":
        return _category_embedding(manifest, category)
    if kind == "feature_plus_embedding":
        fused = _fused_feature(manifest, category, modality.k, stream, quality_range)
        return np.concatenate([fused, _category_embedding(manifest, category)])
    if kind == "coarse_fusion":
        if auxiliary is None:
            raise ValueError("coarse_fusion requires the coarse photo model as auxiliary input")
        fused = _fused_feature(manifest, category, modality.k, stream, quality_range)
        return np.concatenate([auxiliary.weights, fused])
    # multiclass: category is a group of class names
    group = list(category)
    if len(group) != modality.c:
        raise ValueError("expected a group of %d categories, got %d" % (modality.c, len(group)))
    if kind == "model_to_model_multiclass":
        per_class = {}
        for cat in group:
            pos, _ = sample_few_shot(manifest, cat, "sketch", modality.k, 0, stream, quality_range=quality_range)
            per_class[cat] = pos
        return train_multiclass_svm(per_class, svm_config).weights
    columns = [_fused_feature(manifest, cat, modality.k, stream, quality_range) for cat in group]
    stacked = np.stack(columns, axis=1)
    return np.vstack([stacked, np.full((1, len(group)), pad_row)])


def _negative_photo_pool(manifest, category, categories):
    rows = [manifest.vectors(c, "photo") for c in categories if c != category]
    return np.vstack([r for r in rows if r.shape[0]])


def train_ground_truth_binary(manifest, categories, negatives, c_reg, svm_epochs, stream):
    """Many-shot photo classifier per category: all its photos vs sampled negatives."""
    models = {}
    for i, cat in enumerate(sorted(categories)):
        child = stream.child(i)
        positives = manifest.vectors(cat, "photo")
        if positives.shape[0] == 0:
            raise CapacityError("category %r has no photos for ground truth" % (cat,))
        pool = _negative_photo_pool(manifest, cat, sorted(categories))
        if pool.shape[0] < negatives:
            raise CapacityError(
                "category %r: %d negative photos available, %d requested" % (cat, pool.shape[0], negatives)
            )
        neg = pool[child.subset(pool.shape[0], negatives)]
        config = SvmConfig(c_reg=c_reg, epochs=svm_epochs, seed=int(child.index(1 << 62)))
        models[cat] = train_binary_svm(positives, neg, config)
    return models


def train_ground_truth_multiclass(manifest, group, c_reg, svm_epochs, seed):
    per_class = {cat: manifest.vectors(cat, "photo") for cat in group}
    return train_multiclass_svm(per_class, SvmConfig(c_reg=c_reg, epochs=svm_epochs, seed=seed))


def _check_capacity(run, manifest):
    kind = run.modality.kind
    cats = sorted(run.split.train_categories)
    sketch_counts = {c: len(manifest.select(c, "sketch")) for c in cats}
    for cat in cats:
        if sketch_counts[cat] < run.modality.k:
            raise CapacityError(
                "category %r has %d sketches, k=%d requested" % (cat, sketch_counts[cat], run.modality.k)
            )
        if kind in ("embedding_to_model", "feature_plus_embedding"):
            if len(manifest.select(cat, "embedding")) == 0:
                raise CapacityError("category %r has no embedding record" % (cat,))
    if kind == "model_to_model_binary":
        total = sum(sketch_counts.values())
        for cat in cats:
            if total - sketch_counts[cat] < run.negatives:
                raise CapacityError(
                    "category %r: %d negative sketches available, %d requested"
                    % (cat, total - sketch_counts[cat], run.negatives)
                )
    if run.modality.is_multiclass and len(cats) < run.modality.c:
        raise CapacityError("%d train categories cannot form %d-way groups" % (len(cats), run.modality.c))
    # performance batches draw with replacement, but both sides must be populated
    photo_counts = {c: len(manifest.select(c, "photo")) for c in cats}
    total_photos = sum(photo_counts.values())
    for cat in cats:
        if photo_counts[cat] == 0:
            raise CapacityError("category %r has no photos for performance batches" % (cat,))
        if not run.modality.is_multiclass and total_photos == photo_counts[cat]:
            raise CapacityError("category %r has no negative photos for performance batches" % (cat,))


def _per_class_perf(perf_positives, c):
    return max(2, perf_positives // c)


def _batched_binary_losses(out, targets, photos, labels, squared):
    """Per-pair regression and hinge terms for a whole batch at once.

    photos is (B, P, d) raw; the math matches the scalar loss functions
    pair by pair.
    """
    diffs = out - targets
    norms = np.linalg.norm(diffs, axis=1)
    if squared:
        reg_losses = norms ** 2
        reg_grads = 2.0 * diffs
    else:
        reg_losses = norms
        safe = np.where(norms > 0.0, norms, 1.0)
        reg_grads = np.where(norms[:, None] > 0.0, diffs / safe[:, None], 0.0)
    aug = np.concatenate([photos, np.ones(photos.shape[:2] + (1,))], axis=2)
    margins = labels * np.einsum("bpd,bd->bp", aug, out)
    active = margins < 1.0
    p = photos.shape[1]
    perf_losses = np.maximum(0.0, 1.0 - margins).sum(axis=1) / p
    perf_grads = -np.einsum("bp,bpd->bd", labels * active, aug) / p
    return reg_losses, reg_grads, perf_losses, perf_grads


def _batched_multiclass_losses(out, targets, photos, onehot, squared):
    """Frobenius regression plus cross-entropy terms, batched; out is (B, rows, c)."""
    diffs = out - targets
    norms = np.sqrt((diffs ** 2).sum(axis=(1, 2)))
    if squared:
        reg_losses = norms ** 2
        reg_grads = 2.0 * diffs
    else:
        reg_losses = norms
        safe = np.where(norms > 0.0, norms, 1.0)
        reg_grads = np.where(norms[:, None, None] > 0.0, diffs / safe[:, None, None], 0.0)
    aug = np.concatenate([photos, np.ones(photos.shape[:2] + (1,))], axis=2)
    scores = np.einsum("bpd,bdc->bpc", aug, out)
    shifted = scores - scores.max(axis=2, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=2, keepdims=True)
    picked = np.maximum((probs * onehot).sum(axis=2), LOG_FLOOR)
    p = photos.shape[1]
    perf_losses = -np.log(picked).sum(axis=1) / p
    perf_grads = np.einsum("bpc,bpd->bdc", probs - onehot, aug) / p
    return reg_losses, reg_grads, perf_losses, perf_grads


def _generate_pairs(run, manifest, grouping, coarse_models, stream):
    """The (input, target weights, category-or-group) triples for one run."""
    kind = run.modality.kind
    cats = sorted(run.split.train_categories)
    pairs = []
    if run.modality.is_multiclass:
        gt_cache = {}
        for g in range(run.n_groups):
            gchild = stream.child(g)
            member_idx = gchild.subset(len(cats), run.modality.c)
            group = tuple(cats[i] for i in member_idx)
            if group not in gt_cache:
                gt_cache[group] = train_ground_truth_multiclass(
                    manifest, group, run.gt_c_reg, run.svm_epochs, seed=int(gchild.index(1 << 62))
                )
            for e in range(run.ensembles):
                child = gchild.child(e)
                cfg = SvmConfig(
                    c_reg=C_GRID[int(child.index(len(C_GRID)))],
                    epochs=run.svm_epochs,
                    seed=int(child.index(1 << 62)),
                )
                x = build_input(
                    run.modality, group, manifest, stream=child, negatives=run.negatives,
                    svm_config=cfg, pad_row=run.pad_row,
                )
                pairs.append((x, gt_cache[group].weights, group))
        return pairs
    gt = train_ground_truth_binary(
        manifest, cats, run.negatives, run.gt_c_reg, run.svm_epochs, stream.child(0)
    )
    for ci, cat in enumerate(cats):
        aux = None
        if kind == "coarse_fusion":
            aux = coarse_models[grouping.group_of(cat)]
        for e in range(run.ensembles):
            child = stream.child(1).child(ci).child(e)
            cfg = SvmConfig(
                c_reg=C_GRID[int(child.index(len(C_GRID)))],
                epochs=run.svm_epochs,
                seed=int(child.index(1 << 62)),
            )
            x = build_input(
                run.modality, cat, manifest, auxiliary=aux, stream=child,
                negatives=run.negatives, svm_config=cfg, pad_row=run.pad_row,
            )
            pairs.append((x, gt[cat].weights, cat))
    return pairs


def train_coarse_models(manifest, grouping, categories, negatives, c_reg, svm_epochs, stream, domain="photo"):
    """One coarse classifier per group: pooled fine-category vectors vs the rest."""
    cats = sorted(set(categories))
    by_group = {}
    for cat in cats:
        by_group.setdefault(grouping.group_of(cat), []).append(cat)
    models = {}
    for i, (group, members) in enumerate(sorted(by_group.items())):
        child = stream.child(i)
        positives = np.vstack([manifest.vectors(c, domain) for c in members])
        pool = np.vstack([manifest.vectors(c, domain) for c in cats if grouping.group_of(c) != group])
        n_neg = min(negatives, pool.shape[0])
        if n_neg == 0:
            raise CapacityError("coarse group %r has no negatives" % (group,))
        neg = pool[child.subset(pool.shape[0], n_neg)]
        config = SvmConfig(c_reg=c_reg, epochs=svm_epochs, seed=int(child.index(1 << 62)))
        models[group] = train_binary_svm(positives, neg, config)
    return models


def train_regressor(run, manifest, grouping=None):
    """Train the run's regressor; returns (network, per-epoch loss log)."""
    if run.modality.kind == "coarse_fusion" and grouping is None:
        raise ValueError("coarse_fusion training requires a coarse grouping")
    # inputs, targets, and negatives all come from the train side only
    manifest = manifest.restrict(sorted(run.split.train_categories))
    _check_capacity(run, manifest)
    root = RandomStream(run.seed)
    dims = input_dim_for(run.modality, manifest)
    if run.modality.is_multiclass:
        if manifest.dims["sketch"] != manifest.dims["photo"]:
            raise ShapeError(
                "multiclass regression preserves shape: sketch dim %d != photo dim %d"
                % (manifest.dims["sketch"], manifest.dims["photo"])
            )
        net = ConvRegressor.create(stream=root.child(0), kernel_m=run.kernel_m)
    else:
        out_dim = manifest.dims["photo"] + 1
        net = MlpRegressor.create(dims, out_dim, hidden=run.hidden, stream=root.child(0))
    coarse_models = None
    if run.modality.kind == "coarse_fusion":
        coarse_models = train_coarse_models(
            manifest, grouping, run.split.train_categories, run.negatives, run.gt_c_reg,
            run.svm_epochs, root.child(1),
        )
    pairs = _generate_pairs(run, manifest, grouping, coarse_models, root.child(2))
    photos_by_cat = {}
    train_cats = sorted(run.split.train_categories)
    for cat in train_cats:
        photos_by_cat[cat] = manifest.vectors(cat, "photo")
        photos_by_cat["__neg__" + cat] = _negative_photo_pool(manifest, cat, train_cats)
    state = create_adam(net.parameters(), learning_rate=run.learning_rate)
    batch_size = run.resolved_batch_size
    log = []
    shuffler = root.child(3)
    perf_stream = root.child(4)
    step = 0
    for epoch in range(run.epochs):
        order = shuffler.child(epoch).permutation(len(pairs))
        sums = np.zeros(3)  # objective, regression, performance
        chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
        if len(chunks) > 1 and len(chunks[-1]) == 1:
            chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
            chunks.pop()
        for chunk in chunks:
            batch = [pairs[i] for i in chunk]
            step += 1
            sums += _train_step(run, net, batch, photos_by_cat, state, perf_stream.child(step))
        n = len(chunks)
        log.append(
            {
                "epoch": epoch,
                "objective": sums[0] / n,
                "regression": sums[1] / n,
                "performance": sums[2] / n,
            }
        )
    return net, log


def _assemble_perf_binary(photos_by_cat, batch, perf_positives, stream):
    """Balanced photo batches for every pair at once, drawn with replacement.

    Positives come from the pair's category, negatives uniformly from the
    rest; one bulk uniform draw keeps the step cheap.
    """
    b = len(batch)
    u = stream.uniform(b * 2 * perf_positives).reshape(b, 2 * perf_positives)
    stacks = []
    for i, (_, _, cat) in enumerate(batch):
        own = photos_by_cat[cat]
        pool = photos_by_cat["__neg__" + cat]
        pos = own[(u[i, :perf_positives] * own.shape[0]).astype(np.int64)]
        neg = pool[(u[i, perf_positives:] * pool.shape[0]).astype(np.int64)]
        stacks.append(np.vstack([pos, neg]))
    labels = np.concatenate([np.ones(perf_positives), -np.ones(perf_positives)])
    return np.stack(stacks), np.tile(labels, (b, 1))


def _assemble_perf_multiclass(photos_by_cat, batch, per_class, stream):
    """Class-balanced photo batches per group pair, drawn with replacement."""
    b = len(batch)
    c = len(batch[0][2])
    u = stream.uniform(b * c * per_class).reshape(b, c, per_class)
    stacks = []
    for i, (_, _, group) in enumerate(batch):
        rows = []
        for j, cat in enumerate(group):
            own = photos_by_cat[cat]
            rows.append(own[(u[i, j] * own.shape[0]).astype(np.int64)])
        stacks.append(np.vstack(rows))
    n = c * per_class
    onehot = np.zeros((n, c))
    onehot[np.arange(n), np.repeat(np.arange(c), per_class)] = 1.0
    return np.stack(stacks), np.tile(onehot, (b, 1, 1))


def _train_step(run, net, batch, photos_by_cat, state, stream):
    multi = run.modality.is_multiclass
    alpha, beta = run.loss_weights.alpha, run.loss_weights.beta
    n = len(batch)
    targets = np.stack([b[1] for b in batch])
    if multi:
        x = np.stack([b[0] for b in batch])[:, None, :, :]
        out, caches = conv_forward(net, x, "train")
        per_class = _per_class_perf(run.perf_positives, run.modality.c)
        photos, onehot = _assemble_perf_multiclass(photos_by_cat, batch, per_class, stream)
        reg_l, reg_g, perf_l, perf_g = _batched_multiclass_losses(
            out[:, 0], targets, photos, onehot, run.squared
        )
        upstream = ((alpha * reg_g + beta * perf_g) / n)[:, None, :, :]
        grads, _ = conv_backward(net, caches, upstream)
    else:
        x = np.stack([b[0] for b in batch])
        out, caches = mlp_forward(net, x, "train")
        photos, labels = _assemble_perf_binary(photos_by_cat, batch, run.perf_positives, stream)
        reg_l, reg_g, perf_l, perf_g = _batched_binary_losses(
            out, targets, photos, labels, run.squared
        )
        upstream = (alpha * reg_g + beta * perf_g) / n
        grads, _ = mlp_backward(net, caches, upstream)
    adam_step(net.parameters(), grads, state)
    reg_mean = float(reg_l.mean())
    perf_mean = float(perf_l.mean())
    return np.array([alpha * reg_mean + beta * perf_mean, reg_mean, perf_mean])


def synthesize_classifier(net, x, class_labels=None):
    """Eval-mode forward pass wrapped as a classifier model."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(net, MlpRegressor):
        if x.ndim != 1:
            raise ShapeError("binary synthesis expects a flat input vector, got shape %s" % (x.shape,))
        expected = net.weights[0].shape[0]
        if x.shape[0] != expected:
            raise ShapeError("input length %d does not match network input dim %d" % (x.shape[0], expected))
        out, _ = mlp_forward(net, x[None, :], "eval")
        return BinaryLinearModel(weights=out[0])
    if x.ndim != 2:
        raise ShapeError("multiclass synthesis expects a (rows, c) matrix, got shape %s" % (x.shape,))
    if class_labels is None or len(class_labels) != x.shape[1]:
        raise ValueError("multiclass synthesis needs one class label per input column")
    out, _ = conv_forward(net, x[None, None, :, :], "eval")
    return MultiClassLinearModel(weights=out[0, 0], class_labels=list(class_labels))
