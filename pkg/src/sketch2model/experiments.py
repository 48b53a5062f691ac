"""Experiment driver: a validated JSON config in, metric tables out.

Config schema (all unknown keys rejected; defaults in parentheses):

    experiment_id   str, non-empty
    manifest        str, path to a manifest directory
    modality        {"kind": ..., "k": int >= 1 (1), "c": int >= 2 for multiclass}
    split           {"n_test": int >= 1} or {"test_categories": [str, ...]}
    repetitions     int >= 1 (1)
    seed            int (0)
    ensembles       int >= 1 (500)
    models_per_category  int >= 1 (100)
    negatives       int >= 1 (600)
    n_groups        int >= 1 (500)
    svm_epochs      int >= 1 (50)
    gt_c_reg        number > 0 (1.0)
    loss_weights    {"alpha": >= 0 (0.01), "beta": >= 0 (1.0)}, not both zero
    optimizer       {"learning_rate": > 0 (2e-5), "epochs": int >= 1 (30),
                     "batch_size": 0 or >= 2 (0 = modality default)}
    hidden          [int, int, int] all >= 1 ([512, 512, 512])
    perf_positives  int >= 2 (8)
    kernel_m        odd int >= 1 (3)
    sweep           {"axis": "k" | "train_categories" | "quality", "values": [...]}
    grouping        str, path to a coarse grouping file (coarse_fusion only)

Validation reports every problem found, not just the first.  Results come
back as flat rows (experiment_id, category, repetition, metric_name, value)
plus a summary of per-metric means; both can be written as CSV.
"""

import csv
import json
import os

import numpy as np

from sketch2model.core import RandomStream
from sketch2model.dataset import (
    CapacityError,
    CategorySplit,
    load_coarse_grouping,
    sample_few_shot,
    split_categories,
)
from sketch2model.eval import RankedResult, average_precision, multiclass_accuracy, nn_predict, nn_scores
from sketch2model.losses import LossWeights
from sketch2model.manifest import load_manifest
from sketch2model.pipelines import (
    MODALITY_KINDS,
    MULTICLASS_KINDS,
    InputModality,
    TrainingRun,
    _fused_feature,
    build_input,
    synthesize_classifier,
    train_coarse_models,
    train_regressor,
)
from sketch2model.svm import SvmConfig, augment

QUALITY_STRATA = ("bottom", "middle", "top")
SWEEP_AXES = ("k", "train_categories", "quality")

_KNOWN_KEYS = {
    "experiment_id", "manifest", "modality", "split", "repetitions", "seed",
    "ensembles", "models_per_category", "negatives", "n_groups", "svm_epochs",
    "gt_c_reg", "loss_weights", "optimizer", "hidden", "perf_positives",
    "kernel_m", "sweep", "grouping",
}


class ExperimentConfigError(ValueError):
    """Carries every schema violation found in one pass."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__(
            "invalid experiment config:\n" + "\n".join("  - " + p for p in self.problems)
        )


def _get_int(problems, obj, key, default, minimum=None, where=""):
    if key not in obj:
        if default is None:
            problems.append("%s%s is required" % (where, key))
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        problems.append("%s%s must be an integer" % (where, key))
        return default
    if minimum is not None and v < minimum:
        problems.append("%s%s must be >= %d, got %d" % (where, key, minimum, v))
        return default
    return v


def _get_number(problems, obj, key, default, minimum=None, exclusive=False, where=""):
    if key not in obj:
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        problems.append("%s%s must be a number" % (where, key))
        return default
    if minimum is not None and (v <= minimum if exclusive else v < minimum):
        op = ">" if exclusive else ">="
        problems.append("%s%s must be %s %g, got %g" % (where, key, op, minimum, v))
        return default
    return float(v)


def _get_str(problems, obj, key, required=False, where=""):
    if key not in obj:
        if required:
            problems.append("%s%s is required" % (where, key))
        return None
    v = obj[key]
    if not isinstance(v, str) or not v:
        problems.append("%s%s must be a non-empty string" % (where, key))
        return None
    return v


def _validate_sweep(problems, sweep, kind):
    if not isinstance(sweep, dict):
        problems.append("sweep must be an object")
        return None
    axis = sweep.get("axis")
    if axis not in SWEEP_AXES:
        problems.append("sweep.axis must be one of %s" % (SWEEP_AXES,))
        return None
    values = sweep.get("values")
    if not isinstance(values, list) or not values:
        problems.append("sweep.values must be a non-empty list")
        return None
    for extra in set(sweep) - {"axis", "values"}:
        problems.append("sweep has unknown key %r" % (extra,))
    if axis == "quality":
        if kind in MULTICLASS_KINDS:
            problems.append("quality sweeps apply to binary modalities only")
        for v in values:
            if v not in QUALITY_STRATA:
                problems.append("sweep.values for quality must come from %s" % (QUALITY_STRATA,))
    else:
        for v in values:
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                problems.append("sweep.values for %s must be integers >= 1" % axis)
                break
    return {"axis": axis, "values": list(values)}


def validate_config(raw):
    """Normalize a config dict, collecting every violation before raising."""
    if not isinstance(raw, dict):
        raise ExperimentConfigError(["config root must be a JSON object"])
    problems = []
    for key in sorted(set(raw) - _KNOWN_KEYS):
        problems.append("unknown key %r" % (key,))
    cfg = {}
    cfg["experiment_id"] = _get_str(problems, raw, "experiment_id", required=True)
    cfg["manifest"] = _get_str(problems, raw, "manifest", required=True)

    modality = raw.get("modality")
    kind = None
    if not isinstance(modality, dict):
        problems.append("modality must be an object with a kind")
    else:
        kind = modality.get("kind")
        if kind not in MODALITY_KINDS:
            problems.append("modality.kind must be one of %s" % (MODALITY_KINDS,))
            kind = None
        k = _get_int(problems, modality, "k", 1, minimum=1, where="modality.")
        c = 0
        if modality.get("c", 0) not in (0, None):  # 0 marks "not set", the normalized form
            c = _get_int(problems, modality, "c", 0, minimum=2, where="modality.")
        if kind in MULTICLASS_KINDS and c == 0:
            problems.append("modality.c is required for multiclass kinds")
        if kind is not None and kind not in MULTICLASS_KINDS and c != 0:
            problems.append("modality.c is only valid for multiclass kinds")
        for extra in set(modality) - {"kind", "k", "c"}:
            problems.append("modality has unknown key %r" % (extra,))
        cfg["modality"] = {"kind": kind, "k": k, "c": c}

    split = raw.get("split")
    if not isinstance(split, dict):
        problems.append("split must be an object")
    else:
        has_n = split.get("n_test") is not None
        has_list = split.get("test_categories") is not None
        if has_n == has_list:
            problems.append("split needs exactly one of n_test or test_categories")
        n_test = _get_int(problems, split, "n_test", None, minimum=1, where="split.") if has_n else None
        test_cats = None
        if has_list:
            test_cats = split["test_categories"]
            if (
                not isinstance(test_cats, list)
                or not test_cats
                or not all(isinstance(c, str) and c for c in test_cats)
            ):
                problems.append("split.test_categories must be a non-empty list of category ids")
                test_cats = None
        for extra in set(split) - {"n_test", "test_categories"}:
            problems.append("split has unknown key %r" % (extra,))
        cfg["split"] = {"n_test": n_test, "test_categories": test_cats}

    cfg["repetitions"] = _get_int(problems, raw, "repetitions", 1, minimum=1)
    cfg["seed"] = _get_int(problems, raw, "seed", 0)
    cfg["ensembles"] = _get_int(problems, raw, "ensembles", 500, minimum=1)
    cfg["models_per_category"] = _get_int(problems, raw, "models_per_category", 100, minimum=1)
    cfg["negatives"] = _get_int(problems, raw, "negatives", 600, minimum=1)
    cfg["n_groups"] = _get_int(problems, raw, "n_groups", 500, minimum=1)
    cfg["svm_epochs"] = _get_int(problems, raw, "svm_epochs", 50, minimum=1)
    cfg["gt_c_reg"] = _get_number(problems, raw, "gt_c_reg", 1.0, minimum=0.0, exclusive=True)

    lw = raw.get("loss_weights", {})
    if not isinstance(lw, dict):
        problems.append("loss_weights must be an object")
        lw = {}
    alpha = _get_number(problems, lw, "alpha", 0.01, minimum=0.0, where="loss_weights.")
    beta = _get_number(problems, lw, "beta", 1.0, minimum=0.0, where="loss_weights.")
    if alpha == 0.0 and beta == 0.0:
        problems.append("loss_weights.alpha and beta cannot both be zero")
    for extra in set(lw) - {"alpha", "beta"}:
        problems.append("loss_weights has unknown key %r" % (extra,))
    cfg["loss_weights"] = {"alpha": alpha, "beta": beta}

    opt = raw.get("optimizer", {})
    if not isinstance(opt, dict):
        problems.append("optimizer must be an object")
        opt = {}
    lr = _get_number(problems, opt, "learning_rate", 2e-5, minimum=0.0, exclusive=True, where="optimizer.")
    epochs = _get_int(problems, opt, "epochs", 30, minimum=1, where="optimizer.")
    batch = _get_int(problems, opt, "batch_size", 0, minimum=0, where="optimizer.")
    if batch == 1:
        problems.append("optimizer.batch_size must be 0 (modality default) or >= 2")
    for extra in set(opt) - {"learning_rate", "epochs", "batch_size"}:
        problems.append("optimizer has unknown key %r" % (extra,))
    cfg["optimizer"] = {"learning_rate": lr, "epochs": epochs, "batch_size": batch}

    hidden = raw.get("hidden", [512, 512, 512])
    if (
        not isinstance(hidden, list)
        or len(hidden) != 3
        or not all(isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in hidden)
    ):
        problems.append("hidden must be a list of 3 integers >= 1")
        hidden = [512, 512, 512]
    cfg["hidden"] = list(hidden)

    cfg["perf_positives"] = _get_int(problems, raw, "perf_positives", 8, minimum=2)
    kernel_m = _get_int(problems, raw, "kernel_m", 3, minimum=1)
    if kernel_m is not None and kernel_m % 2 == 0:
        problems.append("kernel_m must be odd")
        kernel_m = 3
    cfg["kernel_m"] = kernel_m

    cfg["sweep"] = _validate_sweep(problems, raw["sweep"], kind) if raw.get("sweep") is not None else None
    cfg["grouping"] = _get_str(problems, raw, "grouping") if raw.get("grouping") is not None else None
    if kind == "coarse_fusion" and cfg["grouping"] is None:
        problems.append("grouping is required for the coarse_fusion modality")
    if kind is not None and kind != "coarse_fusion" and cfg["grouping"] is not None:
        problems.append("grouping is only valid for the coarse_fusion modality")

    if problems:
        raise ExperimentConfigError(problems)
    return cfg


def load_experiment_config(path):
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ExperimentConfigError(["config is not valid JSON: %s" % e])
    return validate_config(raw)


def _resolve_split(cfg, manifest, grouping, stream):
    cats = manifest.categories("photo")
    spec = cfg["split"]
    if spec["test_categories"] is not None:
        test = spec["test_categories"]
        missing = sorted(set(test) - set(cats))
        if missing:
            raise ValueError("test categories not in manifest: %s" % missing)
        split = CategorySplit(train_categories=set(cats) - set(test), test_categories=set(test))
    elif grouping is not None:
        split = _coarse_split(grouping, cats, spec["n_test"], stream)
    else:
        split = split_categories(cats, spec["n_test"], stream)
    if grouping is not None:
        _check_groups_covered(grouping, split)
    return split


def _coarse_split(grouping, cats, n_test, stream):
    """Hold out fine categories while keeping every coarse group populated."""
    order = stream.permutation(len(cats))
    remaining = {}
    for c in cats:
        g = grouping.group_of(c)
        remaining[g] = remaining.get(g, 0) + 1
    test = []
    for i in order:
        if len(test) == n_test:
            break
        cat = cats[i]
        g = grouping.group_of(cat)
        if remaining[g] > 1:
            test.append(cat)
            remaining[g] -= 1
    if len(test) < n_test:
        raise CapacityError(
            "cannot hold out %d categories and keep every coarse group populated" % n_test
        )
    return CategorySplit(train_categories=set(cats) - set(test), test_categories=set(test))


def _check_groups_covered(grouping, split):
    train_groups = {grouping.group_of(c) for c in split.train_categories}
    for cat in sorted(split.test_categories):
        if grouping.group_of(cat) not in train_groups:
            raise CapacityError(
                "test category %r: its coarse group has no train members" % (cat,)
            )


def _quality_range(manifest, category, stratum):
    """Percentile band of the category's sketch quality scores."""
    if stratum is None:
        return None
    records = manifest.select(category, "sketch")
    scores = [r.quality for r in records if r.quality is not None]
    if not scores:
        raise CapacityError("category %r has no sketch quality scores" % (category,))
    lo, hi = np.percentile(scores, [100.0 / 3.0, 200.0 / 3.0])
    if stratum == "bottom":
        return (-np.inf, float(lo))
    if stratum == "middle":
        return (float(lo), float(hi))
    return (float(hi), np.inf)


def _binary_scores(model, photos):
    return augment(photos) @ model.weights


def _training_run(cfg, modality, split, seed):
    return TrainingRun(
        modality=modality,
        split=split,
        ensembles=cfg["ensembles"],
        loss_weights=LossWeights(**cfg["loss_weights"]),
        learning_rate=cfg["optimizer"]["learning_rate"],
        batch_size=cfg["optimizer"]["batch_size"],
        epochs=cfg["optimizer"]["epochs"],
        seed=seed,
        negatives=cfg["negatives"],
        n_groups=cfg["n_groups"],
        svm_epochs=cfg["svm_epochs"],
        gt_c_reg=cfg["gt_c_reg"],
        hidden=tuple(cfg["hidden"]),
        perf_positives=cfg["perf_positives"],
        kernel_m=cfg["kernel_m"],
    )


def _photo_pool(manifest, categories):
    rows, labels = [], []
    for cat in categories:
        vec = manifest.vectors(cat, "photo")
        rows.append(vec)
        labels += [cat] * vec.shape[0]
    return np.vstack(rows), labels


def _eval_binary(cfg, run, net, manifest, quality, stream):
    test = sorted(run.split.test_categories)
    train = sorted(run.split.train_categories)
    pool, pool_cats = _photo_pool(manifest, test)
    dims_match = manifest.dims["sketch"] == manifest.dims["photo"]
    raw_model_kind = run.modality.kind == "model_to_model_binary"
    out = []
    for ci, cat in enumerate(test):
        restricted = manifest.restrict(train + [cat])
        qr = _quality_range(manifest, cat, quality)
        labels = np.array([p == cat for p in pool_cats], dtype=bool)
        aps, nn_aps, raw_aps = [], [], []
        for m in range(cfg["models_per_category"]):
            child = stream.child(ci).child(m)
            svm_cfg = SvmConfig(
                c_reg=1.0, epochs=run.svm_epochs, seed=int(child.index(1 << 62))
            )
            x = build_input(
                run.modality, cat, restricted, stream=child, negatives=run.negatives,
                svm_config=svm_cfg, quality_range=qr,
            )
            model = synthesize_classifier(net, x)
            aps.append(average_precision(RankedResult(scores=_binary_scores(model, pool), labels=labels)))
            if raw_model_kind and dims_match:
                raw_scores = augment(pool) @ x
                raw_aps.append(average_precision(RankedResult(scores=raw_scores, labels=labels)))
            if dims_match:
                sketches, _ = sample_few_shot(
                    restricted, cat, "sketch", run.modality.k, 0, child.child(1), quality_range=qr
                )
                nn = nn_scores(pool, sketches)
                nn_aps.append(average_precision(RankedResult(scores=nn, labels=labels)))
        out.append((cat, "ap", float(np.mean(aps))))
        if nn_aps:
            out.append((cat, "nn_ap", float(np.mean(nn_aps))))
        if raw_aps:
            out.append((cat, "raw_svm_ap", float(np.mean(raw_aps))))
    return out


def _eval_multiclass(cfg, run, net, manifest, stream):
    test = sorted(run.split.test_categories)
    train = sorted(run.split.train_categories)
    c = run.modality.c
    if len(test) < c:
        raise CapacityError("%d test categories cannot form %d-way groups" % (len(test), c))
    out = []
    for g in range(cfg["models_per_category"]):
        child = stream.child(g)
        idx = child.subset(len(test), c)
        group = tuple(test[i] for i in idx)
        restricted = manifest.restrict(train + list(group))
        svm_cfg = SvmConfig(c_reg=1.0, epochs=run.svm_epochs, seed=int(child.index(1 << 62)))
        x = build_input(
            run.modality, group, restricted, stream=child, negatives=run.negatives,
            svm_config=svm_cfg, pad_row=run.pad_row,
        )
        model = synthesize_classifier(net, x, class_labels=list(group))
        photos, photo_cats = _photo_pool(manifest, list(group))
        acc = multiclass_accuracy(model, photos, photo_cats)
        labeled = {}
        for j, cat in enumerate(group):
            sketches, _ = sample_few_shot(
                restricted, cat, "sketch", run.modality.k, 0, child.child(1).child(j)
            )
            labeled[cat] = sketches
        preds = nn_predict(photos, labeled)
        nn_acc = float(np.mean([p == t for p, t in zip(preds, photo_cats)]))
        name = "|".join(group)
        out.append((name, "accuracy", float(acc)))
        out.append((name, "nn_accuracy", nn_acc))
    return out


def _eval_coarse(cfg, run, net, manifest, grouping, quality, stream):
    test = sorted(run.split.test_categories)
    train = sorted(run.split.train_categories)
    manifest_train = manifest.restrict(train)
    # same derivation as inside train_regressor, so the fusion inputs match
    coarse_photo = train_coarse_models(
        manifest_train, grouping, train, run.negatives, run.gt_c_reg, run.svm_epochs,
        RandomStream(run.seed).child(1),
    )
    coarse_sketch = train_coarse_models(
        manifest_train, grouping, train, run.negatives, run.gt_c_reg, run.svm_epochs,
        stream.child(0), domain="sketch",
    )
    group_names = sorted(coarse_photo)
    pool, pool_cats = _photo_pool(manifest, test)
    dims_match = manifest.dims["sketch"] == manifest.dims["photo"]
    out = []
    for ci, cat in enumerate(test):
        restricted = manifest.restrict(train + [cat])
        qr = _quality_range(manifest, cat, quality)
        labels = np.array([p == cat for p in pool_cats], dtype=bool)
        known_aps, unknown_aps, nn_aps = [], [], []
        true_group = grouping.group_of(cat)
        for m in range(cfg["models_per_category"]):
            child = stream.child(1).child(ci).child(m)
            fused = _fused_feature(restricted, cat, run.modality.k, child, qr)
            known_x = np.concatenate([coarse_photo[true_group].weights, fused])
            known = synthesize_classifier(net, known_x)
            known_aps.append(
                average_precision(RankedResult(scores=_binary_scores(known, pool), labels=labels))
            )
            coarse_scores = [float(augment(fused) @ coarse_sketch[g].weights) for g in group_names]
            predicted = group_names[int(np.argmax(coarse_scores))]
            unknown_x = np.concatenate([coarse_photo[predicted].weights, fused])
            unknown = synthesize_classifier(net, unknown_x)
            unknown_aps.append(
                average_precision(RankedResult(scores=_binary_scores(unknown, pool), labels=labels))
            )
            if dims_match:
                sketches, _ = sample_few_shot(
                    restricted, cat, "sketch", run.modality.k, 0, child.child(1), quality_range=qr
                )
                nn = nn_scores(pool, sketches)
                nn_aps.append(average_precision(RankedResult(scores=nn, labels=labels)))
        out.append((cat, "ap_known", float(np.mean(known_aps))))
        out.append((cat, "ap_unknown", float(np.mean(unknown_aps))))
        if nn_aps:
            out.append((cat, "nn_ap", float(np.mean(nn_aps))))
    return out


def _run_repetition(cfg, manifest, grouping, rep):
    kind = cfg["modality"]["kind"]
    sweep = cfg["sweep"]
    points = [(None, None)] if sweep is None else [(sweep["axis"], v) for v in sweep["values"]]
    rep_stream = RandomStream(cfg["seed"]).child(rep)
    base_split = _resolve_split(cfg, manifest, grouping, rep_stream.child(0))
    base_train = sorted(base_split.train_categories)
    # one shuffle per repetition so train-category sweeps nest
    train_order = rep_stream.child(1).permutation(len(base_train))
    rows = []
    for pi, (axis, value) in enumerate(points):
        point_id = cfg["experiment_id"] if axis is None else "%s/%s=%s" % (cfg["experiment_id"], axis, value)
        k = cfg["modality"]["k"]
        quality = None
        train_cats = set(base_train)
        if axis == "k":
            k = value
        elif axis == "quality":
            quality = value
        elif axis == "train_categories":
            if value > len(base_train):
                raise CapacityError(
                    "sweep asks for %d train categories, split has %d" % (value, len(base_train))
                )
            train_cats = {base_train[i] for i in train_order[:value]}
        split = CategorySplit(train_categories=train_cats, test_categories=base_split.test_categories)
        modality = InputModality(kind=kind, k=k, c=cfg["modality"]["c"])
        run_seed = int(rep_stream.child(2).child(pi).index(1 << 62))
        run = _training_run(cfg, modality, split, run_seed)
        net, _ = train_regressor(run, manifest, grouping=grouping)
        eval_stream = rep_stream.child(3).child(pi)
        if kind == "coarse_fusion":
            point = _eval_coarse(cfg, run, net, manifest, grouping, quality, eval_stream)
        elif modality.is_multiclass:
            point = _eval_multiclass(cfg, run, net, manifest, eval_stream)
        else:
            point = _eval_binary(cfg, run, net, manifest, quality, eval_stream)
        for category, metric, val in point:
            rows.append(
                {
                    "experiment_id": point_id,
                    "category": category,
                    "repetition": rep,
                    "metric_name": metric,
                    "value": val,
                }
            )
    return rows


def run_experiment(config, out_dir=None, jobs=1):
    """Execute a validated config; returns (rows, summary_rows).

    Repetitions are independent, so jobs > 1 runs them in a process pool;
    the result is identical either way.  When out_dir is given, also writes
    results.csv and summary.csv there.
    """
    cfg = validate_config(config)
    manifest = load_manifest(cfg["manifest"])
    grouping = load_coarse_grouping(cfg["grouping"]) if cfg["grouping"] else None
    reps = list(range(cfg["repetitions"]))
    if jobs > 1 and len(reps) > 1:
        import concurrent.futures
        import itertools

        with concurrent.futures.ProcessPoolExecutor(max_workers=min(jobs, len(reps))) as pool:
            chunks = list(
                pool.map(
                    _run_repetition,
                    itertools.repeat(cfg), itertools.repeat(manifest), itertools.repeat(grouping), reps,
                )
            )
    else:
        chunks = [_run_repetition(cfg, manifest, grouping, rep) for rep in reps]
    rows = [r for chunk in chunks for r in chunk]
    summary = summarize(rows)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_results_csv(rows, os.path.join(out_dir, "results.csv"))
        write_summary_csv(summary, os.path.join(out_dir, "summary.csv"))
    return rows, summary


def summarize(rows):
    """Arithmetic mean per (experiment_id, metric_name) over all rows."""
    acc = {}
    for r in rows:
        acc.setdefault((r["experiment_id"], r["metric_name"]), []).append(r["value"])
    return [
        {"experiment_id": eid, "metric_name": metric, "mean": float(np.mean(vals))}
        for (eid, metric), vals in sorted(acc.items())
    ]


def write_results_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["experiment_id", "category", "repetition", "metric_name", "value"])
        for r in rows:
            w.writerow(
                [r["experiment_id"], r["category"], r["repetition"], r["metric_name"], repr(float(r["value"]))]
            )


def write_summary_csv(summary, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["experiment_id", "metric_name", "mean"])
        for r in summary:
            w.writerow([r["experiment_id"], r["metric_name"], repr(float(r["mean"]))])
