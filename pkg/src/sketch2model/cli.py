"""Command line entry points.

Every subcommand takes a single --seed and derives all randomness from it
through named stream children, so re-running any command with the same
arguments reproduces its outputs byte for byte.  Each command writes a
run.json into its output directory holding the fully resolved parameters.

Exit codes: 0 on success; 1 on runtime failure, with one machine-parseable
line `error: <Type>: <message>` on stderr; 2 on usage or config-schema
errors, with every schema violation listed.

Set S2M_LOG to error, info, or debug to control stderr logging.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from sketch2model.core import RandomStream, ShapeError
from sketch2model.dataset import (
    CapacityError,
    CategorySplit,
    SyntheticConfig,
    generate_synthetic,
    generate_synthetic_coarse,
    load_coarse_grouping,
    random_rotation,
    sample_few_shot,
    split_categories,
)
from sketch2model.eval import MetricError, RankedResult, average_precision, multiclass_accuracy
from sketch2model.experiments import (
    ExperimentConfigError,
    _quality_range,
    load_experiment_config,
    run_experiment,
    summarize,
    write_results_csv,
    write_summary_csv,
)
from sketch2model.losses import LossWeights
from sketch2model.manifest import ManifestError, load_manifest, save_manifest
from sketch2model.pipelines import (
    InputModality,
    TrainingRun,
    build_input,
    synthesize_classifier,
    train_regressor,
)
from sketch2model.regnet import load_checkpoint, save_checkpoint
from sketch2model.svm import (
    MultiClassLinearModel,
    SvmConfig,
    augment,
    load_model,
    save_model,
    train_binary_svm,
    train_multiclass_svm,
)

LOG = logging.getLogger("s2m")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class CliUsageError(Exception):
    """Bad flag combination; reported like an argparse error, exit code 2."""


def resolve_log_level(value):
    if value is None:
        return logging.ERROR
    return _LOG_LEVELS.get(value.strip().lower(), logging.ERROR)


def _setup_logging():
    logging.basicConfig(
        level=resolve_log_level(os.environ.get("S2M_LOG")),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _write_run_json(out_dir, command, params):
    os.makedirs(out_dir, exist_ok=True)
    payload = {"command": command, "parameters": params}
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _split_csv(text):
    return [t for t in (s.strip() for s in text.split(",")) if t]


def _parse_hidden(text):
    parts = _split_csv(text)
    if len(parts) != 3 or not all(p.isdigit() and int(p) >= 1 for p in parts):
        raise CliUsageError("--hidden expects three positive integers, e.g. 512,512,512")
    return tuple(int(p) for p in parts)


def _resolve_cli_split(manifest, test_categories, n_test, stream):
    cats = manifest.categories("photo")
    if test_categories:
        missing = sorted(set(test_categories) - set(cats))
        if missing:
            raise ValueError("test categories not in manifest: %s" % missing)
        return CategorySplit(
            train_categories=set(cats) - set(test_categories),
            test_categories=set(test_categories),
        )
    return split_categories(cats, n_test, stream)


def cmd_gen_synth(args):
    if (args.coarse_groups > 0) != (args.fines_per_group > 0):
        raise CliUsageError("--coarse-groups and --fines-per-group go together")
    stream = RandomStream(args.seed).child(10)  # world generation owns children 0-4
    d = args.d
    if args.map == "identity":
        a, b = np.eye(d), np.zeros(d)
    elif args.map == "rotation":
        a, b = random_rotation(d, stream), np.zeros(d)
    else:
        a = random_rotation(d, stream)
        b = args.offset_scale * stream.gaussian(d)
    config = SyntheticConfig(
        d=d,
        n_categories=args.categories,
        samples_per_category_per_domain=args.samples,
        domain_map=(a, b),
        cluster_std=args.cluster_std,
        noise_std=args.noise,
        seed=args.seed,
        embedding_dim=args.embedding_dim,
        with_quality=not args.no_quality,
    )
    if args.coarse_groups > 0:
        manifest, grouping = generate_synthetic_coarse(
            config, args.coarse_groups, args.fines_per_group, args.offset_std
        )
    else:
        manifest, grouping = generate_synthetic(config), None
    save_manifest(manifest, args.out)
    if grouping is not None:
        with open(os.path.join(args.out, "grouping.json"), "w", encoding="utf-8") as fh:
            json.dump(grouping.groups, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _write_run_json(
        args.out,
        "gen-synth",
        {
            "d": args.d, "categories": args.categories, "samples": args.samples,
            "noise": args.noise, "cluster_std": args.cluster_std, "map": args.map,
            "offset_scale": args.offset_scale, "embedding_dim": args.embedding_dim,
            "quality": not args.no_quality, "coarse_groups": args.coarse_groups,
            "fines_per_group": args.fines_per_group, "offset_std": args.offset_std,
            "seed": args.seed, "out": args.out,
        },
    )
    LOG.info("wrote %d records to %s", len(manifest.records), args.out)
    return 0


def cmd_train_svm(args):
    manifest = load_manifest(args.manifest)
    stream = RandomStream(args.seed).child(0)  # child 0 samples; the solver reuses --seed
    config = SvmConfig(c_reg=args.c_reg, epochs=args.svm_epochs, seed=args.seed)
    if args.mode == "binary":
        if not args.category:
            raise CliUsageError("binary mode needs --category")
        if args.k > 0:
            pos, neg = sample_few_shot(
                manifest, args.category, args.domain, args.k, args.negatives, stream
            )
        else:
            pos = manifest.vectors(args.category, args.domain)
            if pos.shape[0] == 0:
                raise CapacityError(
                    "category %r has no %s records" % (args.category, args.domain)
                )
            _, neg = sample_few_shot(manifest, args.category, args.domain, 0, args.negatives, stream)
        model = train_binary_svm(pos, neg, config)
    else:
        cats = _split_csv(args.categories or "")
        if len(cats) < 2:
            raise CliUsageError("multiclass mode needs --categories with at least two names")
        per_class = {}
        for cat in cats:
            if args.k > 0:
                rows, _ = sample_few_shot(manifest, cat, args.domain, args.k, 0, stream)
            else:
                rows = manifest.vectors(cat, args.domain)
            if rows.shape[0] == 0:
                raise CapacityError("category %r has no %s records" % (cat, args.domain))
            per_class[cat] = rows
        model = train_multiclass_svm(per_class, config)
    os.makedirs(args.out, exist_ok=True)
    save_model(model, os.path.join(args.out, "model"))
    _write_run_json(
        args.out,
        "train-svm",
        {
            "manifest": args.manifest, "mode": args.mode, "category": args.category,
            "categories": args.categories, "domain": args.domain, "k": args.k,
            "negatives": args.negatives, "c_reg": args.c_reg,
            "svm_epochs": args.svm_epochs, "seed": args.seed, "out": args.out,
        },
    )
    LOG.info("wrote model to %s", args.out)
    return 0


def _modality_from_args(args):
    return InputModality(kind=args.kind, k=args.k, c=args.c)


def cmd_train_regressor(args):
    manifest = load_manifest(args.manifest)
    grouping = load_coarse_grouping(args.grouping) if args.grouping else None
    modality = _modality_from_args(args)
    if bool(args.test_categories) == bool(args.n_test):
        raise CliUsageError("give exactly one of --test-categories or --n-test")
    split = _resolve_cli_split(
        manifest,
        _split_csv(args.test_categories or ""),
        args.n_test,
        RandomStream(args.seed).child(5),  # training itself owns children 0-4
    )
    batch = args.batch_multi if modality.is_multiclass else args.batch_binary
    run = TrainingRun(
        modality=modality,
        split=split,
        ensembles=args.ensembles,
        loss_weights=LossWeights(alpha=args.alpha, beta=args.beta),
        learning_rate=args.lr,
        batch_size=batch,
        epochs=args.epochs,
        seed=args.seed,
        negatives=args.negatives,
        n_groups=args.n_groups,
        svm_epochs=args.svm_epochs,
        gt_c_reg=args.gt_c_reg,
        hidden=_parse_hidden(args.hidden),
        perf_positives=args.perf_positives,
        kernel_m=args.kernel_m,
        squared=args.squared,
    )
    net, log = train_regressor(run, manifest, grouping=grouping)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(net, os.path.join(args.out, "regressor"))
    with open(os.path.join(args.out, "log.json"), "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_json(
        args.out,
        "train-regressor",
        {
            "manifest": args.manifest, "kind": args.kind, "k": args.k, "c": args.c,
            "test_categories": args.test_categories, "n_test": args.n_test,
            "ensembles": args.ensembles, "alpha": args.alpha, "beta": args.beta,
            "lr": args.lr, "batch_binary": args.batch_binary, "batch_multi": args.batch_multi,
            "epochs": args.epochs, "negatives": args.negatives, "n_groups": args.n_groups,
            "svm_epochs": args.svm_epochs, "gt_c_reg": args.gt_c_reg, "hidden": args.hidden,
            "perf_positives": args.perf_positives, "kernel_m": args.kernel_m,
            "squared": args.squared, "grouping": args.grouping, "seed": args.seed,
            "out": args.out,
        },
    )
    LOG.info("final objective %.6f after %d epochs", log[-1]["objective"], len(log))
    return 0


def _checkpoint_prefix(path):
    if os.path.isdir(path):
        return os.path.join(path, "regressor")
    return path


def cmd_synthesize(args):
    net = load_checkpoint(_checkpoint_prefix(args.checkpoint))
    manifest = load_manifest(args.manifest)
    modality = _modality_from_args(args)
    stream = RandomStream(args.seed)
    os.makedirs(args.out, exist_ok=True)
    index = []
    quality = args.quality
    if modality.is_multiclass:
        group = _split_csv(args.group or "")
        if len(group) != modality.c:
            raise CliUsageError("--group must list exactly c category names")
        for mi in range(args.models_per_category):
            child = stream.child(0).child(mi)
            svm_cfg = SvmConfig(c_reg=args.c_reg, epochs=args.svm_epochs, seed=int(child.index(1 << 62)))
            x = build_input(
                modality, tuple(group), manifest, stream=child,
                negatives=args.negatives, svm_config=svm_cfg,
            )
            model = synthesize_classifier(net, x, class_labels=group)
            name = "group_%03d" % mi
            save_model(model, os.path.join(args.out, name))
            index.append({"category": "|".join(group), "file": name, "index": mi})
    else:
        cats = _split_csv(args.categories or "")
        if not cats:
            raise CliUsageError("binary synthesis needs --categories")
        for ci, cat in enumerate(sorted(cats)):
            qr = _quality_range(manifest, cat, quality)
            for mi in range(args.models_per_category):
                child = stream.child(1).child(ci).child(mi)
                svm_cfg = SvmConfig(c_reg=args.c_reg, epochs=args.svm_epochs, seed=int(child.index(1 << 62)))
                x = build_input(
                    modality, cat, manifest, stream=child, negatives=args.negatives,
                    svm_config=svm_cfg, quality_range=qr,
                )
                model = synthesize_classifier(net, x)
                name = "%s_%03d" % (cat, mi)
                save_model(model, os.path.join(args.out, name))
                index.append({"category": cat, "file": name, "index": mi})
    with open(os.path.join(args.out, "index.json"), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_run_json(
        args.out,
        "synthesize",
        {
            "checkpoint": args.checkpoint, "manifest": args.manifest, "kind": args.kind,
            "k": args.k, "c": args.c, "categories": args.categories, "group": args.group,
            "models_per_category": args.models_per_category, "negatives": args.negatives,
            "c_reg": args.c_reg, "svm_epochs": args.svm_epochs, "quality": args.quality,
            "seed": args.seed, "out": args.out,
        },
    )
    LOG.info("synthesized %d models into %s", len(index), args.out)
    return 0


def cmd_evaluate(args):
    manifest = load_manifest(args.manifest)
    index_path = os.path.join(args.models, "index.json")
    with open(index_path, "r", encoding="utf-8") as fh:
        index = json.load(fh)
    if args.pool:
        pool_cats = _split_csv(args.pool)
    else:
        pool_cats = sorted({c for entry in index for c in entry["category"].split("|")})
    missing = sorted(set(pool_cats) - set(manifest.categories("photo")))
    if missing:
        raise ValueError("pool categories not in manifest: %s" % missing)
    per_cat = {c: manifest.vectors(c, "photo") for c in pool_cats}
    photos = np.vstack([per_cat[c] for c in pool_cats])
    photo_cats = [c for c in pool_cats for _ in range(per_cat[c].shape[0])]
    rows = []
    for entry in index:
        model = load_model(os.path.join(args.models, entry["file"]))
        if isinstance(model, MultiClassLinearModel):
            group = entry["category"].split("|")
            keep = [i for i, c in enumerate(photo_cats) if c in set(group)]
            value = multiclass_accuracy(model, photos[keep], [photo_cats[i] for i in keep])
            metric = "accuracy"
        else:
            labels = np.array([c == entry["category"] for c in photo_cats], dtype=bool)
            scores = augment(photos) @ model.weights
            value = average_precision(
                RankedResult(scores=scores, labels=labels), interpolated=args.interpolated
            )
            metric = "ap"
        rows.append(
            {
                "experiment_id": args.id,
                "category": entry["category"],
                "repetition": entry["index"],
                "metric_name": metric,
                "value": float(value),
            }
        )
    os.makedirs(args.out, exist_ok=True)
    write_results_csv(rows, os.path.join(args.out, "results.csv"))
    write_summary_csv(summarize(rows), os.path.join(args.out, "summary.csv"))
    _write_run_json(
        args.out,
        "evaluate",
        {
            "manifest": args.manifest, "models": args.models, "id": args.id,
            "pool": args.pool, "interpolated": args.interpolated, "out": args.out,
        },
    )
    LOG.info("evaluated %d models into %s", len(rows), args.out)
    return 0


def cmd_experiment(args):
    cfg = load_experiment_config(args.config)
    run_experiment(cfg, out_dir=args.out, jobs=args.jobs)
    _write_run_json(args.out, "experiment", {"config": cfg, "jobs": args.jobs, "out": args.out})
    LOG.info("experiment %s written to %s", cfg["experiment_id"], args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="s2m",
        description="Sketch-to-photo model regression toolkit. One --seed per command "
        "drives all randomness through named stream children; identical invocations "
        "produce byte-identical outputs. Set S2M_LOG=error|info|debug for stderr logs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "gen-synth",
        help="generate a synthetic two-domain feature manifest",
        description="Seed splitting: stream child 10 draws the domain map; "
        "the world generator owns children 0-4.",
    )
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--categories", type=int, default=25)
    p.add_argument("--samples", type=int, default=15)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--cluster-std", type=float, default=1.0)
    p.add_argument("--map", choices=("identity", "rotation", "affine"), default="affine")
    p.add_argument("--offset-scale", type=float, default=0.5)
    p.add_argument("--embedding-dim", type=int, default=0)
    p.add_argument("--no-quality", action="store_true")
    p.add_argument("--coarse-groups", type=int, default=0)
    p.add_argument("--fines-per-group", type=int, default=0)
    p.add_argument("--offset-std", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser(
        "train-svm",
        help="train a linear SVM from manifest features",
        description="Seed splitting: child 0 draws samples; the solver shuffle reuses --seed.",
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("binary", "multiclass"), default="binary")
    p.add_argument("--category")
    p.add_argument("--categories", help="comma-separated class list for multiclass mode")
    p.add_argument("--domain", choices=("photo", "sketch"), default="photo")
    p.add_argument("--k", type=int, default=0, help="positives per class; 0 uses every record")
    p.add_argument("--negatives", type=int, default=600)
    p.add_argument("--c-reg", type=float, default=1.0)
    p.add_argument("--svm-epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_svm)

    p = sub.add_parser(
        "train-regressor",
        help="train a sketch-to-photo model regression network",
        description="Seed splitting: children 0-4 drive training; child 5 draws the split.",
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--c", type=int, default=0)
    p.add_argument("--test-categories")
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--ensembles", type=int, default=500)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=2e-5)
    p.add_argument("--batch-binary", type=int, default=64)
    p.add_argument("--batch-multi", type=int, default=16)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--negatives", type=int, default=600)
    p.add_argument("--n-groups", type=int, default=500)
    p.add_argument("--svm-epochs", type=int, default=50)
    p.add_argument("--gt-c-reg", type=float, default=1.0)
    p.add_argument("--hidden", default="512,512,512")
    p.add_argument("--perf-positives", type=int, default=8)
    p.add_argument("--kernel-m", type=int, default=3)
    p.add_argument("--squared", action="store_true")
    p.add_argument("--grouping")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_regressor)

    p = sub.add_parser(
        "synthesize",
        help="synthesize photo classifiers from sketch inputs",
        description="Seed splitting: child 0 drives multiclass groups, child 1 binary categories.",
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--c", type=int, default=0)
    p.add_argument("--categories", help="comma-separated categories for binary kinds")
    p.add_argument("--group", help="comma-separated class list for multiclass kinds")
    p.add_argument("--models-per-category", type=int, default=1)
    p.add_argument("--negatives", type=int, default=600)
    p.add_argument("--c-reg", type=float, default=1.0)
    p.add_argument("--svm-epochs", type=int, default=50)
    p.add_argument("--quality", choices=("bottom", "middle", "top"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="score synthesized models against photo pools")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", required=True, help="directory written by synthesize")
    p.add_argument("--id", default="eval")
    p.add_argument("--pool", help="comma-separated pool categories; defaults to the index's")
    p.add_argument("--interpolated", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a full experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for repetitions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliUsageError as e:
        print("usage error: %s" % e, file=sys.stderr)
        return 2
    except ExperimentConfigError as e:
        print(str(e), file=sys.stderr)
        return 2
    except (
        CapacityError,
        ManifestError,
        MetricError,
        ShapeError,
        OSError,
        ValueError,
        KeyError,
    ) as e:
        message = " ".join(str(e).split()) or type(e).__name__
        print("error: %s: %s" % (type(e).__name__, message), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
