"""The experiment harness: config in, CSV tables out, repeatable by seed.

Everything demo 02 did by hand is one validated JSON config here, plus a
sweep axis.  The same config on disk drives the `s2m experiment` CLI.
Run:  python3 demos/04_experiment_harness.py   (about a minute)
"""

import os
import tempfile

import numpy as np

from sketch2model.core import RandomStream
from sketch2model.dataset import SyntheticConfig, generate_synthetic, random_rotation
from sketch2model.experiments import run_experiment, validate_config
from sketch2model.manifest import save_manifest

d = 16
stream = RandomStream(3)
config = SyntheticConfig(
    d=d,
    n_categories=20,
    samples_per_category_per_domain=30,
    domain_map=(random_rotation(d, stream), 0.5 * stream.gaussian(d)),
    cluster_std=1.0,
    noise_std=0.25,
    seed=21,
)
# same ring-structured world as demo 02, saved to disk like a real dataset
ps = RandomStream(3).child(50)
basis = np.linalg.qr(ps.gaussian(d * 2).reshape(d, 2))[0]
phase = 2.0 * np.pi * ps.uniform(1)[0]
protos = []
for i in range(20):
    theta = phase + 2.0 * np.pi * i / 20.0
    protos.append(basis @ (np.sqrt(2.0) * np.array([np.cos(theta), np.sin(theta)])))
world_dir = os.path.join(tempfile.mkdtemp(prefix="s2m_demo_"), "world")
save_manifest(generate_synthetic(config, prototypes=protos), world_dir)

cfg = validate_config(
    {
        "experiment_id": "k_sweep",
        "manifest": world_dir,
        "modality": {"kind": "feature_to_model_binary", "k": 1},
        "split": {"n_test": 3},
        "repetitions": 2,
        "seed": 5,
        "ensembles": 30,
        "models_per_category": 20,
        "negatives": 80,
        "svm_epochs": 20,
        "optimizer": {"learning_rate": 1e-4, "epochs": 200, "batch_size": 64},
        "hidden": [48, 48, 48],
        "perf_positives": 8,
        "sweep": {"axis": "k", "values": [1, 5]},
    }
)
out_dir = os.path.join(os.path.dirname(world_dir), "results")
rows, summary = run_experiment(cfg, out_dir=out_dir)

print("wrote %s and %s\n" % (os.path.join(out_dir, "results.csv"),
                             os.path.join(out_dir, "summary.csv")))
print("experiment_id            metric       mean over categories x repetitions")
for row in summary:
    if row["metric_name"] in ("ap", "nn_ap"):
        print("%-24s %-12s %.3f" % (row["experiment_id"], row["metric_name"], row["mean"]))

print(
    "\nEach row aggregates the per-category, per-repetition rows in"
    "\nresults.csv; re-running with the same seed reproduces both files"
    "\nbyte for byte."
)
