"""Two richer input regimes: c-way weight matrices and coarse-model fusion.

First a convolutional regressor maps stacked per-class sketch features to a
full c-way photo classifier in one shot.  Then a fusion regressor combines
an existing coarse-category photo classifier with a fine-grained sketch to
synthesize a fine-grained photo classifier, with the coarse label either
known or predicted from the sketch.
Run:  python3 demos/03_multiclass_and_coarse.py   (about two minutes)
"""

import numpy as np

from sketch2model.core import RandomStream
from sketch2model.dataset import (
    CategorySplit,
    SyntheticConfig,
    generate_synthetic_coarse,
    random_rotation,
)
from sketch2model.eval import RankedResult, average_precision, multiclass_accuracy
from sketch2model.losses import LossWeights
from sketch2model.pipelines import (
    InputModality,
    TrainingRun,
    build_input,
    synthesize_classifier,
    train_coarse_models,
    train_regressor,
)
from sketch2model.svm import augment

d = 8
stream = RandomStream(31)
config = SyntheticConfig(
    d=d,
    n_categories=16,
    samples_per_category_per_domain=30,
    domain_map=(random_rotation(d, stream), 0.5 * stream.gaussian(d)),
    cluster_std=1.0,
    noise_std=0.2,
    seed=41,
)
world, grouping = generate_synthetic_coarse(config, n_groups=4, fines_per_group=4, offset_std=0.4)
cats = world.categories("photo")
# one fine per group held out, so every coarse group keeps train members
test = {sorted(grouping.groups[g])[0] for g in grouping.groups}
split = CategorySplit(train_categories=set(cats) - test, test_categories=test)
test_cats = sorted(test)
print("coarse world: 4 groups x 4 fines, held out %s" % test_cats)

# --- multiclass: one conv regressor, 4-way groups of training categories
mc_run = TrainingRun(
    modality=InputModality("feature_to_model_multiclass", k=5, c=4),
    split=split,
    ensembles=8,
    n_groups=15,
    loss_weights=LossWeights(alpha=0.01, beta=1.0),
    learning_rate=1e-3,
    batch_size=16,
    epochs=20,
    seed=13,
    negatives=80,
    svm_epochs=10,
    gt_c_reg=1.0,
    perf_positives=8,
)
mc_net, _ = train_regressor(mc_run, world)
group = tuple(test_cats)
photos = np.vstack([world.vectors(c, "photo") for c in group])
labels = [c for c in group for _ in range(30)]
accs = []
draw = RandomStream(59)
for m in range(20):
    x = build_input(mc_run.modality, group, world, stream=draw.child(m))
    model = synthesize_classifier(mc_net, x, class_labels=list(group))
    accs.append(multiclass_accuracy(model, photos, labels))
print("4-way accuracy on held-out fines, synthesized from sketches: %.3f (chance 0.25)"
      % float(np.mean(accs)))

# --- coarse fusion: coarse photo model + fine sketch -> fine photo model
cf_run = TrainingRun(
    modality=InputModality("coarse_fusion", k=1),
    split=split,
    ensembles=40,
    loss_weights=LossWeights(alpha=0.01, beta=1.0),
    learning_rate=1e-4,
    batch_size=64,
    epochs=300,
    seed=23,
    negatives=80,
    svm_epochs=20,
    gt_c_reg=1.0,
    hidden=(48, 48, 48),
    perf_positives=8,
)
cf_net, _ = train_regressor(cf_run, world, grouping=grouping)

train = sorted(split.train_categories)
coarse_photo = train_coarse_models(
    world.restrict(train), grouping, train, cf_run.negatives,
    cf_run.gt_c_reg, cf_run.svm_epochs, RandomStream(cf_run.seed).child(1),
)
pool_aug = augment(photos)
feat = InputModality("feature_to_model_binary", k=1)
print("\nheld-out cat    fused AP (coarse known)")
for ci, cat in enumerate(test_cats):
    restricted = world.restrict(train + [cat])
    lab = np.array([p == cat for p in labels])
    aps = []
    for m in range(20):
        child = draw.child(100 + ci).child(m)
        fused = build_input(feat, cat, restricted, stream=child)
        x = np.concatenate([coarse_photo[grouping.group_of(cat)].weights, fused])
        w = synthesize_classifier(cf_net, x).weights
        aps.append(average_precision(RankedResult(pool_aug @ w, lab)))
    print("%-14s  %6.3f" % (cat, float(np.mean(aps))))

print(
    "\nKnowing the coarse region and seeing one sketch is enough to rank the"
    "\nright fine category's photos first, without any fine-grained photos."
)
