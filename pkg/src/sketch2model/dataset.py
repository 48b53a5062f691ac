"""Category splits, few-shot sampling, feature fusion and the synthetic world.

The synthetic generator builds a two-domain dataset with a known affine
sketch/photo relationship: photo clusters live around per-category prototypes
and sketch clusters around an affine image of those prototypes.  Because the
cross-domain relation is affine by construction, an affine regressor is the
(approximate) ideal map, which makes regression-vs-transfer comparisons on
this world verifiable rather than hopeful.
"""

import importlib.resources
import json
from dataclasses import dataclass, field

import numpy as np

from sketch2model.core import RandomStream
from sketch2model.manifest import FeatureRecord, Manifest


class CapacityError(ValueError):
    """Raised when a sampling request exceeds the available records."""


@dataclass
class CategorySplit:
    """Disjoint train/test category sets."""

    train_categories: frozenset
    test_categories: frozenset

    def __post_init__(self):
        self.train_categories = frozenset(self.train_categories)
        self.test_categories = frozenset(self.test_categories)
        if not self.train_categories or not self.test_categories:
            raise ValueError("both split sides must be non-empty")
        overlap = self.train_categories & self.test_categories
        if overlap:
            raise ValueError("train/test categories overlap: %s" % sorted(overlap))


def split_categories(categories, n_test, stream):
    """Hold out n_test categories at random; the rest become the train side."""
    cats = sorted(categories)
    if not 0 < n_test < len(cats):
        raise ValueError("n_test must be in (0, %d), got %d" % (len(cats), n_test))
    order = stream.permutation(len(cats))
    test = {cats[i] for i in order[:n_test]}
    return CategorySplit(train_categories=set(cats) - test, test_categories=test)


@dataclass
class CoarseGrouping:
    """Map coarse-category id -> list of fine-grained category ids."""

    groups: dict

    def __post_init__(self):
        seen = set()
        for coarse, fines in self.groups.items():
            if len(fines) < 2:
                raise ValueError("coarse group %r needs at least 2 members" % coarse)
            for f in fines:
                if f in seen:
                    raise ValueError("fine category %r appears in more than one group" % f)
                seen.add(f)

    def fine_categories(self):
        return sorted(c for fines in self.groups.values() for c in fines)

    def group_of(self, fine):
        for coarse, fines in self.groups.items():
            if fine in fines:
                return coarse
        raise KeyError(fine)


def load_coarse_grouping(path=None):
    """Load a coarse grouping JSON; defaults to the packaged Sketchy grouping."""
    if path is None:
        text = importlib.resources.files("sketch2model").joinpath("data/coarse_groups.json").read_text("utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return CoarseGrouping(groups=json.loads(text))


def average_features(vectors):
    """Element-wise mean of equally sized vectors; the k-sketch fusion."""
    if len(vectors) == 0:
        raise ValueError("average_features needs at least one vector")
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("vectors must share one dimensionality")
    return arr.mean(axis=0)


def sample_few_shot(manifest, category, domain, k, j, stream, quality_range=None):
    """Draw k positives from `category` plus j negatives from all others.

    Negatives are uniform without replacement over the union of every other
    category's records in the same domain.  Selections are deterministic given
    the stream state.  `quality_range`, when set to (lo, hi), restricts the
    positive pool to records whose quality lies in [lo, hi].
    """
    pos_records = manifest.select(category=category, domain=domain)
    if quality_range is not None:
        lo, hi = quality_range
        pos_records = [r for r in pos_records if r.quality is not None and lo <= r.quality <= hi]
    neg_records = [r for r in manifest.records if r.domain == domain and r.category != category]
    if k > len(pos_records):
        raise CapacityError(
            "category %r has %d %s records, cannot draw %d positives" % (category, len(pos_records), domain, k)
        )
    if j > len(neg_records):
        raise CapacityError(
            "other categories hold %d %s records, cannot draw %d negatives" % (len(neg_records), domain, j)
        )
    pos_idx = stream.subset(len(pos_records), k)
    neg_idx = stream.subset(len(neg_records), j)
    positives = np.stack([pos_records[i].vector for i in pos_idx]) if k else np.empty((0, manifest.dims[domain]))
    negatives = np.stack([neg_records[i].vector for i in neg_idx]) if j else np.empty((0, manifest.dims[domain]))
    return positives, negatives


@dataclass
class SyntheticConfig:
    """Parameters of the synthetic two-domain world.

    domain_map is the affine pair (A, b) applied to photo prototypes to place
    the sketch clusters.  embedding_dim > 0 additionally emits one embedding
    record per category, itself an affine image of the prototype.
    """

    d: int
    n_categories: int
    samples_per_category_per_domain: int
    domain_map: tuple
    cluster_std: float
    noise_std: float
    seed: int
    embedding_dim: int = 0
    with_quality: bool = True

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.cluster_std <= 0 or self.noise_std <= 0:
            raise ValueError("std values must be > 0")
        a, b = self.domain_map
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != (self.d, self.d) or b.shape != (self.d,):
            raise ValueError("domain_map shapes must be (d, d) and (d,)")
        self.domain_map = (a, b)


def random_rotation(d, stream):
    """A deterministic random rotation matrix (QR of a Gaussian, det +1)."""
    g = stream.gaussian(d * d).reshape(d, d)
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # fix the QR sign ambiguity
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _category_names(n, prefix="cat"):
    return ["%s%03d" % (prefix, i) for i in range(n)]


def generate_synthetic(config, category_names=None, prototypes=None):
    """Generate the synthetic manifest described by `config`.

    Per category c: photo prototype mu_c ~ N(0, cluster_std^2 I); photos are
    mu_c plus isotropic noise; sketches are A mu_c + b plus isotropic noise.
    Sketch records carry quality = -||sketch - (A mu_c + b)|| when enabled.
    Deterministic in config.seed.
    """
    a_map, b_map = config.domain_map
    names = category_names if category_names is not None else _category_names(config.n_categories)
    if len(names) != config.n_categories:
        raise ValueError("category_names length must equal n_categories")
    root = RandomStream(config.seed)
    proto_stream = root.child(0)
    if prototypes is None:
        prototypes = [config.cluster_std * proto_stream.gaussian(config.d) for _ in names]
    n = config.samples_per_category_per_domain

    dims = {"photo": config.d, "sketch": config.d}
    if config.embedding_dim > 0:
        dims["embedding"] = config.embedding_dim
    records = []
    for ci, cat in enumerate(names):
        noise = root.child(1).child(ci)
        for s in range(n):
            v = prototypes[ci] + config.noise_std * noise.gaussian(config.d)
            records.append(FeatureRecord(cat, "%s_photo_%04d" % (cat, s), "photo", v))
    for ci, cat in enumerate(names):
        noise = root.child(2).child(ci)
        center = a_map @ prototypes[ci] + b_map
        for s in range(n):
            v = center + config.noise_std * noise.gaussian(config.d)
            quality = -float(np.linalg.norm(v - center)) if config.with_quality else None
            records.append(FeatureRecord(cat, "%s_sketch_%04d" % (cat, s), "sketch", v, quality=quality))
    if config.embedding_dim > 0:
        emb_stream = root.child(3)
        e_map = emb_stream.gaussian(config.embedding_dim * config.d).reshape(config.embedding_dim, config.d)
        e_map /= np.sqrt(config.d)
        e_shift = emb_stream.gaussian(config.embedding_dim)
        for ci, cat in enumerate(names):
            records.append(FeatureRecord(cat, "%s_wv" % cat, "embedding", e_map @ prototypes[ci] + e_shift))
    return Manifest(dims=dims, records=records)


def generate_synthetic_coarse(config, n_groups, fines_per_group, offset_std):
    """Synthetic world with coarse structure: shared super-prototype plus fine offsets.

    Returns (manifest, grouping).  config.n_categories must equal
    n_groups * fines_per_group; prototypes are nu_g + offset, with
    nu_g ~ N(0, cluster_std^2 I) and offset ~ N(0, offset_std^2 I).
    """
    if config.n_categories != n_groups * fines_per_group:
        raise ValueError("n_categories must equal n_groups * fines_per_group")
    if offset_std <= 0:
        raise ValueError("offset_std must be > 0")
    root = RandomStream(config.seed)
    super_stream = root.child(4)
    names = []
    prototypes = []
    groups = {}
    for g in range(n_groups):
        nu = config.cluster_std * super_stream.gaussian(config.d)
        members = []
        for f in range(fines_per_group):
            cat = "g%02df%02d" % (g, f)
            names.append(cat)
            members.append(cat)
            prototypes.append(nu + offset_std * super_stream.gaussian(config.d))
        groups["group%02d" % g] = members
    manifest = generate_synthetic(config, category_names=names, prototypes=prototypes)
    return manifest, CoarseGrouping(groups=groups)
