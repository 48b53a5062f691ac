"""Feature-manifest I/O.

On disk a manifest is a directory holding two sibling files:

* ``manifest.json`` - UTF-8 JSON header::

      {"version": 1,
       "dims": {"photo": 32, "sketch": 32},
       "records": [{"category": ..., "sample_id": ..., "domain": ...,
                    "quality": ...,        # optional
                    "index": ...}, ...]}

* ``features.f32le`` - little-endian 32-bit floats.  Record ``r`` with domain
  dimension ``d = dims[r.domain]`` owns floats ``[r.index * d, (r.index+1) * d)``.

Vectors are widened to float64 on load.  The expected blob length is the
maximum record end offset, so truncation is always detected.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

DOMAINS = ("sketch", "photo", "embedding")

HEADER_NAME = "manifest.json"
BLOB_NAME = "features.f32le"


class ManifestError(ValueError):
    """Raised on malformed manifest headers or blobs."""


@dataclass
class FeatureRecord:
    """One feature vector tagged with category, sample id and domain."""

    category: str
    sample_id: str
    domain: str
    vector: np.ndarray
    quality: float | None = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ManifestError("unknown domain %r (expected one of %s)" % (self.domain, list(DOMAINS)))
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.quality is not None and not np.isfinite(self.quality):
            raise ManifestError("record %s/%s: quality is not finite" % (self.category, self.sample_id))


@dataclass
class Manifest:
    """An in-memory manifest: per-domain dims plus ordered feature records."""

    dims: dict
    records: list = field(default_factory=list)
    version: int = 1

    def __len__(self):
        return len(self.records)

    def categories(self, domain=None):
        """Sorted category ids, optionally restricted to one domain."""
        cats = {r.category for r in self.records if domain is None or r.domain == domain}
        return sorted(cats)

    def select(self, category=None, domain=None):
        """Records matching the given category and/or domain, manifest order."""
        out = []
        for r in self.records:
            if category is not None and r.category != category:
                continue
            if domain is not None and r.domain != domain:
                continue
            out.append(r)
        return out

    def restrict(self, categories):
        """A sub-manifest view containing only the given categories."""
        keep = set(categories)
        return Manifest(dims=dict(self.dims), records=[r for r in self.records if r.category in keep], version=self.version)

    def vectors(self, category, domain):
        """(n, d) array of the matching records' vectors, manifest order."""
        recs = self.select(category=category, domain=domain)
        if not recs:
            return np.empty((0, self.dims.get(domain, 0)), dtype=np.float64)
        return np.stack([r.vector for r in recs])


def save_manifest(manifest, out_dir):
    """Write manifest.json plus features.f32le under out_dir.

    Blob layout is sequential in record order; when consecutive records have
    different dims the write position is padded with zero floats up to the
    next multiple of the new dim, so every record keeps an integral index.
    Output is byte-identical for identical inputs.
    """
    os.makedirs(out_dir, exist_ok=True)
    for d, v in manifest.dims.items():
        if d not in DOMAINS:
            raise ManifestError("unknown domain %r in dims" % (d,))
        if int(v) <= 0:
            raise ManifestError("dims[%s] must be positive, got %s" % (d, v))

    chunks = []
    header_records = []
    pos = 0  # in floats
    for i, rec in enumerate(manifest.records):
        if rec.domain not in manifest.dims:
            raise ManifestError("record %d (%s/%s): no dims entry for domain %r" % (i, rec.category, rec.sample_id, rec.domain))
        d = int(manifest.dims[rec.domain])
        if rec.vector.shape != (d,):
            raise ManifestError(
                "record %d (%s/%s): vector length %d does not match dims[%s]=%d"
                % (i, rec.category, rec.sample_id, rec.vector.shape[0], rec.domain, d)
            )
        if pos % d != 0:
            pad = d - pos % d
            chunks.append(np.zeros(pad, dtype="<f4").tobytes())
            pos += pad
        index = pos // d
        entry = {"category": rec.category, "sample_id": rec.sample_id, "domain": rec.domain, "index": index}
        if rec.quality is not None:
            entry["quality"] = float(rec.quality)
        header_records.append(entry)
        chunks.append(rec.vector.astype("<f4").tobytes())
        pos += d

    header = {"version": 1, "dims": {k: int(manifest.dims[k]) for k in sorted(manifest.dims)}, "records": header_records}
    with open(os.path.join(out_dir, HEADER_NAME), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, BLOB_NAME), "wb") as fh:
        fh.write(b"".join(chunks))


def load_manifest(path):
    """Load and fully validate a manifest directory (or header file path)."""
    if os.path.isdir(path):
        header_path = os.path.join(path, HEADER_NAME)
    else:
        header_path = path
    blob_path = os.path.join(os.path.dirname(header_path), BLOB_NAME)
    if not os.path.exists(header_path):
        raise ManifestError("missing header file: %s" % header_path)
    if not os.path.exists(blob_path):
        raise ManifestError("missing blob file: %s" % blob_path)

    with open(header_path, "r", encoding="utf-8") as fh:
        try:
            header = json.load(fh)
        except json.JSONDecodeError as e:
            raise ManifestError("unparseable header %s: %s" % (header_path, e)) from e

    if header.get("version") != 1:
        raise ManifestError("unsupported manifest version %r (expected 1)" % (header.get("version"),))
    dims = header.get("dims")
    if not isinstance(dims, dict) or not dims:
        raise ManifestError("header dims must be a non-empty map")
    for d, v in dims.items():
        if d not in DOMAINS:
            raise ManifestError("unknown domain %r in dims" % (d,))
        if not isinstance(v, int) or v <= 0:
            raise ManifestError("dims[%s] must be a positive integer, got %r" % (d, v))

    raw = np.fromfile(blob_path, dtype="<f4")
    entries = header.get("records")
    if not isinstance(entries, list):
        raise ManifestError("header records must be a list")

    expected_end = 0
    records = []
    for i, entry in enumerate(entries):
        for key in ("category", "sample_id", "domain", "index"):
            if key not in entry:
                raise ManifestError("record %d: missing field %r" % (i, key))
        domain = entry["domain"]
        if domain not in dims:
            raise ManifestError("record %d: domain %r has no dims entry" % (i, domain))
        d = dims[domain]
        index = entry["index"]
        if not isinstance(index, int) or index < 0:
            raise ManifestError("record %d: bad index %r" % (i, index))
        start, end = index * d, (index + 1) * d
        expected_end = max(expected_end, end)
        if end > raw.size:
            raise ManifestError(
                "record %d (%s/%s): blob length mismatch, expected at least %d bytes but found %d"
                % (i, entry["category"], entry["sample_id"], end * 4, raw.size * 4)
            )
        quality = entry.get("quality")
        if quality is not None and (not isinstance(quality, (int, float)) or not np.isfinite(quality)):
            raise ManifestError("record %d: quality %r is not a finite number" % (i, quality))
        records.append(
            FeatureRecord(
                category=entry["category"],
                sample_id=entry["sample_id"],
                domain=domain,
                vector=raw[start:end].astype(np.float64),
                quality=None if quality is None else float(quality),
            )
        )

    if raw.size != expected_end:
        raise ManifestError("blob length mismatch: expected %d bytes, found %d" % (expected_end * 4, raw.size * 4))
    return Manifest(dims=dict(dims), records=records)
