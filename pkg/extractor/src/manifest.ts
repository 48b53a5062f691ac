// Feature-manifest writer and (for append) reader.
//
// A manifest directory holds manifest.json and features.f32le. The header
// is {"version": 1, "dims": {...}, "records": [...]} plus an optional
// "metadata" object; record r with domain dimension d owns the little-endian
// float32 range [r.index * d, (r.index + 1) * d) of the blob. When
// consecutive records change dims the write position is padded with zero
// floats up to the next multiple of the new dim, so indices stay integral,
// and the blob ends exactly at the last record (readers treat trailing
// bytes as corruption).

import * as fs from "node:fs";
import * as path from "node:path";

export const DOMAINS = ["sketch", "photo", "embedding"] as const;

export interface ManifestRecord {
  category: string;
  sampleId: string;
  domain: string;
  vector: Float32Array;
  quality?: number;
}

export interface ManifestData {
  dims: Record<string, number>;
  records: ManifestRecord[];
  metadata: Record<string, unknown>;
}

const HEADER_NAME = "manifest.json";
const BLOB_NAME = "features.f32le";

function checkDims(dims: Record<string, number>) {
  for (const [d, v] of Object.entries(dims)) {
    if (!(DOMAINS as readonly string[]).includes(d)) {
      throw new Error(`unknown domain ${JSON.stringify(d)} in dims`);
    }
    if (!Number.isInteger(v) || v <= 0) {
      throw new Error(`dims[${d}] must be a positive integer, got ${v}`);
    }
  }
}

export function writeManifest(data: ManifestData, outDir: string) {
  checkDims(data.dims);
  fs.mkdirSync(outDir, { recursive: true });

  const chunks: Buffer[] = [];
  const entries: Record<string, unknown>[] = [];
  let pos = 0; // in floats
  for (const rec of data.records) {
    const d = data.dims[rec.domain];
    if (d === undefined) {
      throw new Error(`record ${rec.category}/${rec.sampleId}: no dims entry for domain ${rec.domain}`);
    }
    if (rec.vector.length !== d) {
      throw new Error(
        `record ${rec.category}/${rec.sampleId}: vector length ${rec.vector.length} does not match dims[${rec.domain}]=${d}`,
      );
    }
    for (const v of rec.vector) {
      if (!Number.isFinite(v)) {
        throw new Error(`record ${rec.category}/${rec.sampleId}: vector has a non-finite value`);
      }
    }
    if (pos % d !== 0) {
      const pad = d - (pos % d);
      chunks.push(Buffer.alloc(pad * 4));
      pos += pad;
    }
    const entry: Record<string, unknown> = {
      category: rec.category,
      sample_id: rec.sampleId,
      domain: rec.domain,
      index: pos / d,
    };
    if (rec.quality !== undefined) entry.quality = rec.quality;
    entries.push(entry);
    const buf = Buffer.alloc(d * 4);
    for (let i = 0; i < d; i++) buf.writeFloatLE(rec.vector[i], i * 4);
    chunks.push(buf);
    pos += d;
  }

  const dims: Record<string, number> = {};
  for (const k of Object.keys(data.dims).sort()) dims[k] = data.dims[k];
  const header: Record<string, unknown> = { version: 1, dims, records: entries };
  if (Object.keys(data.metadata).length > 0) header.metadata = data.metadata;
  fs.writeFileSync(path.join(outDir, HEADER_NAME), JSON.stringify(header, null, 2) + "\n");
  fs.writeFileSync(path.join(outDir, BLOB_NAME), Buffer.concat(chunks));
}

export function readManifest(dir: string): ManifestData {
  const headerPath = path.join(dir, HEADER_NAME);
  const blobPath = path.join(dir, BLOB_NAME);
  if (!fs.existsSync(headerPath)) throw new Error(`missing header file: ${headerPath}`);
  if (!fs.existsSync(blobPath)) throw new Error(`missing blob file: ${blobPath}`);

  const header = JSON.parse(fs.readFileSync(headerPath, "utf-8"));
  if (header.version !== 1) throw new Error(`unsupported manifest version ${header.version}`);
  if (typeof header.dims !== "object" || header.dims === null) throw new Error("header dims must be a map");
  checkDims(header.dims);
  if (!Array.isArray(header.records)) throw new Error("header records must be a list");

  const blob = fs.readFileSync(blobPath);
  const nFloats = Math.floor(blob.length / 4);
  const records: ManifestRecord[] = [];
  for (const entry of header.records) {
    for (const key of ["category", "sample_id", "domain", "index"]) {
      if (!(key in entry)) throw new Error(`manifest record missing field ${key}`);
    }
    const d = header.dims[entry.domain];
    if (d === undefined) throw new Error(`record domain ${entry.domain} has no dims entry`);
    if (!Number.isInteger(entry.index) || entry.index < 0) throw new Error(`bad record index ${entry.index}`);
    const start = entry.index * d;
    if (start + d > nFloats) {
      throw new Error(`blob too short for record ${entry.category}/${entry.sample_id}`);
    }
    const vector = new Float32Array(d);
    for (let i = 0; i < d; i++) vector[i] = blob.readFloatLE((start + i) * 4);
    const rec: ManifestRecord = {
      category: entry.category,
      sampleId: entry.sample_id,
      domain: entry.domain,
      vector,
    };
    if (entry.quality !== undefined && entry.quality !== null) rec.quality = entry.quality;
    records.push(rec);
  }
  const metadata = typeof header.metadata === "object" && header.metadata !== null ? header.metadata : {};
  return { dims: { ...header.dims }, records, metadata };
}
