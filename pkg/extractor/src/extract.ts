// Extraction jobs: walk a category-per-subdirectory image tree (or read a
// word-embedding table) and write the feature manifest plus a sidecar
// extract.report.json listing anything that was skipped.

import * as fs from "node:fs";
import * as path from "node:path";
import { decodeImage } from "./image.js";
import { getBackbone } from "./backbone.js";
import { writeManifest, readManifest, ManifestRecord, ManifestData } from "./manifest.js";

export interface ExtractOptions {
  out: string;
  images?: string;
  domain?: string;
  backbone?: string;
  embeddings?: string;
  append?: boolean;
}

export interface SkipEntry {
  file: string;
  reason: string;
}

export interface ExtractReport {
  mode: "images" | "embeddings";
  domain: string;
  backbone?: string;
  width: number;
  usable: number;
  skipped: SkipEntry[];
}

function listSorted(dir: string, kind: "dir" | "file"): string[] {
  return fs
    .readdirSync(dir, { withFileTypes: true })
    .filter((e) => (kind === "dir" ? e.isDirectory() : e.isFile()))
    .map((e) => e.name)
    .filter((n) => !n.startsWith("."))
    .sort();
}

function extractImages(root: string, domain: string, backboneName: string) {
  const bb = getBackbone(backboneName);
  const records: ManifestRecord[] = [];
  const skipped: SkipEntry[] = [];
  // lexicographic (category, filename) order keeps output stable
  for (const category of listSorted(root, "dir")) {
    for (const name of listSorted(path.join(root, category), "file")) {
      const rel = `${category}/${name}`;
      try {
        const img = decodeImage(fs.readFileSync(path.join(root, category, name)));
        records.push({ category, sampleId: name, domain, vector: bb.features(img) });
      } catch (e) {
        const reason = e instanceof Error ? e.message : String(e);
        console.error(`warning: skipping ${rel}: ${reason}`);
        skipped.push({ file: rel, reason });
      }
    }
  }
  if (records.length === 0) {
    throw new Error(`no usable images under ${root}`);
  }
  return { records, skipped, width: bb.width, metadata: bb.recipe() };
}

function extractEmbeddings(tablePath: string) {
  const table = JSON.parse(fs.readFileSync(tablePath, "utf-8"));
  if (typeof table !== "object" || table === null || Array.isArray(table)) {
    throw new Error("embedding table must be a JSON object of category: [numbers]");
  }
  const categories = Object.keys(table).sort();
  if (categories.length === 0) throw new Error("embedding table is empty");
  let width = 0;
  const records: ManifestRecord[] = [];
  for (const category of categories) {
    const row = table[category];
    if (!Array.isArray(row) || row.some((v) => typeof v !== "number" || !Number.isFinite(v))) {
      throw new Error(`embedding for ${category} must be an array of finite numbers`);
    }
    if (width === 0) width = row.length;
    if (row.length === 0 || row.length !== width) {
      throw new Error(`embedding for ${category} has length ${row.length}, expected ${width}`);
    }
    records.push({ category, sampleId: `${category}_wv`, domain: "embedding", vector: Float32Array.from(row) });
  }
  return { records, width, metadata: { source: path.basename(tablePath), dim: width } };
}

export function runExtract(opts: ExtractOptions): ExtractReport {
  let domain: string;
  let records: ManifestRecord[];
  let skipped: SkipEntry[] = [];
  let width: number;
  let metadata: Record<string, unknown>;
  let report: ExtractReport;

  if (opts.embeddings !== undefined) {
    const got = extractEmbeddings(opts.embeddings);
    domain = "embedding";
    ({ records, width, metadata } = got);
    report = { mode: "embeddings", domain, width, usable: records.length, skipped };
  } else {
    if (opts.images === undefined || opts.domain === undefined) {
      throw new Error("images mode needs --images and --domain");
    }
    domain = opts.domain;
    const backboneName = opts.backbone ?? "rp4096";
    const got = extractImages(opts.images, domain, backboneName);
    ({ records, skipped, width, metadata } = got);
    report = { mode: "images", domain, backbone: backboneName, width, usable: records.length, skipped };
  }

  let data: ManifestData = { dims: { [domain]: width }, records, metadata: { [domain]: metadata } };
  if (opts.append) {
    const prev = readManifest(opts.out);
    if (domain in prev.dims) {
      throw new Error(`domain ${domain} already present in ${opts.out}; use a fresh --out`);
    }
    data = {
      dims: { ...prev.dims, [domain]: width },
      records: [...prev.records, ...records],
      metadata: { ...prev.metadata, [domain]: metadata },
    };
  }
  writeManifest(data, opts.out);
  fs.writeFileSync(path.join(opts.out, "extract.report.json"), JSON.stringify(report, null, 2) + "\n");
  return report;
}
