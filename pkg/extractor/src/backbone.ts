// Feature backbones. The built-in ones are seeded Gaussian random
// projections of the resized image: no pretrained weights ship with this
// package, but the extraction contract (declared width, deterministic
// output, canonical preprocessing recorded in metadata) is the same one a
// pretrained network would satisfy. rp4096 matches the classic 4096-wide
// penultimate fully-connected layer; rp256 is a small fast variant for
// tests and smoke runs.

import { SeededRng } from "./rng.js";
import { RgbImage, resizeBilinear } from "./image.js";

export interface Backbone {
  name: string;
  width: number;
  inputSize: number;
  features(img: RgbImage): Float32Array;
  recipe(): Record<string, unknown>;
}

interface Spec {
  width: number;
  inputSize: number;
  seed: number;
}

const SPECS: Record<string, Spec> = {
  rp4096: { width: 4096, inputSize: 32, seed: 20011 },
  rp256: { width: 256, inputSize: 16, seed: 20012 },
};

class RandomProjection implements Backbone {
  readonly name: string;
  readonly width: number;
  readonly inputSize: number;
  private readonly seed: number;
  private readonly matrix: Float32Array; // width x (inputSize^2 * 3), row major

  constructor(name: string, spec: Spec) {
    this.name = name;
    this.width = spec.width;
    this.inputSize = spec.inputSize;
    this.seed = spec.seed;
    const n = spec.inputSize * spec.inputSize * 3;
    const rng = new SeededRng(spec.seed);
    this.matrix = new Float32Array(spec.width * n);
    for (let i = 0; i < this.matrix.length; i++) {
      this.matrix[i] = rng.gaussian();
    }
  }

  features(img: RgbImage): Float32Array {
    const s = this.inputSize;
    const resized = resizeBilinear(img, s, s);
    const n = s * s * 3;
    const x = new Float64Array(n);
    let mean = 0;
    for (let i = 0; i < n; i++) {
      x[i] = resized.data[i] / 255;
      mean += x[i];
    }
    mean /= n;
    let norm = 0;
    for (let i = 0; i < n; i++) {
      x[i] -= mean;
      norm += x[i] * x[i];
    }
    norm = Math.sqrt(norm);
    if (norm > 1e-12) {
      for (let i = 0; i < n; i++) x[i] /= norm;
    }
    // y = G x / sqrt(width) keeps the expected output norm at ||x||
    const out = new Float32Array(this.width);
    const scale = 1 / Math.sqrt(this.width);
    for (let r = 0; r < this.width; r++) {
      let acc = 0;
      const off = r * n;
      for (let i = 0; i < n; i++) {
        acc += this.matrix[off + i] * x[i];
      }
      out[r] = Math.fround(acc * scale);
    }
    return out;
  }

  recipe(): Record<string, unknown> {
    return {
      backbone: this.name,
      width: this.width,
      input: [this.inputSize, this.inputSize],
      channels: "rgb",
      background: "white",
      resize: "bilinear",
      pixel_scale: "1/255",
      normalize: "center-unit",
      projection: { kind: "gaussian", seed: this.seed, scale: "1/sqrt(width)" },
    };
  }
}

const cache = new Map<string, Backbone>();

export function listBackbones(): string[] {
  return Object.keys(SPECS).sort();
}

export function getBackbone(name: string): Backbone {
  const hit = cache.get(name);
  if (hit) return hit;
  const spec = SPECS[name];
  if (!spec) {
    throw new Error(`unknown backbone ${JSON.stringify(name)} (known: ${listBackbones().join(", ")})`);
  }
  const bb = new RandomProjection(name, spec);
  cache.set(name, bb);
  return bb;
}
