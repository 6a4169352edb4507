/**
 * Model modes served over the wire protocol.
 *
 * The analytic modes (linear, conv) reproduce the host toolkit's built-in
 * backends so conformance can be checked numerically; echo replays a
 * stored logit fixture. None of them pull in an ML runtime.
 *
 * Adapter seam for a real network: implement Model and return it from
 * loadModel for your own parameter kind. predict() receives the raw
 * channel-major (c*h*w) f32 input and must return class-major
 * (nClass*h*w) f32 logits on the same grid — run your framework's
 * forward pass inside it, e.g.
 *
 *   class TrainedModel implements Model {
 *     readonly nClass = 3;
 *     predict(c: number, h: number, w: number, x: Float32Array) {
 *       // const input = toFrameworkTensor(x, [c, h, w]);
 *       // return fromFrameworkTensor(net.forward(input));
 *     }
 *   }
 *
 * Anything this function throws is reported to the client as an error
 * frame; the process stays up.
 */

import { readFileSync } from "node:fs";
import * as path from "node:path";

export interface Model {
  readonly nClass: number;
  predict(c: number, h: number, w: number, x: Float32Array): Float32Array;
}

interface BackendConfig {
  mode: "linear" | "conv" | "echo";
  params: string;
  n_class: number;
}

const MODES = new Set(["linear", "conv", "echo"]);

function fail(message: string): never {
  throw new Error(message);
}

function asFiniteMatrix(value: unknown, what: string): number[][] {
  if (!Array.isArray(value) || value.length === 0) {
    fail(`${what} must be a non-empty array`);
  }
  const rows = value as unknown[];
  const width = (rows[0] as unknown[]).length;
  return rows.map((row, i) => {
    if (!Array.isArray(row) || row.length !== width) {
      fail(`${what}[${i}] must be a length-${width} array`);
    }
    return row.map((v, j) => {
      if (typeof v !== "number" || !Number.isFinite(v)) {
        fail(`${what}[${i}][${j}] must be a finite number`);
      }
      return v;
    });
  });
}

function asFiniteVector(value: unknown, what: string, length: number): number[] {
  if (!Array.isArray(value) || value.length !== length) {
    fail(`${what} must be a length-${length} array`);
  }
  return (value as unknown[]).map((v, i) => {
    if (typeof v !== "number" || !Number.isFinite(v)) {
      fail(`${what}[${i}] must be a finite number`);
    }
    return v;
  });
}

class LinearModel implements Model {
  readonly nClass: number;
  private readonly channels: number;

  constructor(private readonly weights: number[][], private readonly bias: number[]) {
    this.nClass = weights.length;
    this.channels = weights[0].length;
  }

  predict(c: number, h: number, w: number, x: Float32Array): Float32Array {
    if (c !== this.channels) {
      fail(`model expects ${this.channels} channels, request has ${c}`);
    }
    const nPix = h * w;
    const out = new Float32Array(this.nClass * nPix);
    for (let o = 0; o < this.nClass; o++) {
      const row = this.weights[o];
      for (let p = 0; p < nPix; p++) {
        let acc = this.bias[o];
        for (let ch = 0; ch < c; ch++) {
          acc += row[ch] * x[ch * nPix + p];
        }
        out[o * nPix + p] = acc;
      }
    }
    return out;
  }
}

class ConvModel implements Model {
  readonly nClass: number;
  private readonly channels: number;

  // kernels[o][c] is a flat 3x3 cross-correlation stencil, row-major
  constructor(private readonly kernels: number[][][], private readonly bias: number[]) {
    this.nClass = kernels.length;
    this.channels = kernels[0].length;
  }

  predict(c: number, h: number, w: number, x: Float32Array): Float32Array {
    if (c !== this.channels) {
      fail(`model expects ${this.channels} channels, request has ${c}`);
    }
    const out = new Float32Array(this.nClass * h * w);
    for (let o = 0; o < this.nClass; o++) {
      for (let y = 0; y < h; y++) {
        for (let xx = 0; xx < w; xx++) {
          let acc = this.bias[o];
          for (let ch = 0; ch < c; ch++) {
            const stencil = this.kernels[o][ch];
            const plane = ch * h * w;
            for (let ky = 0; ky < 3; ky++) {
              // replicate padding: clamp the neighbourhood to the grid
              const sy = Math.min(Math.max(y + ky - 1, 0), h - 1);
              for (let kx = 0; kx < 3; kx++) {
                const sx = Math.min(Math.max(xx + kx - 1, 0), w - 1);
                acc += stencil[3 * ky + kx] * x[plane + sy * w + sx];
              }
            }
          }
          out[o * h * w + y * w + xx] = acc;
        }
      }
    }
    return out;
  }
}

class EchoModel implements Model {
  readonly nClass: number;
  private readonly h: number;
  private readonly w: number;

  constructor(private readonly values: Float32Array, nClass: number, h: number, w: number) {
    this.nClass = nClass;
    this.h = h;
    this.w = w;
  }

  predict(_c: number, h: number, w: number): Float32Array {
    if (h !== this.h || w !== this.w) {
      fail(`echo fixture is ${this.h}x${this.w}, request is ${h}x${w}`);
    }
    return this.values;
  }
}

function parseLinear(doc: Record<string, unknown>): LinearModel {
  const weights = asFiniteMatrix(doc["weights"], "weights");
  const bias = asFiniteVector(doc["bias"], "bias", weights.length);
  return new LinearModel(weights, bias);
}

function parseConv(doc: Record<string, unknown>): ConvModel {
  const raw = doc["kernels"];
  if (!Array.isArray(raw) || raw.length === 0) {
    fail("kernels must be a non-empty array");
  }
  const kernels = (raw as unknown[]).map((perClass, o) => {
    if (!Array.isArray(perClass) || perClass.length === 0) {
      fail(`kernels[${o}] must be a non-empty array`);
    }
    return (perClass as unknown[]).map((stencil, ch) => {
      const rows = asFiniteMatrix(stencil, `kernels[${o}][${ch}]`);
      if (rows.length !== 3 || rows[0].length !== 3) {
        fail(`kernels[${o}][${ch}] must be 3x3`);
      }
      return rows.flat();
    });
  });
  const channels = kernels[0].length;
  kernels.forEach((perClass, o) => {
    if (perClass.length !== channels) {
      fail(`kernels[${o}] must cover ${channels} channels`);
    }
  });
  const bias = asFiniteVector(doc["bias"], "bias", kernels.length);
  return new ConvModel(kernels, bias);
}

function parseEcho(doc: Record<string, unknown>): EchoModel {
  const raw = doc["values"];
  if (!Array.isArray(raw) || raw.length === 0) {
    fail("values must be a non-empty array");
  }
  const planes = (raw as unknown[]).map((plane, o) => asFiniteMatrix(plane, `values[${o}]`));
  const h = planes[0].length;
  const w = planes[0][0].length;
  planes.forEach((plane, o) => {
    if (plane.length !== h || plane[0].length !== w) {
      fail(`values[${o}] must be ${h}x${w}`);
    }
  });
  return new EchoModel(Float32Array.from(planes.flat(2)), planes.length, h, w);
}

export function loadModel(configPath: string): Model {
  const cfg = JSON.parse(readFileSync(configPath, "utf-8")) as Partial<BackendConfig>;
  if (typeof cfg.mode !== "string" || !MODES.has(cfg.mode)) {
    fail(`config mode must be one of linear|conv|echo, got ${JSON.stringify(cfg.mode)}`);
  }
  if (typeof cfg.params !== "string") {
    fail("config params must be a path to a parameter file");
  }
  if (typeof cfg.n_class !== "number" || !Number.isInteger(cfg.n_class) || cfg.n_class < 1) {
    fail("config n_class must be a positive integer");
  }
  // parameter paths resolve relative to the config file, so a config and
  // its parameters can move around as one bundle
  const paramsPath = path.resolve(path.dirname(configPath), cfg.params);
  const doc = JSON.parse(readFileSync(paramsPath, "utf-8")) as Record<string, unknown>;
  if (doc["kind"] !== cfg.mode) {
    fail(`config mode ${cfg.mode} does not match parameter kind ${JSON.stringify(doc["kind"])}`);
  }
  let model: Model;
  if (cfg.mode === "linear") {
    model = parseLinear(doc);
  } else if (cfg.mode === "conv") {
    model = parseConv(doc);
  } else {
    model = parseEcho(doc);
  }
  if (model.nClass !== cfg.n_class) {
    fail(`parameters define ${model.nClass} classes, config advertises ${cfg.n_class}`);
  }
  return model;
}
