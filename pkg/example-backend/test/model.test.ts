import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import * as path from "node:path";
import { describe, expect, it } from "vitest";
import { loadModel } from "../src/model";

function withConfig(mode: string, params: unknown, nClass = 2): string {
  const dir = mkdtempSync(path.join(tmpdir(), "adage-backend-"));
  writeFileSync(path.join(dir, "params.json"), JSON.stringify(params));
  const cfg = path.join(dir, "backend.json");
  writeFileSync(cfg, JSON.stringify({ mode, params: "params.json", n_class: nClass }));
  return cfg;
}

const LINEAR = {
  kind: "linear",
  weights: [
    [0.5, -0.25],
    [1.0, 0.75],
  ],
  bias: [0.125, -0.5],
};

describe("linear mode", () => {
  it("computes w.x + b per pixel, channel-major in, class-major out", () => {
    const model = loadModel(withConfig("linear", LINEAR));
    const logits = model.predict(2, 1, 2, Float32Array.from([1.5, -2.0, 0.25, 8.0]));
    expect(Array.from(logits)).toEqual([0.8125, -2.875, 1.1875, 3.5]);
  });

  it("rejects a channel-count mismatch", () => {
    const model = loadModel(withConfig("linear", LINEAR));
    expect(() => model.predict(3, 1, 1, new Float32Array(3))).toThrow(/expects 2 channels/);
  });
});

describe("conv mode", () => {
  it("applies a 3x3 stencil with replicate padding", () => {
    const ones = [
      [1, 1, 1],
      [1, 1, 1],
      [1, 1, 1],
    ];
    const model = loadModel(
      withConfig("conv", { kind: "conv", kernels: [[ones]], bias: [0] }, 1)
    );
    // 2x2 input [[1,2],[3,4]]: each output is the 3x3 window sum over the
    // edge-replicated grid, worked out by hand
    const logits = model.predict(1, 2, 2, Float32Array.from([1, 2, 3, 4]));
    expect(Array.from(logits)).toEqual([18, 21, 24, 27]);
  });

  it("passes the input through with a centre-only stencil", () => {
    const centre = [
      [0, 0, 0],
      [0, 1, 0],
      [0, 0, 0],
    ];
    const model = loadModel(
      withConfig("conv", { kind: "conv", kernels: [[centre]], bias: [0] }, 1)
    );
    const x = Float32Array.from([5, -1, 0.5, 2, 7, -3]);
    expect(Array.from(model.predict(1, 2, 3, x))).toEqual(Array.from(x));
  });
});

describe("echo mode", () => {
  const params = { kind: "echo", values: [[[1.5, 2.5]], [[-1, 0]]] };

  it("replays the stored fixture for any input", () => {
    const model = loadModel(withConfig("echo", params));
    const logits = model.predict(6, 1, 2, new Float32Array(12));
    expect(Array.from(logits)).toEqual([1.5, 2.5, -1, 0]);
  });

  it("rejects a request on a different grid", () => {
    const model = loadModel(withConfig("echo", params));
    expect(() => model.predict(6, 2, 2, new Float32Array(24))).toThrow(/fixture is 1x2/);
  });
});

describe("config validation", () => {
  it("rejects an unknown mode", () => {
    expect(() => loadModel(withConfig("quadratic", LINEAR))).toThrow(/mode must be one of/);
  });

  it("rejects a mode that disagrees with the parameter kind", () => {
    expect(() => loadModel(withConfig("conv", LINEAR))).toThrow(/does not match parameter kind/);
  });

  it("rejects an n_class that disagrees with the parameters", () => {
    expect(() => loadModel(withConfig("linear", LINEAR, 3))).toThrow(/advertises 3/);
  });

  it("rejects non-finite weights", () => {
    const bad = { kind: "linear", weights: [[Number.NaN]], bias: [0] };
    expect(() => loadModel(withConfig("linear", bad, 1))).toThrow(/finite/);
  });

  it("rejects ragged weight rows", () => {
    const bad = { kind: "linear", weights: [[1, 2], [3]], bias: [0, 0] };
    expect(() => loadModel(withConfig("linear", bad))).toThrow(/length-2/);
  });
});
