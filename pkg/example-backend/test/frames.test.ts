import { describe, expect, it } from "vitest";
import {
  BrokenStream,
  FrameParser,
  MalformedFrame,
  encodeFrame,
  payloadSize,
  readFloats,
  writeFloats,
} from "../src/frames";

describe("frame layout", () => {
  it("prefixes the compact JSON header with its little-endian length", () => {
    const buf = encodeFrame({ op: "bye" });
    expect(buf.readUInt32LE(0)).toBe(buf.length - 4);
    expect(buf.subarray(4).toString("utf-8")).toBe('{"op":"bye"}');
  });

  it("appends the payload verbatim", () => {
    const payload = Buffer.from([1, 2, 3, 4]);
    const buf = encodeFrame({ op: "predict", c: 1, h: 1, w: 1 }, payload);
    expect(buf.subarray(buf.length - 4)).toEqual(payload);
  });

  it("derives payload sizes from the op", () => {
    expect(payloadSize({ op: "predict", c: 3, h: 4, w: 5 })).toBe(240);
    expect(payloadSize({ op: "logits", n_class: 2, h: 4, w: 5 })).toBe(160);
    expect(payloadSize({ op: "hello" })).toBe(0);
  });
});

describe("FrameParser", () => {
  it("reassembles a frame fed one byte at a time", () => {
    const payload = writeFloats(Float32Array.from([1.5, -2.0]));
    const wire = encodeFrame({ op: "predict", c: 2, h: 1, w: 1 }, payload);
    const parser = new FrameParser();
    for (let i = 0; i < wire.length - 1; i++) {
      parser.push(wire.subarray(i, i + 1));
      expect(parser.next()).toBeNull();
    }
    parser.push(wire.subarray(wire.length - 1));
    const frame = parser.next();
    expect(frame).not.toBeNull();
    expect(frame!.header).toEqual({ op: "predict", c: 2, h: 1, w: 1 });
    expect(Array.from(readFloats(frame!.payload))).toEqual([1.5, -2.0]);
  });

  it("drains several frames from one chunk", () => {
    const parser = new FrameParser();
    parser.push(Buffer.concat([encodeFrame({ op: "hello", version: 1 }), encodeFrame({ op: "bye" })]));
    expect(parser.next()!.header["op"]).toBe("hello");
    expect(parser.next()!.header["op"]).toBe("bye");
    expect(parser.next()).toBeNull();
  });

  it("stays aligned after a malformed header", () => {
    const bad = Buffer.from("not json", "utf-8");
    const prefix = Buffer.alloc(4);
    prefix.writeUInt32LE(bad.length, 0);
    const parser = new FrameParser();
    parser.push(Buffer.concat([prefix, bad, encodeFrame({ op: "bye" })]));
    expect(() => parser.next()).toThrow(MalformedFrame);
    expect(parser.next()!.header["op"]).toBe("bye");
  });

  it("rejects a header without an op the same recoverable way", () => {
    const parser = new FrameParser();
    parser.push(Buffer.concat([encodeFrame({ version: 1 }), encodeFrame({ op: "bye" })]));
    expect(() => parser.next()).toThrow(MalformedFrame);
    expect(parser.next()!.header["op"]).toBe("bye");
  });

  it("treats an oversized header length as a broken stream", () => {
    const prefix = Buffer.alloc(4);
    prefix.writeUInt32LE(2 << 20, 0);
    const parser = new FrameParser();
    parser.push(prefix);
    expect(() => parser.next()).toThrow(BrokenStream);
  });
});

describe("float payloads", () => {
  it("round-trips through little-endian bytes", () => {
    const values = Float32Array.from([0, -1.25, 3.5e7, 1e-20]);
    expect(Array.from(readFloats(writeFloats(values)))).toEqual(Array.from(values));
  });
});
