/**
 * Length-prefixed stdio frame codec.
 *
 * A frame is a little-endian u32 header length, a compact JSON header
 * carrying at least an "op" field, and an optional raw payload whose size
 * is implied by the op: "predict" carries 4*c*h*w bytes of f32 input,
 * "logits" carries 4*n_class*h*w bytes of f32 output, and every other op
 * has no payload. Headers over 1 MiB cannot be resynchronized and are
 * treated as a broken stream.
 */

export const PROTOCOL_VERSION = 1;
export const MAX_HEADER_BYTES = 1 << 20;

export type Header = Record<string, unknown>;

export interface Frame {
  header: Header;
  payload: Buffer;
}

/** Recoverable defect: the offending header's bytes were consumed, so the
 * stream is still frame-aligned and the caller may keep reading. */
export class MalformedFrame extends Error {}

/** Unrecoverable defect: no way to find the next frame boundary. */
export class BrokenStream extends Error {}

export function payloadSize(header: Header): number {
  const op = header["op"];
  if (op === "predict") {
    return 4 * Number(header["c"]) * Number(header["h"]) * Number(header["w"]);
  }
  if (op === "logits") {
    return 4 * Number(header["n_class"]) * Number(header["h"]) * Number(header["w"]);
  }
  return 0;
}

export function encodeFrame(header: Header, payload: Buffer = Buffer.alloc(0)): Buffer {
  const head = Buffer.from(JSON.stringify(header), "utf-8");
  const prefix = Buffer.alloc(4);
  prefix.writeUInt32LE(head.length, 0);
  return Buffer.concat([prefix, head, payload]);
}

/** Incremental parser: feed stream chunks with push(), drain frames with next(). */
export class FrameParser {
  private buf: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): void {
    this.buf = this.buf.length === 0 ? chunk : Buffer.concat([this.buf, chunk]);
  }

  /** The next complete frame, or null until more bytes arrive. */
  next(): Frame | null {
    if (this.buf.length < 4) {
      return null;
    }
    const headLen = this.buf.readUInt32LE(0);
    if (headLen > MAX_HEADER_BYTES) {
      throw new BrokenStream(`header length ${headLen} exceeds ${MAX_HEADER_BYTES}`);
    }
    if (this.buf.length < 4 + headLen) {
      return null;
    }
    const headBytes = this.buf.subarray(4, 4 + headLen);
    let header: Header;
    try {
      const parsed: unknown = JSON.parse(headBytes.toString("utf-8"));
      if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
        throw new Error("not an object");
      }
      header = parsed as Header;
    } catch (err) {
      this.buf = this.buf.subarray(4 + headLen);
      throw new MalformedFrame(`unreadable frame header: ${String(err)}`);
    }
    if (typeof header["op"] !== "string") {
      this.buf = this.buf.subarray(4 + headLen);
      throw new MalformedFrame("frame header has no op");
    }
    const bodyLen = payloadSize(header);
    if (!Number.isSafeInteger(bodyLen) || bodyLen < 0) {
      this.buf = this.buf.subarray(4 + headLen);
      throw new MalformedFrame(`frame header implies invalid payload size`);
    }
    if (this.buf.length < 4 + headLen + bodyLen) {
      return null;
    }
    const payload = this.buf.subarray(4 + headLen, 4 + headLen + bodyLen);
    this.buf = this.buf.subarray(4 + headLen + bodyLen);
    return { header, payload };
  }
}

/** Decode a payload into floats without assuming buffer alignment. */
export function readFloats(payload: Buffer): Float32Array {
  const out = new Float32Array(payload.length / 4);
  for (let i = 0; i < out.length; i++) {
    out[i] = payload.readFloatLE(4 * i);
  }
  return out;
}

export function writeFloats(values: Float32Array): Buffer {
  const out = Buffer.allocUnsafe(4 * values.length);
  for (let i = 0; i < values.length; i++) {
    out.writeFloatLE(values[i], 4 * i);
  }
  return out;
}
