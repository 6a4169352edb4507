#!/usr/bin/env node
/**
 * Example external model backend.
 *
 * Serves hello/predict/bye frames over stdin/stdout so the host toolkit
 * can drive it as a model subprocess:
 *
 *   adage-backend --config backend.json
 *
 * where backend.json is {"mode": "linear"|"conv"|"echo", "params": <path
 * relative to the config file>, "n_class": <int>}. Exit codes: 0 after a
 * bye frame, 1 on a broken input stream, 2 on a config problem.
 *
 * One request is in flight at a time; replies are written in request
 * order. A malformed frame gets an error frame back and the loop keeps
 * going, since the defective header's bytes are already consumed and the
 * stream is still aligned.
 */

import process from "node:process";
import {
  BrokenStream,
  Frame,
  FrameParser,
  MalformedFrame,
  PROTOCOL_VERSION,
  encodeFrame,
  readFloats,
  writeFloats,
} from "./frames.js";
import { Model, loadModel } from "./model.js";

function write(buf: Buffer): Promise<void> {
  return new Promise((resolve, reject) => {
    process.stdout.write(buf, (err) => (err ? reject(err) : resolve()));
  });
}

function sendError(message: string): Promise<void> {
  return write(encodeFrame({ op: "error", message }));
}

function positiveInt(value: unknown): number | null {
  return typeof value === "number" && Number.isInteger(value) && value >= 1 ? value : null;
}

/** Handle one frame; resolves true when the client said bye. */
async function handle(model: Model, frame: Frame): Promise<boolean> {
  const op = frame.header["op"];
  if (op === "hello") {
    if (frame.header["version"] !== PROTOCOL_VERSION) {
      await sendError(`unsupported protocol version ${JSON.stringify(frame.header["version"])}`);
      return false;
    }
    await write(
      encodeFrame({ op: "hello", version: PROTOCOL_VERSION, n_class: model.nClass, batch: false })
    );
    return false;
  }
  if (op === "predict") {
    const c = positiveInt(frame.header["c"]);
    const h = positiveInt(frame.header["h"]);
    const w = positiveInt(frame.header["w"]);
    if (c === null || h === null || w === null) {
      await sendError("predict needs positive integer c, h, w");
      return false;
    }
    let logits: Float32Array;
    try {
      logits = model.predict(c, h, w, readFloats(frame.payload));
    } catch (err) {
      await sendError(err instanceof Error ? err.message : String(err));
      return false;
    }
    await write(
      encodeFrame({ op: "logits", n_class: model.nClass, h, w }, writeFloats(logits))
    );
    return false;
  }
  if (op === "bye") {
    return true;
  }
  await sendError(`unknown op ${JSON.stringify(op)}`);
  return false;
}

export async function serve(model: Model): Promise<number> {
  const parser = new FrameParser();
  for await (const chunk of process.stdin) {
    parser.push(chunk as Buffer);
    for (;;) {
      let frame: Frame | null;
      try {
        frame = parser.next();
      } catch (err) {
        if (err instanceof MalformedFrame) {
          await sendError(err.message);
          continue;
        }
        if (err instanceof BrokenStream) {
          await sendError(err.message);
          return 1;
        }
        throw err;
      }
      if (frame === null) {
        break;
      }
      if (await handle(model, frame)) {
        return 0;
      }
    }
  }
  // the client hung up without saying bye
  return 1;
}

function configPath(argv: string[]): string {
  const at = argv.indexOf("--config");
  if (at === -1 || at + 1 >= argv.length) {
    throw new Error("usage: adage-backend --config <backend.json>");
  }
  return argv[at + 1];
}

async function main(): Promise<number> {
  let model: Model;
  try {
    model = loadModel(configPath(process.argv.slice(2)));
  } catch (err) {
    process.stderr.write(`adage-backend: ${err instanceof Error ? err.message : String(err)}\n`);
    return 2;
  }
  return serve(model);
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(`adage-backend: ${String(err)}\n`);
    process.exit(1);
  }
);
