"""Scriptable external-model process used by the protocol tests.

Speaks the length-prefixed stdio frame protocol with nothing but the
standard library, so it double-checks the client against an independent
implementation. The first argv selects a behaviour:

  ok             conforming linear model (n_class=2)
  bad-version    hello reply advertises protocol version 2
  bad-nclass     hello reply advertises n_class 0
  wrong-op       replies to predict with an unknown op
  error-op       replies to predict with an error frame
  short-payload  declares logits but writes half the payload, then exits
  huge-header    emits a length prefix over the 1 MiB cap
  die-on-predict exits 0 without replying to predict
  die-nonzero    exits 3 without replying to predict
  hang           never replies to predict
  bad-exit       exits 5 on bye
  nonfinite      emits +inf logits
  wrong-dims     logits header declares h+1 rows

Model arithmetic (mode ok): logit0 = 0.25 * sum_c x[c], logit1 = x[0] - x[C-1],
accumulated in double precision, emitted as f32.
"""

import json
import struct
import sys
import time

OUT = sys.stdout.buffer
IN = sys.stdin.buffer


def read_exact(n):
    buf = b""
    while len(buf) < n:
        chunk = IN.read(n - len(buf))
        if not chunk:
            sys.exit(1)
        buf += chunk
    return buf


def read_frame():
    head_len = struct.unpack("<I", read_exact(4))[0]
    header = json.loads(read_exact(head_len).decode("utf-8"))
    op = header.get("op")
    if op == "predict":
        n = 4 * header["c"] * header["h"] * header["w"]
    else:
        n = 0
    return header, read_exact(n)


def send(header, payload=b""):
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    OUT.write(struct.pack("<I", len(head)) + head + payload)
    OUT.flush()


def logits_for(header, payload, mode):
    c, h, w = header["c"], header["h"], header["w"]
    x = struct.unpack(f"<{c * h * w}f", payload)
    n_pix = h * w
    out = []
    for p in range(n_pix):
        total = 0.0
        for ch in range(c):
            total += x[ch * n_pix + p]
        out.append(0.25 * total)
    for p in range(n_pix):
        out.append(x[p] - x[(c - 1) * n_pix + p])
    if mode == "nonfinite":
        out[0] = float("inf")
    reply = {"op": "logits", "n_class": 2, "h": h, "w": w}
    if mode == "wrong-dims":
        # lie about the height, padding the payload to match the lie so the
        # client's dimension check (not a stream stall) is what trips
        reply["h"] = h + 1
        out.extend([0.0] * (2 * w))
    send(reply, struct.pack(f"<{len(out)}f", *out))


def main():
    mode = sys.argv[1] if len(sys.argv) > 1 else "ok"
    while True:
        header, payload = read_frame()
        op = header.get("op")
        if op == "hello":
            reply = {"op": "hello", "version": 1, "n_class": 2, "batch": False}
            if mode == "bad-version":
                reply["version"] = 2
            elif mode == "bad-nclass":
                reply["n_class"] = 0
            send(reply)
        elif op == "predict":
            if mode == "die-on-predict":
                sys.exit(0)
            if mode == "die-nonzero":
                sys.exit(3)
            if mode == "hang":
                time.sleep(60)
            if mode == "wrong-op":
                send({"op": "weird"})
            elif mode == "error-op":
                send({"op": "error", "message": "cannot predict today"})
            elif mode == "short-payload":
                h, w = header["h"], header["w"]
                send_header = {"op": "logits", "n_class": 2, "h": h, "w": w}
                head = json.dumps(send_header, separators=(",", ":")).encode()
                OUT.write(struct.pack("<I", len(head)) + head)
                OUT.write(b"\x00" * (4 * h * w))  # half of 2*h*w floats
                OUT.flush()
                sys.exit(0)
            elif mode == "huge-header":
                OUT.write(struct.pack("<I", 2 << 20))
                OUT.flush()
                sys.exit(0)
            else:
                logits_for(header, payload, mode)
        elif op == "bye":
            sys.exit(5 if mode == "bad-exit" else 0)
        else:
            send({"op": "error", "message": f"unknown op {op!r}"})


if __name__ == "__main__":
    main()
