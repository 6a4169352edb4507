"""Prediction backends: the black-box contract f(x) -> logit map.

Built-in analytic backends (pixel-wise linear, 3x3 conv with replicate
padding) exist so attributions can be checked against closed forms; the
subprocess backend attaches any external model speaking the stdio frame
protocol. All backends are deterministic within a process lifetime.
"""

from __future__ import annotations

import json
import subprocess
import sys
from dataclasses import dataclass

import numpy as np

from .errors import (
    AdageError,
    BackendFailure,
    ChildExit,
    DimMismatch,
    EmptyBackgroundSet,
    MixedChannelCounts,
    ProtocolViolation,
    SchemaError,
    SpawnFailure,
)
from .protocol import PROTOCOL_VERSION, FrameReader, encode_frame
from .raster import LogitMap, Mask2D, TensorCHW


@dataclass(frozen=True)
class Background:
    """Per-channel expected values used to impute absent channel groups."""

    mu: np.ndarray  # (C,) f32
    provenance: str  # "zeros" | "dataset-mean" | "user-supplied"

    def __post_init__(self):
        arr = np.ascontiguousarray(self.mu, dtype=np.float32)
        if arr.ndim != 1 or arr.size < 1:
            raise SchemaError("background", "expected a 1-D channel vector")
        if not np.isfinite(arr).all():
            raise SchemaError("background", "expected finite values")
        object.__setattr__(self, "mu", arr)

    @property
    def channels(self) -> int:
        return self.mu.shape[0]


def background_zeros(channels: int) -> Background:
    return Background(np.zeros(channels, dtype=np.float32), "zeros")


def background_from_values(values) -> Background:
    return Background(np.asarray(values, dtype=np.float32), "user-supplied")


def compute_background(tensors) -> Background:
    """Pooled per-channel mean over all samples and pixels."""
    tensors = list(tensors)
    if not tensors:
        raise EmptyBackgroundSet()
    counts = {t.channels for t in tensors}
    if len(counts) != 1:
        raise MixedChannelCounts(counts)
    c = counts.pop()
    total = np.zeros(c, dtype=np.float64)
    n_pixels = 0
    for t in tensors:
        total += t.data.astype(np.float64).sum(axis=(1, 2))
        n_pixels += t.height * t.width
    return Background((total / n_pixels).astype(np.float32), "dataset-mean")


# --- built-in analytic backends ----------------------------------------------


class LinearBackend:
    """Pixel-wise linear map: out[cls] = sum_c w[cls,c] * x[c] + b[cls]."""

    def __init__(self, weights, bias):
        w = np.asarray(weights, dtype=np.float64)
        b = np.asarray(bias, dtype=np.float64)
        if w.ndim != 2:
            raise SchemaError("weights", "expected shape (n_class, C)")
        if b.shape != (w.shape[0],):
            raise SchemaError("bias", f"expected shape ({w.shape[0]},)")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise SchemaError("weights", "expected finite parameters")
        self.weights = w
        self.bias = b
        self.n_class = w.shape[0]
        self.in_channels = w.shape[1]

    def predict(self, x: TensorCHW) -> LogitMap:
        if x.channels != self.in_channels:
            raise DimMismatch(self.in_channels, x.channels, "input channels")
        out = np.einsum(
            "oc,chw->ohw", self.weights, x.data.astype(np.float64), optimize=True
        )
        out += self.bias[:, None, None]
        return LogitMap(out.astype(np.float32))


class ConvBackend:
    """3x3 cross-correlation over all channels, replicate padding, plus bias."""

    def __init__(self, kernels, bias):
        k = np.asarray(kernels, dtype=np.float64)
        b = np.asarray(bias, dtype=np.float64)
        if k.ndim != 4 or k.shape[2:] != (3, 3):
            raise SchemaError("kernels", "expected shape (n_class, C, 3, 3)")
        if b.shape != (k.shape[0],):
            raise SchemaError("bias", f"expected shape ({k.shape[0]},)")
        if not (np.isfinite(k).all() and np.isfinite(b).all()):
            raise SchemaError("kernels", "expected finite parameters")
        self.kernels = k
        self.bias = b
        self.n_class = k.shape[0]
        self.in_channels = k.shape[1]

    def predict(self, x: TensorCHW) -> LogitMap:
        if x.channels != self.in_channels:
            raise DimMismatch(self.in_channels, x.channels, "input channels")
        h, w = x.height, x.width
        padded = np.pad(
            x.data.astype(np.float64), ((0, 0), (1, 1), (1, 1)), mode="edge"
        )
        out = np.zeros((self.n_class, h, w), dtype=np.float64)
        for dy in range(3):
            for dx in range(3):
                window = padded[:, dy : dy + h, dx : dx + w]
                out += np.einsum(
                    "oc,chw->ohw", self.kernels[:, :, dy, dx], window, optimize=True
                )
        out += self.bias[:, None, None]
        return LogitMap(out.astype(np.float32))


def make_linear_backend(weights, bias) -> LinearBackend:
    return LinearBackend(weights, bias)


def make_conv_backend(kernels, bias) -> ConvBackend:
    return ConvBackend(kernels, bias)


def load_backend_params(text: str):
    """Build a built-in backend from its JSON parameter document.

    {"kind":"linear","weights":[[..]..],"bias":[..]} or
    {"kind":"conv","kernels":[[[[..3x3..]]]..],"bias":[..]}.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected an object")
    kind = doc.get("kind")
    if kind == "linear":
        return LinearBackend(doc.get("weights"), doc.get("bias"))
    if kind == "conv":
        return ConvBackend(doc.get("kernels"), doc.get("bias"))
    raise SchemaError("$.kind", f"unknown backend kind {kind!r}")


def predict(backend, x: TensorCHW) -> LogitMap:
    """Uniform entry point for any backend; checks the output contract."""
    y = backend.predict(x)
    if y.data.shape[1:] != x.data.shape[1:]:
        raise DimMismatch(x.data.shape[1:], y.data.shape[1:], "spatial dims")
    if y.n_class != backend.n_class:
        raise DimMismatch(backend.n_class, y.n_class, "class count")
    return y


def predicted_classes(logits: LogitMap) -> Mask2D:
    """Per-pixel predicted class; single-logit models threshold at 0."""
    if logits.n_class == 1:
        return Mask2D((logits.data[0] > 0).astype(np.uint8))
    return Mask2D(np.argmax(logits.data, axis=0).astype(np.uint8))


# --- external model processes ---------------------------------------------------


class SubprocessBackend:
    """Client for a model process speaking the stdio frame protocol.

    Calls are serialized per instance; run several instances for parallelism.
    """

    def __init__(self, command, n_class=None, timeout: float = 30.0):
        self.command = list(command)
        self.timeout = timeout
        try:
            stderr_fd = sys.stderr.fileno() if sys.stderr else None
        except (AttributeError, OSError, ValueError):
            stderr_fd = None  # stderr is not a real fd (captured); inherit
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=stderr_fd,
            )
        except OSError as exc:
            raise SpawnFailure(self.command, exc) from exc
        self._reader = FrameReader(self._proc.stdout.fileno(), timeout)
        self._closed = False
        try:
            header, _ = self._roundtrip({"op": "hello", "version": PROTOCOL_VERSION})
            if header.get("op") != "hello":
                raise ProtocolViolation("hello reply", str(header.get("op")))
            if header.get("version") != PROTOCOL_VERSION:
                raise ProtocolViolation(
                    f"version {PROTOCOL_VERSION}", str(header.get("version"))
                )
            advertised = header.get("n_class")
            if not isinstance(advertised, int) or advertised < 1:
                raise ProtocolViolation("positive n_class", str(advertised))
            if n_class is not None and advertised != n_class:
                raise ProtocolViolation(f"n_class {n_class}", str(advertised))
            self.n_class = advertised
            self.batch = bool(header.get("batch", False))
            self.in_channels = None  # accepts any channel count
        except AdageError:
            self._kill()
            raise

    def _send(self, header: dict, payload: bytes = b"") -> None:
        try:
            self._proc.stdin.write(encode_frame(header, payload))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            code = self._proc.poll()
            if code is not None:
                raise ChildExit(code) from exc
            raise BackendFailure(f"write failed: {exc}") from exc

    def _roundtrip(self, header: dict, payload: bytes = b"") -> tuple[dict, bytes]:
        self._send(header, payload)
        try:
            return self._reader.read_frame()
        except ProtocolViolation:
            # EOF usually means the child is dying; give it a moment to
            # finish so the exit code can be reported instead of the EOF
            try:
                code = self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                code = None
            if code is not None and code != 0:
                raise ChildExit(code) from None
            raise

    def predict(self, x: TensorCHW) -> LogitMap:
        if self._closed:
            raise BackendFailure("backend already shut down")
        req = {"op": "predict", "c": x.channels, "h": x.height, "w": x.width}
        header, body = self._roundtrip(req, x.data.astype("<f4").tobytes())
        op = header.get("op")
        if op == "error":
            raise BackendFailure(str(header.get("message")))
        if op != "logits":
            raise ProtocolViolation("logits reply", str(op))
        n = header.get("n_class")
        if n != self.n_class:
            raise DimMismatch(self.n_class, n, "class count")
        if header.get("h") != x.height or header.get("w") != x.width:
            raise DimMismatch(
                (x.height, x.width), (header.get("h"), header.get("w")), "spatial dims"
            )
        flat = np.frombuffer(body, dtype="<f4")
        if not np.isfinite(flat).all():
            raise BackendFailure("non-finite logits from external model")
        return LogitMap(flat.reshape(self.n_class, x.height, x.width).copy())

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._send({"op": "bye"})
            code = self._proc.wait(timeout=self.timeout)
            if code != 0:
                raise ChildExit(code)
        except ChildExit:
            raise
        except Exception:
            self._kill()

    def _kill(self) -> None:
        self._closed = True
        if self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        try:
            self.close()
        except AdageError:
            if exc[0] is None:
                raise


def make_subprocess_backend(command, n_class=None, timeout: float = 30.0):
    return SubprocessBackend(command, n_class=n_class, timeout=timeout)
