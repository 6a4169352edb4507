"""Drives the bundled TypeScript example backend over the wire protocol.

These tests exercise the reference external process end to end: numerical
parity with the built-in backends on shared parameter files, the echo
fixture mode, and the recover-vs-give-up split for defective frames. They
need `example-backend/dist/main.js`; run `npm install && npm run build`
there if a fresh checkout is missing it.
"""

import json
import struct
import subprocess
from pathlib import Path

import numpy as np
import pytest

from adage.backends import ConvBackend, LinearBackend, SubprocessBackend
from adage.errors import BackendFailure
from adage.raster import TensorCHW

BACKEND_DIR = Path(__file__).resolve().parent.parent / "example-backend"
MAIN_JS = BACKEND_DIR / "dist" / "main.js"

rng = np.random.default_rng(61409)

pytestmark = pytest.mark.skipif(
    not MAIN_JS.exists(),
    reason="example backend not built (npm install && npm run build in example-backend/)",
)


def write_backend(tmp_path, mode, params, n_class):
    (tmp_path / "params.json").write_text(json.dumps(params))
    cfg = tmp_path / "backend.json"
    cfg.write_text(
        json.dumps({"mode": mode, "params": "params.json", "n_class": n_class})
    )
    return ["node", str(MAIN_JS), "--config", str(cfg)]


def test_conv_mode_matches_builtin_backend(tmp_path):
    kernels = rng.standard_normal((2, 4, 3, 3)) * 0.4
    bias = rng.standard_normal(2)
    command = write_backend(
        tmp_path,
        "conv",
        {"kind": "conv", "kernels": kernels.tolist(), "bias": bias.tolist()},
        2,
    )
    builtin = ConvBackend(kernels, bias)
    with SubprocessBackend(command, n_class=2) as ext:
        for _ in range(5):
            x = TensorCHW(rng.standard_normal((4, 6, 9)).astype(np.float32))
            got = ext.predict(x).data
            want = builtin.predict(x).data
            assert np.abs(got - want).max() <= 1e-5


def test_echo_mode_replays_the_fixture(tmp_path):
    values = [[[1.5, -2.0], [0.25, 8.0]], [[0.0, 1.0], [2.0, 3.0]]]
    command = write_backend(tmp_path, "echo", {"kind": "echo", "values": values}, 2)
    with SubprocessBackend(command, n_class=2) as ext:
        x = TensorCHW(rng.standard_normal((6, 2, 2)).astype(np.float32))
        got = ext.predict(x).data
        assert got.tolist() == values


def test_echo_mode_rejects_a_different_grid(tmp_path):
    command = write_backend(
        tmp_path, "echo", {"kind": "echo", "values": [[[1.0]], [[2.0]]]}, 2
    )
    with SubprocessBackend(command, n_class=2) as ext:
        with pytest.raises(BackendFailure, match="fixture is 1x1"):
            ext.predict(TensorCHW(rng.standard_normal((3, 2, 2)).astype(np.float32)))
        # the error frame left the stream aligned: the session continues
        ok = ext.predict(TensorCHW(rng.standard_normal((3, 1, 1)).astype(np.float32)))
        assert ok.data.shape == (2, 1, 1)


def test_channel_mismatch_is_an_error_frame_not_a_crash(tmp_path):
    w = rng.standard_normal((2, 5))
    command = write_backend(
        tmp_path,
        "linear",
        {"kind": "linear", "weights": w.tolist(), "bias": [0.0, 0.0]},
        2,
    )
    with SubprocessBackend(command, n_class=2) as ext:
        with pytest.raises(BackendFailure, match="expects 5 channels"):
            ext.predict(TensorCHW(rng.standard_normal((4, 3, 3)).astype(np.float32)))
        ok = ext.predict(TensorCHW(rng.standard_normal((5, 3, 3)).astype(np.float32)))
        assert ok.data.shape == (2, 3, 3)


def test_config_problems_exit_2(tmp_path):
    command = write_backend(
        tmp_path,
        "linear",
        {"kind": "linear", "weights": [[1.0, 2.0]], "bias": [0.0]},
        3,  # parameters define a single class
    )
    run = subprocess.run(command, input=b"", capture_output=True, timeout=30)
    assert run.returncode == 2
    assert b"advertises 3" in run.stderr


def test_stream_ending_without_bye_exits_1(tmp_path):
    command = write_backend(
        tmp_path,
        "linear",
        {"kind": "linear", "weights": [[1.0]], "bias": [0.0]},
        1,
    )
    head = json.dumps({"op": "hello", "version": 1}, separators=(",", ":")).encode()
    run = subprocess.run(
        command,
        input=struct.pack("<I", len(head)) + head,
        capture_output=True,
        timeout=30,
    )
    assert run.returncode == 1
