"""Built-in verification suite.

Runs the attribution axioms (efficiency, symmetry, dummy), an exhaustive
permutation-average cross-check on a small problem, the weight-normalization
identity, format round-trips, and a couple of metric identities — all on
deterministic embedded fixtures. Meant as a fast post-install smoke test:
`adage selfcheck` prints one line per check and exits nonzero on failure.
"""

from __future__ import annotations

import io
import itertools
import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .backends import (
    Background,
    background_zeros,
    compute_background,
    make_conv_backend,
    make_linear_backend,
    predict,
)
from .groups import ChannelGroupSet, validate_partition
from .metrics import ap_at_k, segmentation_from_counts
from .raster import Mask2D, TensorCHW, read_mask, read_tensor, write_mask, write_tensor
from .shapley import explain, impute, shapley_weight

_SEED = 20240811


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _groups4() -> ChannelGroupSet:
    g = ChannelGroupSet(6, (("sar", (0, 1)), ("rgb", (2, 3)), ("nir", (4,)), ("aux", (5,))))
    validate_partition(g)
    return g


def _fixtures():
    rng = np.random.default_rng(_SEED)
    x = TensorCHW(rng.uniform(-1.0, 1.0, size=(6, 16, 16)).astype(np.float32))
    pool = [
        TensorCHW(rng.uniform(-1.0, 1.0, size=(6, 16, 16)).astype(np.float32))
        for _ in range(3)
    ]
    weights = rng.normal(size=(3, 6)).astype(np.float32)
    weights[:, 5] = 0.0  # group "aux" is a dummy player for every class
    linear = make_linear_backend(weights, rng.normal(size=3).astype(np.float32))
    kernels = rng.normal(size=(2, 6, 3, 3)).astype(np.float32)
    kernels[:, 5] = 0.0
    conv = make_conv_backend(kernels, rng.normal(size=2).astype(np.float32))
    return x, pool, linear, conv


def _permutation_attributions(backend, x, g, bg, cls: int) -> np.ndarray:
    """Average marginal contributions over all K! orderings (exhaustive)."""
    k = g.k
    phi = np.zeros((k, x.height, x.width), dtype=np.float64)
    for perm in itertools.permutations(range(k)):
        present = 0
        prev = predict(backend, impute(x, present, g, bg)).data[cls].astype(np.float64)
        for gi in perm:
            present |= 1 << gi
            cur = predict(backend, impute(x, present, g, bg)).data[cls].astype(np.float64)
            phi[gi] += cur - prev
            prev = cur
    return phi / math.factorial(k)


def check_efficiency() -> CheckResult:
    x, pool, linear, conv = _fixtures()
    g = _groups4()
    worst = 0.0
    for backend, bg in (
        (linear, compute_background(pool)),
        (conv, background_zeros(6)),
    ):
        a = explain(backend, x, g, bg)
        full = predict(backend, x).data.astype(np.float64)
        empty = predict(backend, impute(x, 0, g, bg)).data.astype(np.float64)
        resid = np.abs(a.values.sum(axis=0) - (full - empty))
        bound = 1e-6 * (1.0 + np.abs(full))
        worst = max(worst, float((resid / bound).max()))
        if not np.all(resid <= bound):
            return CheckResult(
                "efficiency", False, f"residual exceeds bound ({resid.max():.3e})"
            )
    return CheckResult("efficiency", True, f"worst residual at {worst:.2e} of bound")


def check_symmetry() -> CheckResult:
    rng = np.random.default_rng(_SEED + 1)
    base = rng.uniform(-1.0, 1.0, size=(2, 12, 12)).astype(np.float32)
    x = TensorCHW(np.concatenate([base, base], axis=0))  # channels 2,3 mirror 0,1
    w = rng.normal(size=(1, 2)).astype(np.float32)
    weights = np.concatenate([w, w], axis=1)  # identical weights on the mirror
    backend = make_linear_backend(weights, np.zeros(1, dtype=np.float32))
    g = ChannelGroupSet(4, (("a", (0, 1)), ("b", (2, 3))))
    a = explain(backend, x, g, background_zeros(4))
    gap = float(np.abs(a.values[0] - a.values[1]).max())
    return CheckResult("symmetry", gap <= 1e-9, f"max |phi_a - phi_b| = {gap:.2e}")


def check_dummy() -> CheckResult:
    x, pool, linear, conv = _fixtures()
    g = _groups4()
    worst = 0.0
    for backend in (linear, conv):
        a = explain(backend, x, g, compute_background(pool))
        worst = max(worst, float(np.abs(a.values[g.index_of("aux")]).max()))
    return CheckResult("dummy", worst <= 1e-9, f"max |phi_aux| = {worst:.2e}")


def check_permutation_oracle() -> CheckResult:
    rng = np.random.default_rng(_SEED + 2)
    x = TensorCHW(rng.uniform(-1.0, 1.0, size=(4, 8, 8)).astype(np.float32))
    g = ChannelGroupSet(4, (("a", (0,)), ("b", (1,)), ("c", (2, 3))))
    bg = Background(rng.uniform(-0.5, 0.5, size=4).astype(np.float32), "user")
    worst = 0.0
    for backend in (
        make_linear_backend(rng.normal(size=(2, 4)).astype(np.float32), rng.normal(size=2).astype(np.float32)),
        make_conv_backend(rng.normal(size=(2, 4, 3, 3)).astype(np.float32), rng.normal(size=2).astype(np.float32)),
    ):
        a = explain(backend, x, g, bg)
        for pos, cls in enumerate(a.class_ids):
            ref = _permutation_attributions(backend, x, g, bg, cls)
            worst = max(worst, float(np.abs(a.values[:, pos] - ref).max()))
    return CheckResult(
        "permutation-oracle", worst <= 1e-9, f"max deviation = {worst:.2e}"
    )


def check_weight_normalization() -> CheckResult:
    worst = 0.0
    for k in range(1, 11):
        total = math.fsum(
            math.comb(k - 1, s) * shapley_weight(s, k) for s in range(k)
        )
        worst = max(worst, abs(total - 1.0))
    return CheckResult(
        "weight-normalization", worst <= 1e-12, f"max |sum - 1| = {worst:.2e} for K<=10"
    )


def check_format_roundtrip() -> CheckResult:
    rng = np.random.default_rng(_SEED + 3)
    t = TensorCHW(rng.uniform(-5.0, 5.0, size=(3, 7, 5)).astype(np.float32))
    m = Mask2D(rng.integers(0, 4, size=(7, 5)).astype(np.uint8))
    with tempfile.TemporaryDirectory() as d:
        tp = os.path.join(d, "t.adgt")
        mp = os.path.join(d, "m.adgm")
        write_tensor(t, tp)
        write_mask(m, mp)
        t2 = read_tensor(tp)
        m2 = read_mask(mp)
        with open(tp, "rb") as fh:
            raw = fh.read()
        write_tensor(t2, tp)
        with open(tp, "rb") as fh:
            raw2 = fh.read()
    ok = t2 == t and m2 == m and raw == raw2
    return CheckResult("format-roundtrip", ok, "tensor+mask read/write bit-exact")


def check_metric_identities() -> CheckResult:
    # AP by hand: ranking (2, 0, 1) against reference {0, 1} at k = 2.
    if ap_at_k([2, 0, 1], {0, 1}, 2) != 0.25:
        return CheckResult("metric-identities", False, "AP hand value mismatch")
    if ap_at_k([2, 0, 1], {2}, 1) != 1.0:
        return CheckResult("metric-identities", False, "AP hand value mismatch")
    rng = np.random.default_rng(_SEED + 4)
    worst = 0.0
    for _ in range(64):
        tp, fp, fn = (int(v) for v in rng.integers(0, 20, size=3))
        m = segmentation_from_counts(tp, fp, fn)
        if m.f1.defined:
            alg = 2.0 * tp / (2.0 * tp + fp + fn)
            worst = max(worst, abs(m.f1.value - alg))
    return CheckResult(
        "metric-identities", worst <= 1e-12, f"F1 identity gap = {worst:.2e}"
    )


ALL_CHECKS = (
    check_efficiency,
    check_symmetry,
    check_dummy,
    check_permutation_oracle,
    check_weight_normalization,
    check_format_roundtrip,
    check_metric_identities,
)


def run_selfcheck(stream=None) -> int:
    """Run every check, print one line each, return a process exit code."""
    out = stream if stream is not None else io.StringIO()
    failed = 0
    for check in ALL_CHECKS:
        result = check()
        status = "ok " if result.passed else "FAIL"
        print(f"{status} {result.name}: {result.detail}", file=out)
        if not result.passed:
            failed += 1
    print(
        f"{len(ALL_CHECKS) - failed}/{len(ALL_CHECKS)} checks passed", file=out
    )
    return 0 if failed == 0 else 1
