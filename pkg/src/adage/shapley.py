"""Exact channel-group Shapley attribution under expected-value imputation.

A coalition is a bitmask over the K group indices (bit k set = group k
present). The value function is the model's logit map on the input with all
absent groups' channels replaced by their background means. Attributions are
computed by enumerating all 2^K coalitions once and accumulating each
prediction into every group's total with the classic +/- factorial weights:
a coalition T contributes +w(|T|-1) to groups inside T and -w(|T|) to groups
outside it, which is the subset-sum form reorganized so each prediction is
visited exactly once.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .backends import Background, predict
from .errors import DimMismatch, InvalidSize, SchemaError, TooManyGroups
from .groups import ChannelGroupSet, validate_partition
from .raster import Mask2D, TensorCHW, read_tensor, write_tensor

MAX_GROUPS = 20
MCCG_SENTINEL = 255


def full_coalition(k: int) -> int:
    return (1 << k) - 1


def shapley_weight(s_size: int, k: int) -> float:
    """Coefficient |S|! (K-|S|-1)! / K! as an exactly computed ratio."""
    if s_size < 0 or s_size > k - 1:
        raise InvalidSize(s_size, k)
    num = math.factorial(s_size) * math.factorial(k - s_size - 1)
    return num / math.factorial(k)


def impute(
    x: TensorCHW, coalition: int, g: ChannelGroupSet, bg: Background
) -> TensorCHW:
    """Input with absent groups' channels replaced by their expected values."""
    if x.channels != g.total_channels:
        raise DimMismatch(g.total_channels, x.channels, "input channels")
    if bg.channels != x.channels:
        raise DimMismatch(x.channels, bg.channels, "background channels")
    data = np.empty_like(x.data)
    for k, (_, members) in enumerate(g.groups):
        idx = list(members)
        if coalition >> k & 1:
            data[idx] = x.data[idx]
        else:
            data[idx] = bg.mu[idx, None, None]
    return TensorCHW(data)


@dataclass(frozen=True)
class AttributionMap:
    """Per-group, per-class, per-pixel Shapley values, accumulated in f64."""

    values: np.ndarray  # (K, len(class_ids), H, W) f64
    group_names: tuple
    class_ids: tuple
    background_provenance: str

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[2]

    @property
    def width(self) -> int:
        return self.values.shape[3]

    def class_position(self, cls: int) -> int:
        try:
            return self.class_ids.index(cls)
        except ValueError:
            raise DimMismatch(self.class_ids, cls, "explained classes") from None


def explain(
    backend, x: TensorCHW, g: ChannelGroupSet, bg: Background, classes="all"
) -> AttributionMap:
    """Exact channel-group Shapley values for every selected output class.

    Makes exactly 2^K backend calls, one per coalition, independent of K or
    the number of classes; aborts without partial output on backend failure.
    """
    validate_partition(g)
    if g.k > MAX_GROUPS:
        raise TooManyGroups(g.k, MAX_GROUPS)
    if x.channels != g.total_channels:
        raise DimMismatch(g.total_channels, x.channels, "input channels")

    if classes == "all":
        class_ids = tuple(range(backend.n_class))
    else:
        class_ids = tuple(int(c) for c in classes)
        for c in class_ids:
            if c < 0 or c >= backend.n_class:
                raise DimMismatch(f"class < {backend.n_class}", c, "class selection")

    k = g.k
    weights = [shapley_weight(m, k) for m in range(k)]
    sel = np.asarray(class_ids)
    phi = np.zeros((k, len(class_ids), x.height, x.width), dtype=np.float64)

    for coalition in range(1 << k):
        y = predict(backend, impute(x, coalition, g, bg))
        logits = y.data[sel].astype(np.float64)
        size = coalition.bit_count()
        for gi in range(k):
            if coalition >> gi & 1:
                phi[gi] += weights[size - 1] * logits
            else:
                phi[gi] -= weights[size] * logits

    return AttributionMap(phi, g.names, class_ids, bg.provenance)


@dataclass(frozen=True)
class GroupRanking:
    """Per-pixel permutation of group indices, best-contributing first."""

    order: np.ndarray  # (K, H, W) int16; order[0] is the top group
    values: np.ndarray  # (K, H, W) f64, aligned with group index (not rank)
    group_names: tuple

    @property
    def k(self) -> int:
        return self.order.shape[0]


def rank_groups(a: AttributionMap, cls_map: Mask2D, by: str = "signed") -> GroupRanking:
    """Rank groups per pixel by their contribution to that pixel's class.

    Descending by signed value (or |value| with by="absolute"); ties broken
    by ascending group index. Single-logit models accept a 0/1 class map and
    always rank against the lone logit.
    """
    if by not in ("signed", "absolute"):
        raise SchemaError("rank_by", f"expected signed|absolute, got {by!r}")
    if (cls_map.height, cls_map.width) != (a.height, a.width):
        raise DimMismatch(
            (a.height, a.width), (cls_map.height, cls_map.width), "class map dims"
        )
    if len(a.class_ids) == 1:
        positions = np.zeros((a.height, a.width), dtype=np.intp)
    else:
        lut = np.full(256, -1, dtype=np.intp)
        for pos, cls in enumerate(a.class_ids):
            lut[cls] = pos
        positions = lut[cls_map.data]
        if (positions < 0).any():
            bad = int(cls_map.data[positions < 0][0])
            raise DimMismatch(a.class_ids, bad, "explained classes")

    idx = positions[None, None, :, :]
    selected = np.take_along_axis(a.values, idx, axis=1)[:, 0]
    key = np.abs(selected) if by == "absolute" else selected
    order = np.argsort(-key, axis=0, kind="stable").astype(np.int16)
    return GroupRanking(order, selected, a.group_names)


def mccg_map(r: GroupRanking, eligible: Mask2D) -> Mask2D:
    """Most-contributed-group index per eligible pixel, 255 elsewhere."""
    if (eligible.height, eligible.width) != r.order.shape[1:]:
        raise DimMismatch(
            r.order.shape[1:], (eligible.height, eligible.width), "eligibility dims"
        )
    eligible.require_binary()
    top = r.order[0].astype(np.uint8)
    out = np.where(eligible.data == 1, top, np.uint8(MCCG_SENTINEL))
    return Mask2D(out)


# --- serialization -------------------------------------------------------------


def save_attribution(a: AttributionMap, out_dir, stem: str) -> list:
    """One ADGT tensor (K channels, f32) per class, each with a JSON sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for pos, cls in enumerate(a.class_ids):
        base = os.path.join(out_dir, f"{stem}_cls{cls}")
        write_tensor(TensorCHW(a.values[:, pos].astype(np.float32)), base + ".adgt")
        sidecar = {
            "groups": list(a.group_names),
            "class": cls,
            "background": a.background_provenance,
        }
        with open(base + ".json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2)
            fh.write("\n")
        written.append(base + ".adgt")
    return written


def load_attribution(paths) -> AttributionMap:
    """Rebuild an AttributionMap from per-class ADGT files and sidecars."""
    planes = []
    class_ids = []
    names = None
    provenance = None
    for path in paths:
        t = read_tensor(path)
        base, _ = os.path.splitext(path)
        with open(base + ".json", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        if names is None:
            names = tuple(sidecar["groups"])
            provenance = sidecar["background"]
        elif tuple(sidecar["groups"]) != names:
            raise SchemaError(base + ".json", "sidecar group lists disagree")
        if t.channels != len(names):
            raise DimMismatch(len(names), t.channels, "group channels")
        planes.append(t.data.astype(np.float64))
        class_ids.append(int(sidecar["class"]))
    if not planes:
        raise SchemaError("$", "no attribution files given")
    values = np.stack(planes, axis=1)
    return AttributionMap(values, names, tuple(class_ids), provenance)
