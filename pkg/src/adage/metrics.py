"""Alignment and segmentation metrics.

Average precision here is a rank metric over the K channel groups at one
pixel: walk the ranking from position 1, and each time a reference group
appears at position i, add precision-at-i = (reference groups seen so far)/i.
The sum, divided by min(|G|, k), is AP@k. The arithmetic order is part of
the definition: terms are accumulated left-to-right in increasing i, and
per-image aggregation uses exactly rounded summation (math.fsum), so the
mean AP of a pixel population does not depend on pixel order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadBinEdges,
    DimMismatch,
    EmptyEligibleSet,
    EmptyReference,
    NoAssignedPixels,
    RankOutOfRange,
    RoleViolation,
    SchemaError,
)
from .raster import Mask2D
from .rules import ConfusionMasks, ReferenceAssignment
from .shapley import MCCG_SENTINEL, GroupRanking

# --- average precision ----------------------------------------------------------------------


def precision_at(ranked: list, reference, i: int) -> float:
    """Fraction of the first i ranked groups that are reference groups."""
    ref = frozenset(reference)
    if not ref:
        raise EmptyReference()
    if i < 1 or i > len(ranked):
        raise RankOutOfRange(i, len(ranked))
    hits = sum(1 for gidx in ranked[:i] if gidx in ref)
    return hits / i


def ap_at_k(ranked: list, reference, k: int) -> float:
    """AP@k for a single pixel's group ranking (scalar reference form)."""
    ref = frozenset(reference)
    if not ref:
        raise EmptyReference()
    if k < 1 or k > len(ranked):
        raise RankOutOfRange(k, len(ranked))
    hits = 0
    total = 0.0
    for i in range(1, k + 1):
        if ranked[i - 1] in ref:
            hits += 1
            total = total + hits / i
    return total / min(len(ref), k)


def _ap_grid(order: np.ndarray, reference, k: int) -> np.ndarray:
    """AP@k at every pixel, same arithmetic order as the scalar form."""
    n_groups = order.shape[0]
    lut = np.zeros(n_groups, dtype=bool)
    lut[list(reference)] = True
    member = lut[order]  # (K, H, W)
    hits = np.cumsum(member, axis=0, dtype=np.float64)
    total = np.zeros(order.shape[1:], dtype=np.float64)
    for i in range(1, k + 1):
        total = total + np.where(member[i - 1], hits[i - 1] / float(i), 0.0)
    return total / float(min(len(reference), k))


def parse_k_policy(policy) -> tuple:
    """Normalize a cutoff policy to ("paper", None) or ("fixed", k)."""
    if policy == "paper":
        return ("paper", None)
    if isinstance(policy, int) and not isinstance(policy, bool):
        return ("fixed", policy)
    if isinstance(policy, str) and policy.startswith("fixed:"):
        try:
            return ("fixed", int(policy[len("fixed:"):]))
        except ValueError:
            pass
    raise SchemaError("k_policy", f"expected paper or fixed:<k>, got {policy!r}")


@dataclass(frozen=True)
class RuleScore:
    """Alignment of one rule's population against its reference set."""

    rule: str
    n: int
    k: int
    ap_sum: float
    map: float
    ap_min: float
    ap_mean: float
    ap_max: float
    ap_std: float


def score_from_values(rule: str, k: int, ap_values: np.ndarray) -> RuleScore:
    """Pool per-pixel AP values (possibly gathered across tiles) into a score."""
    n = int(ap_values.size)
    if n == 0:
        raise NoAssignedPixels(rule)
    ap_sum = math.fsum(ap_values)
    mean = ap_sum / n
    var = math.fsum((v - mean) ** 2 for v in ap_values) / n
    return RuleScore(
        rule=rule,
        n=n,
        k=k,
        ap_sum=ap_sum,
        map=mean,
        ap_min=float(ap_values.min()),
        ap_mean=mean,
        ap_max=float(ap_values.max()),
        ap_std=math.sqrt(var),
    )


def rule_alignment(
    ranking: GroupRanking,
    population: np.ndarray,
    reference,
    k: int,
    *,
    rule: str = "",
) -> RuleScore:
    """Score one pixel population against one reference set."""
    n_groups = len(ranking.group_names)
    if not reference:
        raise EmptyReference()
    if k < 1 or k > n_groups:
        raise RankOutOfRange(k, n_groups)
    if population.shape != ranking.order.shape[1:]:
        raise DimMismatch(ranking.order.shape[1:], population.shape, "population dims")
    if not population.any():
        raise NoAssignedPixels(rule)
    ap = _ap_grid(ranking.order, reference, k)[population]
    return score_from_values(rule, k, ap)


def map_at_k(
    ranking: GroupRanking,
    assignment: ReferenceAssignment,
    k_policy="paper",
    *,
    mode: str = "independent",
) -> tuple:
    """Score every rule; raises NoAssignedPixels on an empty population."""
    kind, fixed_k = parse_k_policy(k_policy)
    scores = []
    for ri, name in enumerate(assignment.rule_names):
        reference = assignment.references[ri]
        k = len(reference) if kind == "paper" else fixed_k
        population = assignment.population(ri, mode)
        scores.append(rule_alignment(ranking, population, reference, k, rule=name))
    return tuple(scores)


# --- segmentation quality ----------------------------------------------------------------------


@dataclass(frozen=True)
class MetricValue:
    """A ratio metric, or an explicit record of why it is undefined."""

    value: float | None
    undefined_reason: str | None = None

    @property
    def defined(self) -> bool:
        return self.value is not None

    def percent(self) -> float | None:
        return None if self.value is None else 100.0 * self.value


def _defined(x: float) -> MetricValue:
    return MetricValue(x)


def _undefined(reason: str) -> MetricValue:
    return MetricValue(None, reason)


@dataclass(frozen=True)
class SegmentationMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    iou: MetricValue
    precision: MetricValue
    recall: MetricValue
    f1: MetricValue


def segmentation_from_counts(tp: int, fp: int, fn: int, tn: int = 0) -> SegmentationMetrics:
    iou = (
        _defined(tp / (tp + fp + fn))
        if tp + fp + fn > 0
        else _undefined("class absent from both label and prediction")
    )
    precision = (
        _defined(tp / (tp + fp)) if tp + fp > 0 else _undefined("no predicted positives")
    )
    recall = (
        _defined(tp / (tp + fn)) if tp + fn > 0 else _undefined("no actual positives")
    )
    if precision.defined and recall.defined:
        p, r = precision.value, recall.value
        f1 = _defined(2.0 * p * r / (p + r)) if p + r > 0 else _defined(0.0)
    else:
        f1 = _undefined("precision or recall undefined")
    return SegmentationMetrics(tp, fp, fn, tn, iou, precision, recall, f1)


def segmentation_metrics(cm: ConfusionMasks) -> SegmentationMetrics:
    tp, fp, fn, tn = cm.counts
    return segmentation_from_counts(tp, fp, fn, tn)


# --- most-contributing-group summaries ----------------------------------------------------------------------


def _eligible_values(mccg: Mask2D, k: int) -> np.ndarray:
    values = mccg.data
    eligible = values != MCCG_SENTINEL
    bad = values[eligible]
    if bad.size and int(bad.max()) >= k:
        raise RoleViolation(int(bad.max()), f"mccg group index < {k}")
    return eligible


def mccg_proportions(mccg: Mask2D, k: int) -> tuple:
    """Per-group share of eligible pixels; returns (counts, fractions)."""
    eligible = _eligible_values(mccg, k)
    total = int(eligible.sum())
    if total == 0:
        raise EmptyEligibleSet()
    counts = np.bincount(mccg.data[eligible], minlength=k).astype(np.int64)
    return counts, counts / float(total)


def band_histogram(mccg: Mask2D, k: int, band_values: np.ndarray, edges) -> np.ndarray:
    """Histogram of a raw band per most-contributing group.

    Bin b covers [edges[b], edges[b+1]); values outside the edge range are
    counted in the nearest end bin. Returns an int64 (k, len(edges)-1) table.
    """
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or not np.all(np.isfinite(edges)):
        raise BadBinEdges(edges.tolist())
    if not np.all(np.diff(edges) > 0):
        raise BadBinEdges(edges.tolist())
    if band_values.shape != mccg.data.shape:
        raise DimMismatch(mccg.data.shape, band_values.shape, "band dims")
    eligible = _eligible_values(mccg, k)
    if not eligible.any():
        raise EmptyEligibleSet()
    n_bins = edges.size - 1
    bins = np.searchsorted(edges, band_values[eligible], side="right") - 1
    bins = np.clip(bins, 0, n_bins - 1)
    counts = np.zeros((k, n_bins), dtype=np.int64)
    np.add.at(counts, (mccg.data[eligible], bins), 1)
    return counts
