"""Declarative per-pixel reference explanations.

A rule is a conjunction of pixel predicates plus the set of channel groups
that domain knowledge holds responsible wherever the conjunction is true.
Rules are ordered; when several match the same pixel the LAST one wins, so a
later, more specific rule refines an earlier general one. Alignment scoring
can either respect that exclusive assignment or score every rule over all
pixels matching it, independently of the others (the default elsewhere).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatch,
    MissingContext,
    SchemaError,
    UnknownBand,
    UnknownClass,
    UnknownGroup,
    UnknownMask,
)
from .groups import ChannelGroupSet
from .raster import Mask2D

CONFUSION_KINDS = ("TP", "FP", "FN", "TN")


@dataclass(frozen=True)
class InMask:
    mask: str


@dataclass(frozen=True)
class InConfusion:
    cls: int
    kind: str  # TP | FP | FN | TN


def in_tp(cls: int) -> InConfusion:
    return InConfusion(cls, "TP")


@dataclass(frozen=True)
class BandThreshold:
    band: str
    threshold: np.float32
    below: bool  # True: value < threshold; False: value >= threshold


@dataclass(frozen=True)
class Rule:
    name: str
    conditions: tuple
    reference: tuple  # sorted group indices
    reference_names: tuple


@dataclass(frozen=True)
class RuleSet:
    rules: tuple
    group_names: tuple

    @property
    def names(self) -> tuple:
        return tuple(r.name for r in self.rules)


@dataclass(frozen=True)
class ConfusionMasks:
    """TP/FP/FN/TN quadruple for one class over the valid region."""

    tp: Mask2D
    fp: Mask2D
    fn: Mask2D
    tn: Mask2D

    @property
    def counts(self) -> tuple:
        return (
            int(self.tp.data.sum()),
            int(self.fp.data.sum()),
            int(self.fn.data.sum()),
            int(self.tn.data.sum()),
        )


def confusion_masks(
    label: Mask2D, pred: Mask2D, cls: int, valid: Mask2D
) -> ConfusionMasks:
    """Partition the valid pixels of one class into TP/FP/FN/TN masks."""
    shape = label.data.shape
    if pred.data.shape != shape or valid.data.shape != shape:
        raise DimMismatch(shape, (pred.data.shape, valid.data.shape), "mask dims")
    valid.require_binary()
    v = valid.data == 1
    is_label = label.data == cls
    is_pred = pred.data == cls
    tp = v & is_label & is_pred
    fp = v & ~is_label & is_pred
    fn = v & is_label & ~is_pred
    tn = v & ~is_label & ~is_pred
    return ConfusionMasks(
        Mask2D(tp.astype(np.uint8)),
        Mask2D(fp.astype(np.uint8)),
        Mask2D(fn.astype(np.uint8)),
        Mask2D(tn.astype(np.uint8)),
    )


# --- parsing ----------------------------------------------------------------------


def _resolve_class(value, class_names, where: str) -> int:
    if isinstance(value, bool):
        raise SchemaError(where, "expected class id or name")
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        if class_names is None:
            raise SchemaError(where, "class names require a class_names table")
        try:
            return class_names.index(value)
        except ValueError:
            raise UnknownClass(value) from None
    raise SchemaError(where, "expected class id or name")


def parse_rules(
    text: str,
    g: ChannelGroupSet,
    *,
    class_names=None,
    known_masks=None,
    known_bands=None,
) -> RuleSet:
    """Parse the JSON rule document against a validated group set.

    Mask and band identifiers are checked against known_masks/known_bands
    when those are supplied; otherwise unknown identifiers surface later as
    MissingContext during assignment.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("rules"), list):
        raise SchemaError("$", "expected an object with a rules list")
    if not doc["rules"]:
        raise SchemaError("$.rules", "expected at least one rule")

    rules = []
    seen = set()
    for ri, entry in enumerate(doc["rules"]):
        where = f"$.rules[{ri}]"
        if not isinstance(entry, dict):
            raise SchemaError(where, "expected an object")
        name = entry.get("name")
        if not isinstance(name, str) or not name:
            raise SchemaError(f"{where}.name", "expected a nonempty string")
        if name in seen:
            raise SchemaError(f"{where}.name", f"duplicate rule name {name!r}")
        seen.add(name)

        raw_when = entry.get("when")
        if not isinstance(raw_when, list) or not raw_when:
            raise SchemaError(f"{where}.when", "expected a nonempty predicate list")
        conditions = []
        for pi, p in enumerate(raw_when):
            pwhere = f"{where}.when[{pi}]"
            if not isinstance(p, dict):
                raise SchemaError(pwhere, "expected a predicate object")
            kind = p.get("pred")
            if kind == "in_mask":
                mask = p.get("mask")
                if not isinstance(mask, str):
                    raise SchemaError(f"{pwhere}.mask", "expected a mask id")
                if known_masks is not None and mask not in known_masks:
                    raise UnknownMask(mask)
                conditions.append(InMask(mask))
            elif kind == "in_tp":
                cls = _resolve_class(p.get("class"), class_names, f"{pwhere}.class")
                conditions.append(in_tp(cls))
            elif kind == "in_confusion":
                cls = _resolve_class(p.get("class"), class_names, f"{pwhere}.class")
                which = p.get("kind")
                if which not in CONFUSION_KINDS:
                    raise SchemaError(f"{pwhere}.kind", "expected TP|FP|FN|TN")
                conditions.append(InConfusion(cls, which))
            elif kind in ("band_below", "band_at_least"):
                band = p.get("band")
                if not isinstance(band, str):
                    raise SchemaError(f"{pwhere}.band", "expected a band id")
                if known_bands is not None and band not in known_bands:
                    raise UnknownBand(band)
                thr = p.get("threshold")
                if not isinstance(thr, (int, float)) or isinstance(thr, bool):
                    raise SchemaError(f"{pwhere}.threshold", "expected a number")
                conditions.append(
                    BandThreshold(band, np.float32(thr), kind == "band_below")
                )
            else:
                raise SchemaError(f"{pwhere}.pred", f"unknown predicate {kind!r}")

        raw_ref = entry.get("reference")
        if not isinstance(raw_ref, list) or not raw_ref:
            raise SchemaError(f"{where}.reference", "expected a nonempty group list")
        ref_idx = []
        for gname in raw_ref:
            try:
                ref_idx.append(g.index_of(gname))
            except KeyError:
                raise UnknownGroup(gname) from None
        ref_idx = tuple(sorted(set(ref_idx)))
        names = tuple(g.names[i] for i in ref_idx)
        rules.append(Rule(name, tuple(conditions), ref_idx, names))

    return RuleSet(tuple(rules), g.names)


# --- evaluation ----------------------------------------------------------------------


@dataclass(frozen=True)
class RuleContext:
    """Everything predicates can look at, all on one pixel grid."""

    height: int
    width: int
    masks: dict  # id -> Mask2D (binary role)
    confusion: dict  # class id -> ConfusionMasks
    bands: dict  # id -> 2-D float array (raw, unnormalized values)

    def __post_init__(self):
        shape = (self.height, self.width)
        for mid, m in self.masks.items():
            if m.data.shape != shape:
                raise DimMismatch(shape, m.data.shape, f"mask {mid!r} dims")
        for cls, cm in self.confusion.items():
            if cm.tp.data.shape != shape:
                raise DimMismatch(shape, cm.tp.data.shape, f"confusion[{cls}] dims")
        for bid, arr in self.bands.items():
            if arr.shape != shape:
                raise DimMismatch(shape, arr.shape, f"band {bid!r} dims")


def _predicate_mask(p, ctx: RuleContext) -> np.ndarray:
    if isinstance(p, InMask):
        if p.mask not in ctx.masks:
            raise MissingContext(f"mask:{p.mask}")
        return ctx.masks[p.mask].require_binary().data == 1
    if isinstance(p, InConfusion):
        if p.cls not in ctx.confusion:
            raise MissingContext(f"confusion:{p.cls}")
        cm = ctx.confusion[p.cls]
        quad = {"TP": cm.tp, "FP": cm.fp, "FN": cm.fn, "TN": cm.tn}
        return quad[p.kind].data == 1
    if isinstance(p, BandThreshold):
        if p.band not in ctx.bands:
            raise MissingContext(f"band:{p.band}")
        values = ctx.bands[p.band]
        return values < p.threshold if p.below else values >= p.threshold
    raise TypeError(f"unknown predicate {p!r}")


@dataclass(frozen=True)
class ReferenceAssignment:
    """Which rule(s) matched each pixel, and each rule's reference set.

    `matches[r]` holds rule r's full population (independent of other rules);
    `rule_index` is the exclusive last-match-wins assignment, -1 where no
    rule matched.
    """

    rule_names: tuple
    references: tuple  # per rule: tuple of group indices
    matches: np.ndarray  # (R, H, W) bool
    rule_index: np.ndarray  # (H, W) int16, -1 = unassigned

    def population(self, r: int, mode: str = "independent") -> np.ndarray:
        if mode == "independent":
            return self.matches[r]
        if mode == "exclusive":
            return self.rule_index == r
        raise SchemaError("mode", f"expected independent|exclusive, got {mode!r}")


def assign_references(rules: RuleSet, ctx: RuleContext) -> ReferenceAssignment:
    """Evaluate every rule over the context grid."""
    k = len(rules.group_names)
    matches = np.zeros((len(rules.rules), ctx.height, ctx.width), dtype=bool)
    for ri, rule in enumerate(rules.rules):
        if any(i < 0 or i >= k for i in rule.reference):
            raise UnknownGroup(str(rule.reference))
        hit = np.ones((ctx.height, ctx.width), dtype=bool)
        for p in rule.conditions:
            hit &= _predicate_mask(p, ctx)
        matches[ri] = hit

    rule_index = np.full((ctx.height, ctx.width), -1, dtype=np.int16)
    for ri in range(len(rules.rules)):
        rule_index[matches[ri]] = ri

    return ReferenceAssignment(
        rules.names,
        tuple(r.reference for r in rules.rules),
        matches,
        rule_index,
    )
