"""Manifest-driven orchestration: load, predict, explain, score, report.

A run manifest is a JSON file; every relative path inside it resolves
against the manifest's own directory. Shape:

    {
      "inputs": ["scene_a.adgt", "scene_b.adgt"],   // or "input": "one.adgt"
      "labels": ["label_a.adgm", "label_b.adgm"],   // optional for explain
      "valid": "valid.adgm",                        // optional, default all-valid
      "masks": {"cloud": "cloud.adgm"},             // rule-context masks
      "bands": {"NIR": {"path": "scene_a.adgt", "channel": 5}},
      "groups": "groups.json",
      "rules": "rules.json",                        // required for evaluate
      "class_names": ["land", "water"],             // optional
      "backend": {"kind": "linear", "params": "backend.json"}
                 // or {"kind": "subprocess", "argv": [...], "n_class": 2}
      "background": {"kind": "dataset-mean"},       // zeros | dataset-mean | values
      "out": "out",
      "seed": 7,                                    // recorded, unused by the core
      "options": {"rank_by": "signed", "k_policy": "paper",
                  "scoring": "independent", "explained_class": 1,
                  "classes": "all", "tile": null, "jobs": 1,
                  "mccg_restrict": "cloud",
                  "bins": {"band": "NIR", "edges": [0.0, 0.1, 0.2, 0.3]}}
    }

Large scenes are processed in square tiles; per-tile AP values and confusion
counts are pooled and normalized once at the end, never averaged per tile.
Report JSON is byte-deterministic for a given manifest; wall-clock metadata
goes to a separate file.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .backends import (
    background_from_values,
    background_zeros,
    compute_background,
    load_backend_params,
    make_subprocess_backend,
    predict,
    predicted_classes,
)
from .errors import AdageError, ManifestError, NoAssignedPixels
from .groups import ChannelGroupSet, parse_groups_config
from .metrics import (
    _ap_grid,
    band_histogram,
    mccg_proportions,
    parse_k_policy,
    score_from_values,
    segmentation_from_counts,
)
from .raster import Mask2D, read_mask, read_tensor, write_mask, write_pgm
from .rules import (
    InConfusion,
    RuleContext,
    assign_references,
    confusion_masks,
    parse_rules,
)
from .shapley import (
    MCCG_SENTINEL,
    AttributionMap,
    explain,
    mccg_map,
    rank_groups,
    save_attribution,
)

log = logging.getLogger("adage.pipeline")


# --- manifest ----------------------------------------------------------------------

_TOP_KEYS = {
    "inputs", "input", "labels", "label", "valid", "masks", "bands",
    "groups", "rules", "class_names", "backend", "background", "out",
    "seed", "options",
}
_OPTION_KEYS = {
    "rank_by", "k_policy", "scoring", "explained_class", "classes",
    "tile", "jobs", "mccg_restrict", "bins",
}


@dataclass(frozen=True)
class BackendSpec:
    kind: str  # linear | conv | subprocess
    params_path: str | None = None
    argv: tuple = ()
    n_class: int | None = None
    timeout: float = 30.0

    def describe(self) -> str:
        if self.kind == "subprocess":
            return "subprocess: " + " ".join(self.argv)
        return f"builtin {self.kind}: {self.params_path}"


@dataclass(frozen=True)
class BackgroundSpec:
    kind: str  # zeros | dataset-mean | values
    pool: tuple = ()  # resolved paths; empty = pool the run inputs
    values: tuple = ()


@dataclass(frozen=True)
class RunInput:
    run_id: str
    input_path: str
    label_path: str | None


@dataclass(frozen=True)
class Options:
    rank_by: str = "signed"
    k_policy: str = "paper"
    scoring: str = "independent"
    explained_class: int = 1
    classes: object = "all"  # "all" or a tuple of class ids
    tile: int | None = None
    jobs: int = 1
    mccg_restrict: str | None = None
    bins_band: str | None = None
    bins_edges: tuple = ()


@dataclass(frozen=True)
class RunManifest:
    path: str
    base_dir: str
    inputs: tuple  # of RunInput
    valid_path: str | None
    mask_paths: dict
    band_specs: dict  # id -> (tensor path, channel)
    groups: ChannelGroupSet
    rules_text: str | None
    class_names: tuple | None
    backend: BackendSpec
    background: BackgroundSpec
    out_dir: str
    options: Options
    seed: int | None


def _resolve(base: str, p: str) -> str:
    return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))


def _require_file(path: str, manifest_path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise ManifestError(manifest_path, f"{what} not found: {path}")
    return path


def _as_list(doc: dict, plural: str, singular: str):
    if plural in doc and singular in doc:
        raise ManifestError("", f"give either {plural!r} or {singular!r}, not both")
    if plural in doc:
        value = doc[plural]
        if not isinstance(value, list) or not value:
            raise ManifestError("", f"{plural!r} must be a nonempty list")
        return value
    if singular in doc:
        return [doc[singular]]
    return []


def _run_ids(paths) -> list:
    stems = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    ids = []
    for i, stem in enumerate(stems):
        ids.append(stem if stems.count(stem) == 1 else f"{stem}.{i}")
    return ids


def parse_manifest(
    path: str,
    *,
    out_override: str | None = None,
    rank_by: str | None = None,
    k_policy: str | None = None,
    jobs: int | None = None,
) -> RunManifest:
    """Parse and validate a manifest; CLI flags override manifest options."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ManifestError(path, f"cannot read manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(path, f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError(path, "manifest must be a JSON object")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise ManifestError(path, f"unknown manifest keys: {unknown}")
    base = os.path.dirname(os.path.abspath(path))

    try:
        raw_inputs = _as_list(doc, "inputs", "input")
        raw_labels = _as_list(doc, "labels", "label")
    except ManifestError as exc:
        raise ManifestError(path, exc.reason) from None
    if not raw_inputs:
        raise ManifestError(path, "at least one input tensor is required")
    if raw_labels and len(raw_labels) != len(raw_inputs):
        raise ManifestError(path, "labels must pair one-to-one with inputs")
    input_paths = [
        _require_file(_resolve(base, p), path, "input tensor") for p in raw_inputs
    ]
    label_paths = [
        _require_file(_resolve(base, p), path, "label mask") for p in raw_labels
    ]
    runs = tuple(
        RunInput(rid, ip, label_paths[i] if label_paths else None)
        for i, (rid, ip) in enumerate(zip(_run_ids(input_paths), input_paths))
    )

    valid_path = None
    if doc.get("valid") is not None:
        valid_path = _require_file(_resolve(base, doc["valid"]), path, "valid mask")

    mask_paths = {}
    for mid, p in (doc.get("masks") or {}).items():
        mask_paths[mid] = _require_file(_resolve(base, p), path, f"mask {mid!r}")

    band_specs = {}
    for bid, spec in (doc.get("bands") or {}).items():
        if isinstance(spec, str):
            spec = {"path": spec, "channel": 0}
        if not isinstance(spec, dict) or "path" not in spec:
            raise ManifestError(path, f"band {bid!r} needs a path")
        channel = spec.get("channel", 0)
        if not isinstance(channel, int) or channel < 0:
            raise ManifestError(path, f"band {bid!r} channel must be a nonneg int")
        band_specs[bid] = (
            _require_file(_resolve(base, spec["path"]), path, f"band {bid!r}"),
            channel,
        )

    if "groups" not in doc:
        raise ManifestError(path, "groups config is required")
    groups_path = _require_file(_resolve(base, doc["groups"]), path, "groups config")
    with open(groups_path, "r", encoding="utf-8") as fh:
        groups = parse_groups_config(fh.read())

    rules_text = None
    if doc.get("rules") is not None:
        rules_path = _require_file(_resolve(base, doc["rules"]), path, "rules config")
        with open(rules_path, "r", encoding="utf-8") as fh:
            rules_text = fh.read()

    class_names = None
    if doc.get("class_names") is not None:
        raw = doc["class_names"]
        if not isinstance(raw, list) or not all(isinstance(s, str) for s in raw):
            raise ManifestError(path, "class_names must be a list of strings")
        class_names = tuple(raw)

    backend = _parse_backend(doc.get("backend"), base, path)
    background = _parse_background(doc.get("background"), base, path)
    options = _parse_options(doc.get("options") or {}, path)
    if rank_by is not None:
        options = dataclasses.replace(options, rank_by=rank_by)
    if k_policy is not None:
        options = dataclasses.replace(options, k_policy=k_policy)
    if jobs is not None:
        options = dataclasses.replace(options, jobs=jobs)
    parse_k_policy(options.k_policy)  # fail fast on a bad policy string
    if options.rank_by not in ("signed", "absolute"):
        raise ManifestError(path, f"rank_by must be signed|absolute, got {options.rank_by!r}")
    if options.scoring not in ("independent", "exclusive"):
        raise ManifestError(path, f"scoring must be independent|exclusive")
    if options.mccg_restrict is not None and options.mccg_restrict not in mask_paths:
        raise ManifestError(path, f"mccg_restrict names unknown mask {options.mccg_restrict!r}")
    if options.bins_band is not None and options.bins_band not in band_specs:
        raise ManifestError(path, f"bins.band names unknown band {options.bins_band!r}")

    out_dir = out_override if out_override is not None else doc.get("out", "out")
    out_dir = _resolve(base, out_dir) if out_override is None else os.path.abspath(out_dir)

    seed = doc.get("seed")
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        raise ManifestError(path, "seed must be an integer")

    return RunManifest(
        path=os.path.abspath(path),
        base_dir=base,
        inputs=runs,
        valid_path=valid_path,
        mask_paths=mask_paths,
        band_specs=band_specs,
        groups=groups,
        rules_text=rules_text,
        class_names=class_names,
        backend=backend,
        background=background,
        out_dir=out_dir,
        options=options,
        seed=seed,
    )


def _parse_options(raw: dict, path: str) -> Options:
    if not isinstance(raw, dict):
        raise ManifestError(path, "options must be an object")
    unknown = sorted(set(raw) - _OPTION_KEYS)
    if unknown:
        raise ManifestError(path, f"unknown option keys: {unknown}")
    classes = raw.get("classes", "all")
    if classes != "all":
        if not isinstance(classes, list) or not all(
            isinstance(c, int) and not isinstance(c, bool) for c in classes
        ):
            raise ManifestError(path, "options.classes must be \"all\" or a list of ints")
        classes = tuple(classes)
    tile = raw.get("tile")
    if tile is not None and (not isinstance(tile, int) or tile < 1):
        raise ManifestError(path, "options.tile must be a positive integer")
    jobs = raw.get("jobs", 1)
    if not isinstance(jobs, int) or jobs < 1:
        raise ManifestError(path, "options.jobs must be a positive integer")
    explained = raw.get("explained_class", 1)
    if not isinstance(explained, int) or isinstance(explained, bool) or explained < 0:
        raise ManifestError(path, "options.explained_class must be a nonneg int")
    bins_band, bins_edges = None, ()
    if raw.get("bins") is not None:
        bins = raw["bins"]
        if not isinstance(bins, dict) or "band" not in bins or "edges" not in bins:
            raise ManifestError(path, "options.bins needs band and edges")
        bins_band = bins["band"]
        edges = bins["edges"]
        if not isinstance(edges, list) or len(edges) < 2:
            raise ManifestError(path, "options.bins.edges needs at least two edges")
        bins_edges = tuple(float(e) for e in edges)
    return Options(
        rank_by=raw.get("rank_by", "signed"),
        k_policy=raw.get("k_policy", "paper"),
        scoring=raw.get("scoring", "independent"),
        explained_class=explained,
        classes=classes,
        tile=tile,
        jobs=jobs,
        mccg_restrict=raw.get("mccg_restrict"),
        bins_band=bins_band,
        bins_edges=bins_edges,
    )


def _parse_backend(raw, base: str, path: str) -> BackendSpec:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ManifestError(path, "backend spec with a kind is required")
    kind = raw["kind"]
    if kind in ("linear", "conv"):
        if "params" not in raw:
            raise ManifestError(path, f"{kind} backend needs a params file")
        params = _require_file(_resolve(base, raw["params"]), path, "backend params")
        return BackendSpec(kind=kind, params_path=params)
    if kind == "subprocess":
        argv = raw.get("argv")
        if not isinstance(argv, list) or not argv or not all(isinstance(a, str) for a in argv):
            raise ManifestError(path, "subprocess backend needs a nonempty argv list")
        resolved = []
        for a in argv:
            candidate = _resolve(base, a)
            resolved.append(candidate if os.path.exists(candidate) else a)
        n_class = raw.get("n_class")
        if n_class is not None and (not isinstance(n_class, int) or n_class < 1):
            raise ManifestError(path, "backend n_class must be a positive integer")
        timeout = raw.get("timeout", 30.0)
        if not isinstance(timeout, (int, float)) or timeout <= 0:
            raise ManifestError(path, "backend timeout must be positive")
        return BackendSpec(
            kind="subprocess", argv=tuple(resolved), n_class=n_class, timeout=float(timeout)
        )
    raise ManifestError(path, f"unknown backend kind {kind!r}")


def _parse_background(raw, base: str, path: str) -> BackgroundSpec:
    if raw is None:
        return BackgroundSpec(kind="dataset-mean")
    if not isinstance(raw, dict) or "kind" not in raw:
        raise ManifestError(path, "background spec needs a kind")
    kind = raw["kind"]
    if kind == "zeros":
        return BackgroundSpec(kind="zeros")
    if kind == "dataset-mean":
        pool = tuple(
            _require_file(_resolve(base, p), path, "background tensor")
            for p in raw.get("pool", [])
        )
        return BackgroundSpec(kind="dataset-mean", pool=pool)
    if kind == "values":
        values = raw.get("values")
        if not isinstance(values, list) or not values:
            raise ManifestError(path, "background values must be a nonempty list")
        return BackgroundSpec(kind="values", values=tuple(float(v) for v in values))
    raise ManifestError(path, f"unknown background kind {kind!r}")


# --- backend lifecycle ----------------------------------------------------------------------


class _BackendSource:
    """Hands each worker thread a backend it may use sequentially.

    Built-in backends are pure functions of their parameters and are shared;
    a subprocess backend serializes one request at a time on its pipe, so
    every worker thread gets its own child process.
    """

    def __init__(self, spec: BackendSpec):
        self._spec = spec
        self._shared = None
        if spec.kind != "subprocess":
            with open(spec.params_path, "r", encoding="utf-8") as fh:
                self._shared = load_backend_params(fh.read())
        self._local = threading.local()
        self._spawned = []
        self._lock = threading.Lock()

    def get(self):
        if self._shared is not None:
            return self._shared
        backend = getattr(self._local, "backend", None)
        if backend is None:
            backend = make_subprocess_backend(
                self._spec.argv,
                n_class=self._spec.n_class,
                timeout=self._spec.timeout,
            )
            self._local.backend = backend
            with self._lock:
                self._spawned.append(backend)
        return backend

    def close(self):
        errors = []
        with self._lock:
            spawned, self._spawned = self._spawned, []
        for backend in spawned:
            try:
                backend.close()
            except AdageError as exc:
                errors.append(exc)
        if errors:
            raise errors[0]


def _make_background(manifest: RunManifest, tensor_cache: dict):
    spec = manifest.background
    c = manifest.groups.total_channels
    if spec.kind == "zeros":
        return background_zeros(c)
    if spec.kind == "values":
        return background_from_values(np.asarray(spec.values, dtype=np.float32))
    pool_paths = spec.pool or tuple(r.input_path for r in manifest.inputs)
    pool = [_cached_tensor(tensor_cache, p) for p in pool_paths]
    return compute_background(pool)


def _cached_tensor(cache: dict, path: str):
    if path not in cache:
        cache[path] = read_tensor(path)
    return cache[path]


# --- per-run processing ----------------------------------------------------------------------


@dataclass
class _TileOut:
    rows: slice
    cols: slice
    confusion: dict  # class -> (tp, fp, fn, tn)
    ap_values: list  # per rule: 1-D f64 array (empty allowed)
    mccg: np.ndarray  # (Ht, Wt) uint8
    hist: np.ndarray | None  # (K, nbins) int64
    attributions: object | None  # AttributionMap for the tile


@dataclass
class RunResult:
    run: RunInput
    shape: tuple
    n_class: int
    report_classes: tuple
    scores: list  # per rule: RuleScore | None
    confusion: dict  # class -> (tp, fp, fn, tn) totals
    mccg: Mask2D
    mccg_counts: np.ndarray | None
    mccg_fractions: np.ndarray | None
    hist: np.ndarray | None
    attributions: object | None  # assembled AttributionMap or None


def _tile_spans(h: int, w: int, tile: int | None):
    if tile is None:
        return [(slice(0, h), slice(0, w))]
    spans = []
    for r0 in range(0, h, tile):
        for c0 in range(0, w, tile):
            spans.append((slice(r0, min(r0 + tile, h)), slice(c0, min(c0 + tile, w))))
    return spans


def _rule_class_ids(ruleset) -> set:
    wanted = set()
    for rule in ruleset.rules:
        for p in rule.conditions:
            if isinstance(p, InConfusion):
                wanted.add(p.cls)
    return wanted


def _process_tile(
    manifest: RunManifest,
    source: _BackendSource,
    bg,
    planes: dict,
    ruleset,
    rows: slice,
    cols: slice,
    *,
    want_attributions: bool,
) -> _TileOut:
    opts = manifest.options
    x = planes["input"].crop(rows, cols)
    backend = source.get()
    attribution = explain(backend, x, manifest.groups, bg, classes="all")
    logits = predict(backend, x)
    pred = predicted_classes(logits)
    valid = Mask2D(np.ascontiguousarray(planes["valid"][rows, cols]))

    label = planes.get("label")
    confusion = {}
    if label is not None:
        label_tile = Mask2D(np.ascontiguousarray(label[rows, cols]))
        class_ids = set(planes["report_classes"]) | (
            _rule_class_ids(ruleset) if ruleset is not None else set()
        )
        for cls in sorted(class_ids):
            cm = confusion_masks(label_tile, pred, cls, valid)
            confusion[cls] = cm

    ranking = rank_groups(attribution, pred, by=opts.rank_by)

    ap_values = []
    if ruleset is not None:
        ctx = RuleContext(
            height=x.height,
            width=x.width,
            masks={
                mid: Mask2D(np.ascontiguousarray(m[rows, cols]))
                for mid, m in planes["masks"].items()
            },
            confusion=confusion,
            bands={bid: b[rows, cols] for bid, b in planes["bands"].items()},
        )
        assignment = assign_references(ruleset, ctx)
        kind, fixed_k = parse_k_policy(opts.k_policy)
        for ri in range(len(ruleset.rules)):
            reference = assignment.references[ri]
            k = len(reference) if kind == "paper" else fixed_k
            population = assignment.population(ri, opts.scoring)
            if population.any():
                ap = _ap_grid(ranking.order, reference, k)[population]
            else:
                ap = np.empty(0, dtype=np.float64)
            ap_values.append(ap)

    # MCCG eligibility: true positives of the explained class when labels
    # exist, otherwise pixels predicted as that class; optionally restricted
    # by a named mask (e.g. cloud cover).
    explained = opts.explained_class
    if confusion and explained in confusion:
        eligible = confusion[explained].tp.data == 1
    else:
        eligible = (pred.data == explained) & (valid.data == 1)
    if opts.mccg_restrict is not None:
        eligible = eligible & (planes["masks"][opts.mccg_restrict][rows, cols] == 1)
    mccg = mccg_map(ranking, Mask2D(np.ascontiguousarray(eligible).astype(np.uint8)))

    hist = None
    if opts.bins_band is not None:
        if eligible.any():
            hist = band_histogram(
                mccg,
                manifest.groups.k,
                planes["bands"][opts.bins_band][rows, cols],
                opts.bins_edges,
            )
        else:
            hist = np.zeros(
                (manifest.groups.k, len(opts.bins_edges) - 1), dtype=np.int64
            )

    return _TileOut(
        rows=rows,
        cols=cols,
        confusion={cls: cm.counts for cls, cm in confusion.items()},
        ap_values=ap_values,
        mccg=mccg.data,
        hist=hist,
        attributions=attribution if want_attributions else None,
    )


def _load_planes(manifest: RunManifest, run: RunInput, tensor_cache: dict) -> dict:
    x = _cached_tensor(tensor_cache, run.input_path)
    h, w = x.height, x.width
    if x.channels != manifest.groups.total_channels:
        raise ManifestError(
            manifest.path,
            f"input {run.input_path} has {x.channels} channels, "
            f"groups cover {manifest.groups.total_channels}",
        )
    planes = {"input": x}

    if manifest.valid_path is not None:
        valid = read_mask(manifest.valid_path).require_binary()
        _check_plane(manifest, valid.data.shape, (h, w), "valid mask")
        planes["valid"] = valid.data
    else:
        planes["valid"] = np.ones((h, w), dtype=np.uint8)

    if run.label_path is not None:
        label = read_mask(run.label_path)
        _check_plane(manifest, label.data.shape, (h, w), "label mask")
        planes["label"] = label.data

    masks = {}
    for mid, p in manifest.mask_paths.items():
        m = read_mask(p).require_binary()
        _check_plane(manifest, m.data.shape, (h, w), f"mask {mid!r}")
        masks[mid] = m.data
    planes["masks"] = masks

    bands = {}
    for bid, (p, channel) in manifest.band_specs.items():
        t = _cached_tensor(tensor_cache, p)
        if channel >= t.channels:
            raise ManifestError(
                manifest.path, f"band {bid!r} channel {channel} out of range"
            )
        _check_plane(manifest, t.data.shape[1:], (h, w), f"band {bid!r}")
        bands[bid] = t.data[channel]
    planes["bands"] = bands
    return planes


def _check_plane(manifest, got, expected, what):
    if tuple(got) != tuple(expected):
        raise ManifestError(
            manifest.path, f"{what} is {got}, expected {expected}"
        )


def _assemble_attributions(shape, tiles):
    first = tiles[0].attributions
    if first is None:
        return None
    k, p = first.values.shape[0], first.values.shape[1]
    full = np.zeros((k, p, shape[0], shape[1]), dtype=np.float64)
    for t in tiles:
        full[:, :, t.rows, t.cols] = t.attributions.values
    return AttributionMap(
        values=full,
        group_names=first.group_names,
        class_ids=first.class_ids,
        background_provenance=first.background_provenance,
    )


def run_scene(
    manifest: RunManifest,
    run: RunInput,
    source: _BackendSource,
    bg,
    tensor_cache: dict,
    ruleset,
    *,
    want_attributions: bool,
    progress=None,
) -> RunResult:
    """Process one scene tile by tile and pool the pieces."""
    planes = _load_planes(manifest, run, tensor_cache)
    x = planes["input"]
    opts = manifest.options
    spans = _tile_spans(x.height, x.width, opts.tile)

    # Resolve the class count once, before fanning out over tiles; class
    # rows cover every backend class (plus class 1 for the single-logit
    # binary case).
    probe = predict(source.get(), x.crop(slice(0, 1), slice(0, 1)))
    n_class = probe.n_class
    report_class_ids = tuple(range(n_class)) if n_class > 1 else (0, 1)
    planes["report_classes"] = report_class_ids
    if n_class > 1 and opts.explained_class >= n_class:
        raise ManifestError(
            manifest.path,
            f"explained_class {opts.explained_class} out of range for {n_class} classes",
        )

    def work(span):
        rows, cols = span
        return _process_tile(
            manifest, source, bg, planes, ruleset, rows, cols,
            want_attributions=want_attributions,
        )

    if opts.jobs > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=opts.jobs) as pool:
            tiles = list(pool.map(work, spans))
    else:
        tiles = [work(s) for s in spans]

    if progress is not None:
        for t in tiles:
            progress(run.run_id, t)

    # Pool tile pieces: integer counts add exactly; AP values are pooled as
    # values and summed once with fsum, so the result does not depend on the
    # tile layout of a linear backend.
    confusion_totals = {}
    for t in tiles:
        for cls, counts in t.confusion.items():
            old = confusion_totals.get(cls, (0, 0, 0, 0))
            confusion_totals[cls] = tuple(a + b for a, b in zip(old, counts))

    scores = []
    if ruleset is not None:
        kind, fixed_k = parse_k_policy(opts.k_policy)
        for ri, rule in enumerate(ruleset.rules):
            values = np.concatenate([t.ap_values[ri] for t in tiles])
            k = len(rule.reference) if kind == "paper" else fixed_k
            try:
                scores.append(score_from_values(rule.name, k, values))
            except NoAssignedPixels:
                log.warning("rule %r matched no pixels in %s", rule.name, run.run_id)
                scores.append(None)

    mccg_full = np.full((x.height, x.width), MCCG_SENTINEL, dtype=np.uint8)
    for t in tiles:
        mccg_full[t.rows, t.cols] = t.mccg
    mccg = Mask2D(mccg_full)
    try:
        mccg_counts, mccg_fractions = mccg_proportions(mccg, manifest.groups.k)
    except AdageError:
        log.warning("no MCCG-eligible pixels in %s", run.run_id)
        mccg_counts, mccg_fractions = None, None

    hist = None
    if opts.bins_band is not None:
        hist = np.zeros((manifest.groups.k, len(opts.bins_edges) - 1), dtype=np.int64)
        for t in tiles:
            hist += t.hist

    return RunResult(
        run=run,
        shape=(x.height, x.width),
        n_class=n_class,
        report_classes=report_class_ids,
        scores=scores,
        confusion=confusion_totals,
        mccg=mccg,
        mccg_counts=mccg_counts,
        mccg_fractions=mccg_fractions,
        hist=hist,
        attributions=_assemble_attributions((x.height, x.width), tiles),
    )


# --- report assembly and artifact writing ----------------------------------------------------------------------


def _percent(v: float | None) -> float | None:
    return None if v is None else 100.0 * v


def _class_row(manifest: RunManifest, cls: int, counts) -> dict:
    tp, fp, fn, tn = counts
    m = segmentation_from_counts(tp, fp, fn, tn)
    name = None
    if manifest.class_names and cls < len(manifest.class_names):
        name = manifest.class_names[cls]
    row = {"class": cls, "name": name, "tp": tp, "fp": fp, "fn": fn, "tn": tn}
    for key, metric in (
        ("iou", m.iou), ("precision", m.precision),
        ("recall", m.recall), ("f1", m.f1),
    ):
        row[f"{key}_percent"] = _percent(metric.value)
        row[f"{key}_note"] = metric.undefined_reason
    return row


def _rule_row(score, rule_name: str) -> dict:
    if score is None:
        return {
            "rule": rule_name, "n": 0, "k": None, "map_percent": None,
            "ap_min": None, "ap_mean": None, "ap_max": None, "ap_std": None,
            "note": "no assigned pixels",
        }
    return {
        "rule": score.rule, "n": score.n, "k": score.k,
        "map_percent": 100.0 * score.map,
        "ap_min": score.ap_min, "ap_mean": score.ap_mean,
        "ap_max": score.ap_max, "ap_std": score.ap_std,
        "note": None,
    }


def build_report(manifest: RunManifest, results: list, ruleset) -> dict:
    opts = manifest.options
    runs = []
    for res in results:
        explained = opts.explained_class
        iou_percent = None
        if explained in res.confusion:
            tp, fp, fn, tn = res.confusion[explained]
            iou = segmentation_from_counts(tp, fp, fn, tn).iou
            iou_percent = _percent(iou.value)
        rule_rows = [
            _rule_row(score, ruleset.rules[ri].name)
            for ri, score in enumerate(res.scores)
        ]
        joint = [
            {
                "rule": row["rule"],
                "iou_percent": iou_percent,
                "alignment_percent": row["map_percent"],
            }
            for row in rule_rows
        ]
        runs.append(
            {
                "run_id": res.run.run_id,
                "input": os.path.relpath(res.run.input_path, manifest.base_dir),
                "height": res.shape[0],
                "width": res.shape[1],
                "n_class": res.n_class,
                "rules": rule_rows,
                "classes": [
                    _class_row(manifest, cls, res.confusion[cls])
                    for cls in res.report_classes
                    if cls in res.confusion
                ],
                "mccg": None
                if res.mccg_counts is None
                else {
                    "counts": [int(c) for c in res.mccg_counts],
                    "fractions": [float(f) for f in res.mccg_fractions],
                },
                "joint": joint,
            }
        )

    report = {
        "schema": "adage-report/1",
        "groups": list(manifest.groups.names),
        "k_policy": opts.k_policy,
        "rank_by": opts.rank_by,
        "scoring": opts.scoring,
        "explained_class": opts.explained_class,
        "background": manifest.background.kind,
        "runs": runs,
    }
    if len(results) > 1:
        report["summary"] = _summary_block(runs, manifest)
    return report


def _mean_std(values: list) -> tuple:
    """Mean and population standard deviation via exact summation."""
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def _summary_block(runs: list, manifest: RunManifest) -> dict:
    rules = {}
    for run in runs:
        for row in run["rules"]:
            if row["map_percent"] is not None:
                rules.setdefault(row["rule"], []).append(row["map_percent"])
    rule_rows = []
    for name, values in rules.items():
        mean, std = _mean_std(values)
        rule_rows.append(
            {
                "rule": name,
                "n_runs": len(values),
                "mean_map_percent": mean,
                "stddev_map_percent": std,
            }
        )
    classes = {}
    names = {}
    for run in runs:
        for row in run["classes"]:
            if row["iou_percent"] is not None:
                classes.setdefault(row["class"], []).append(row["iou_percent"])
                names[row["class"]] = row["name"]
    class_rows = []
    for cls in sorted(classes):
        mean, std = _mean_std(classes[cls])
        class_rows.append(
            {
                "class": cls,
                "name": names[cls],
                "n_runs": len(classes[cls]),
                "mean_iou_percent": mean,
                "stddev_iou_percent": std,
            }
        )
    return {"rules": rule_rows, "classes": class_rows}


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])


def _write_meta(out_dir: str, manifest: RunManifest, started: float, command: str) -> None:
    try:
        from importlib.metadata import version

        pkg_version = version("adage-toolkit")
    except Exception:
        pkg_version = "unknown"
    meta = {
        "command": command,
        "manifest": manifest.path,
        "backend": manifest.backend.describe(),
        "seed": manifest.seed,
        "started_utc": _dt.datetime.fromtimestamp(
            started, _dt.timezone.utc
        ).isoformat(),
        "duration_s": time.time() - started,
        "version": pkg_version,
    }
    _write_json(os.path.join(out_dir, "run_meta.json"), meta)


def _mccg_palette(k: int) -> dict:
    palette = {MCCG_SENTINEL: 0}
    for i in range(k):
        palette[i] = 255 - (200 * i) // max(k - 1, 1)
    return palette


def _parse_ruleset(manifest: RunManifest):
    if manifest.rules_text is None:
        return None
    return parse_rules(
        manifest.rules_text,
        manifest.groups,
        class_names=list(manifest.class_names) if manifest.class_names else None,
        known_masks=set(manifest.mask_paths),
        known_bands=set(manifest.band_specs),
    )


def _progress_printer(n_groups: int):
    def emit(run_id: str, tile: _TileOut):
        print(
            f"[tile] {run_id} rows {tile.rows.start}:{tile.rows.stop} "
            f"cols {tile.cols.start}:{tile.cols.stop} "
            f"({n_groups} groups, {1 << n_groups} coalitions)"
        )

    return emit


def cmd_explain(manifest: RunManifest) -> int:
    """Write attribution tensors, MCCG maps, and proportion/histogram CSVs."""
    started = time.time()
    os.makedirs(manifest.out_dir, exist_ok=True)
    ruleset = _parse_ruleset(manifest)
    tensor_cache: dict = {}
    bg = _make_background(manifest, tensor_cache)
    source = _BackendSource(manifest.backend)
    ternary_rows = []
    try:
        for run in manifest.inputs:
            res = run_scene(
                manifest, run, source, bg, tensor_cache, ruleset,
                want_attributions=True,
                progress=_progress_printer(manifest.groups.k),
            )
            wanted = manifest.options.classes
            attribution = res.attributions
            if wanted != "all":
                missing = [c for c in wanted if c not in attribution.class_ids]
                if missing:
                    raise ManifestError(
                        manifest.path, f"classes {missing} not produced by backend"
                    )
                keep = [attribution.class_position(c) for c in wanted]
                attribution = AttributionMap(
                    values=attribution.values[:, keep],
                    group_names=attribution.group_names,
                    class_ids=tuple(wanted),
                    background_provenance=attribution.background_provenance,
                )
            paths = save_attribution(attribution, manifest.out_dir, res.run.run_id)
            write_mask(res.mccg, os.path.join(manifest.out_dir, f"{res.run.run_id}_mccg.adgm"))
            write_pgm(
                res.mccg,
                _mccg_palette(manifest.groups.k),
                os.path.join(manifest.out_dir, f"{res.run.run_id}_mccg.pgm"),
            )
            if res.mccg_fractions is not None:
                ternary_rows.append(
                    [res.run.run_id]
                    + [float(f) for f in res.mccg_fractions]
                )
            if res.hist is not None:
                edges = manifest.options.bins_edges
                rows = []
                for gi, gname in enumerate(manifest.groups.names):
                    for b in range(len(edges) - 1):
                        rows.append([gname, edges[b], edges[b + 1], int(res.hist[gi, b])])
                _write_csv(
                    os.path.join(manifest.out_dir, f"{res.run.run_id}_histogram.csv"),
                    ["group", "bin_low", "bin_high", "count"],
                    rows,
                )
            print(f"[run] {res.run.run_id}: wrote {len(paths)} attribution file(s)")
    finally:
        source.close()
    _write_csv(
        os.path.join(manifest.out_dir, "ternary.csv"),
        ["run_id"] + [f"fraction_{g}" for g in manifest.groups.names],
        ternary_rows,
    )
    _write_meta(manifest.out_dir, manifest, started, "explain")
    return 0


def cmd_evaluate(manifest: RunManifest) -> int:
    """Score alignment and segmentation quality; write report JSON + CSVs."""
    started = time.time()
    if manifest.rules_text is None:
        raise ManifestError(manifest.path, "evaluate requires a rules config")
    for run in manifest.inputs:
        if run.label_path is None:
            raise ManifestError(manifest.path, "evaluate requires labels for every input")
    os.makedirs(manifest.out_dir, exist_ok=True)
    ruleset = _parse_ruleset(manifest)
    tensor_cache: dict = {}
    bg = _make_background(manifest, tensor_cache)
    source = _BackendSource(manifest.backend)
    results = []
    try:
        for run in manifest.inputs:
            results.append(
                run_scene(
                    manifest, run, source, bg, tensor_cache, ruleset,
                    want_attributions=False,
                    progress=_progress_printer(manifest.groups.k),
                )
            )
    finally:
        source.close()

    report = build_report(manifest, results, ruleset)
    _write_json(os.path.join(manifest.out_dir, "report.json"), report)

    rule_rows = []
    for run in report["runs"]:
        for row in run["rules"]:
            rule_rows.append(
                [run["run_id"], row["rule"], row["n"], row["k"], row["map_percent"],
                 row["ap_min"], row["ap_mean"], row["ap_max"], row["ap_std"], row["note"]]
            )
    _write_csv(
        os.path.join(manifest.out_dir, "report_rules.csv"),
        ["run_id", "rule", "n", "k", "map_percent",
         "ap_min", "ap_mean", "ap_max", "ap_std", "note"],
        rule_rows,
    )

    class_rows = []
    for run in report["runs"]:
        for row in run["classes"]:
            class_rows.append(
                [run["run_id"], row["class"], row["name"], row["tp"], row["fp"],
                 row["fn"], row["tn"], row["iou_percent"], row["iou_note"],
                 row["precision_percent"], row["precision_note"],
                 row["recall_percent"], row["recall_note"],
                 row["f1_percent"], row["f1_note"]]
            )
    _write_csv(
        os.path.join(manifest.out_dir, "report_classes.csv"),
        ["run_id", "class", "name", "tp", "fp", "fn", "tn",
         "iou_percent", "iou_note", "precision_percent", "precision_note",
         "recall_percent", "recall_note", "f1_percent", "f1_note"],
        class_rows,
    )

    scatter_rows = []
    for run in report["runs"]:
        for row in run["joint"]:
            scatter_rows.append(
                [run["run_id"], row["rule"], row["iou_percent"], row["alignment_percent"]]
            )
    _write_csv(
        os.path.join(manifest.out_dir, "scatter.csv"),
        ["run_id", "rule", "iou_percent", "alignment_percent"],
        scatter_rows,
    )
    _write_meta(manifest.out_dir, manifest, started, "evaluate")

    for run in report["runs"]:
        for row in run["rules"]:
            shown = "null" if row["map_percent"] is None else f"{row['map_percent']:.2f}%"
            print(f"[align] {run['run_id']} {row['rule']}: mAP@k = {shown} (N={row['n']})")
    return 0
