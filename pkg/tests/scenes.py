"""Synthetic flood-mapping scene with hand-countable geometry.

Every region is an axis-aligned rectangle so all pixel counts, confusion
totals, rankings, and AP values can be derived on paper. Channel layout:
0,1 SAR (VV, VH); 2,3,4 optical RGB; 5 NIR reflectance.

Geometry (row slice x col slice on a 64x64 grid):
  P  predicted water   8:56 x  8:56
  L  label water       8:56 x  4:52   -> TP 8:56 x 8:52 (2112 px),
                                         FP 8:56 x 52:56 (192), FN 192
  C  cloud            16:40 x 16:48   (768 px, inside TP)
  Q  high NIR (2.0)   20:32 x 20:36   (192 px, inside C)
  R  bright red (1.0) 32:40 x 16:32   (128 px, inside C, disjoint from Q)
  NIR elsewhere 0.1; invalid strip rows 0:3 (away from P and L).

Backend A (water weights [2,1,0,0,0,0]) ranks SAR first on every cloudy TP
pixel. Backend B (water weights [1.5,.5,.3,0,0,1.2]) ranks NIR first on Q
and demotes NIR below RGB on R, giving fractional alignment scores:
  rule "cloudy-tp-water"        (RE={SAR}, k=1):     mAP = 576/768
  rule "cloudy-tp-water-low-nir" (RE={SAR,NIR}, k=2): mAP = 512/576
"""

from __future__ import annotations

import json
import os

import numpy as np

from adage.raster import Mask2D, TensorCHW, write_mask, write_tensor

H = W = 64
P_ROWS, P_COLS = slice(8, 56), slice(8, 56)
L_ROWS, L_COLS = slice(8, 56), slice(4, 52)
C_ROWS, C_COLS = slice(16, 40), slice(16, 48)
Q_ROWS, Q_COLS = slice(20, 32), slice(20, 36)
R_ROWS, R_COLS = slice(32, 40), slice(16, 32)

GROUPS = [("SAR", (0, 1)), ("optical", (2, 3, 4)), ("NIR", (5,))]
GROUP_MEMBERS = [m for _, m in GROUPS]

WEIGHTS_A = np.array(
    [[0, 0, 0, 0, 0, 0], [2.0, 1.0, 0, 0, 0, 0]], dtype=np.float64
)
WEIGHTS_B = np.array(
    [[0, 0, 0, 0, 0, 0], [1.5, 0.5, 0.3, 0, 0, 1.2]], dtype=np.float64
)

N_CLOUDY_TP = (40 - 16) * (48 - 16)  # 768
N_Q = (32 - 20) * (36 - 20)  # 192
N_R = (40 - 32) * (32 - 16)  # 128
TP = (56 - 8) * (52 - 8)  # 2112
FP = (56 - 8) * (56 - 52)  # 192
FN = (56 - 8) * (8 - 4)  # 192

EXPECTED = {
    "iou_water": TP / (TP + FP + FN),
    "a_rule1_map": 1.0,
    "a_rule2_map": 0.5,
    "a_mccg_counts": [N_CLOUDY_TP, 0, 0],
    "b_rule1_map": (N_CLOUDY_TP - N_Q) / N_CLOUDY_TP,
    "b_rule2_map": (
        (N_CLOUDY_TP - N_Q - N_R) * 1.0 + N_R * 0.5
    ) / (N_CLOUDY_TP - N_Q),
    "b_mccg_counts": [N_CLOUDY_TP - N_Q, 0, N_Q],
    "rule1_n": N_CLOUDY_TP,
    "rule2_n": N_CLOUDY_TP - N_Q,
}


def build_arrays():
    x = np.zeros((6, H, W), dtype=np.float32)
    x[0] = -1.0
    x[0, P_ROWS, P_COLS] = 1.0
    x[1, P_ROWS, P_COLS] = 0.5
    x[2, R_ROWS, R_COLS] = 1.0
    x[5] = 0.1
    x[5, Q_ROWS, Q_COLS] = 2.0

    label = np.zeros((H, W), dtype=np.uint8)
    label[L_ROWS, L_COLS] = 1
    valid = np.ones((H, W), dtype=np.uint8)
    valid[0:3, :] = 0
    cloud = np.zeros((H, W), dtype=np.uint8)
    cloud[C_ROWS, C_COLS] = 1
    return x, label, valid, cloud


def write_scene(root) -> dict:
    """Write tensors, masks, and config files; return a path map."""
    os.makedirs(root, exist_ok=True)
    x, label, valid, cloud = build_arrays()
    paths = {
        "scene": os.path.join(root, "scene.adgt"),
        "label": os.path.join(root, "label.adgm"),
        "valid": os.path.join(root, "valid.adgm"),
        "cloud": os.path.join(root, "cloud.adgm"),
        "groups": os.path.join(root, "groups.json"),
        "rules": os.path.join(root, "rules.json"),
        "backend_a": os.path.join(root, "backend_a.json"),
        "backend_b": os.path.join(root, "backend_b.json"),
    }
    write_tensor(TensorCHW(x), paths["scene"])
    write_mask(Mask2D(label), paths["label"])
    write_mask(Mask2D(valid), paths["valid"])
    write_mask(Mask2D(cloud), paths["cloud"])

    with open(paths["groups"], "w") as fh:
        json.dump(
            {
                "total_channels": 6,
                "band_names": ["VV", "VH", "R", "G", "B", "NIR"],
                "groups": [
                    {"name": "SAR", "members": ["VV", "VH"]},
                    {"name": "optical", "members": ["R", "G", "B"]},
                    {"name": "NIR", "members": ["NIR"]},
                ],
            },
            fh,
            indent=2,
        )
    with open(paths["rules"], "w") as fh:
        json.dump(
            {
                "rules": [
                    {
                        "name": "cloudy-tp-water",
                        "when": [
                            {"pred": "in_tp", "class": "water"},
                            {"pred": "in_mask", "mask": "cloud"},
                        ],
                        "reference": ["SAR"],
                    },
                    {
                        "name": "cloudy-tp-water-low-nir",
                        "when": [
                            {"pred": "in_tp", "class": "water"},
                            {"pred": "in_mask", "mask": "cloud"},
                            {"pred": "band_below", "band": "NIR", "threshold": 0.2},
                        ],
                        "reference": ["SAR", "NIR"],
                    },
                ]
            },
            fh,
            indent=2,
        )
    for key, weights in (("backend_a", WEIGHTS_A), ("backend_b", WEIGHTS_B)):
        with open(paths[key], "w") as fh:
            json.dump(
                {"kind": "linear", "weights": weights.tolist(), "bias": [0.0, 0.0]},
                fh,
                indent=2,
            )
    return paths


def write_scene2(root) -> str:
    """Variant of the scene with the high-NIR patch removed (NIR 0.1 flat).

    Predictions are unchanged for both backends, so the confusion geometry
    carries over; under backend B rule 1 scores 1.0 and rule 2's population
    becomes the whole cloud (768 px, AP 0.5 on R): mAP = 704/768.
    """
    x, _, _, _ = build_arrays()
    x = x.copy()
    x[5] = 0.1
    path = os.path.join(root, "scene2.adgt")
    write_tensor(TensorCHW(x), path)
    return path


def write_manifest(root, name: str, backend: dict, out: str, **option_overrides) -> str:
    """Write a manifest next to the scene files; returns its path."""
    options = {
        "explained_class": 1,
        "mccg_restrict": "cloud",
        "bins": {"band": "NIR", "edges": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5]},
    }
    options.update(option_overrides)
    doc = {
        "input": "scene.adgt",
        "label": "label.adgm",
        "valid": "valid.adgm",
        "masks": {"cloud": "cloud.adgm"},
        "bands": {"NIR": {"path": "scene.adgt", "channel": 5}},
        "groups": "groups.json",
        "rules": "rules.json",
        "class_names": ["land", "water"],
        "backend": backend,
        "background": {"kind": "zeros"},
        "out": out,
        "options": options,
    }
    path = os.path.join(root, name)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    return path


def write_multi_manifest(root, name: str, backend: dict, out: str, **option_overrides) -> str:
    """Two-run manifest: the base scene plus the flat-NIR variant."""
    path = write_manifest(root, name, backend, out, **option_overrides)
    with open(path) as fh:
        doc = json.load(fh)
    doc.pop("input")
    doc.pop("label")
    doc["inputs"] = ["scene.adgt", "scene2.adgt"]
    doc["labels"] = ["label.adgm", "label.adgm"]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    return path
