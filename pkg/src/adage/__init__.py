"""Channel-group attributions and domain-knowledge alignment scoring.

The package splits into small layers: `raster` (binary containers),
`groups` (channel partitions), `backends` (pixel-wise predictors, built-in
or subprocess), `shapley` (exact coalition enumeration), `rules`
(declarative reference explanations), `metrics` (AP@k, segmentation
quality, MCCG summaries), and `pipeline`/`cli` (manifest orchestration).
"""

from .backends import (
    Background,
    ConvBackend,
    LinearBackend,
    SubprocessBackend,
    background_from_values,
    background_zeros,
    compute_background,
    make_conv_backend,
    make_linear_backend,
    make_subprocess_backend,
    predict,
    predicted_classes,
)
from .errors import AdageError
from .groups import ChannelGroupSet, parse_groups_config, validate_partition
from .metrics import (
    MetricValue,
    RuleScore,
    SegmentationMetrics,
    ap_at_k,
    band_histogram,
    map_at_k,
    mccg_proportions,
    precision_at,
    rule_alignment,
    segmentation_from_counts,
    segmentation_metrics,
)
from .raster import (
    LogitMap,
    Mask2D,
    TensorCHW,
    read_mask,
    read_tensor,
    write_mask,
    write_pgm,
    write_tensor,
)
from .rules import (
    ConfusionMasks,
    ReferenceAssignment,
    RuleContext,
    RuleSet,
    assign_references,
    confusion_masks,
    parse_rules,
)
from .shapley import (
    AttributionMap,
    GroupRanking,
    explain,
    impute,
    load_attribution,
    mccg_map,
    rank_groups,
    save_attribution,
    shapley_weight,
)

__version__ = "0.1.0"

__all__ = [
    "AdageError",
    "AttributionMap",
    "Background",
    "ChannelGroupSet",
    "ConfusionMasks",
    "ConvBackend",
    "GroupRanking",
    "LinearBackend",
    "LogitMap",
    "Mask2D",
    "MetricValue",
    "ReferenceAssignment",
    "RuleContext",
    "RuleScore",
    "RuleSet",
    "SegmentationMetrics",
    "SubprocessBackend",
    "TensorCHW",
    "ap_at_k",
    "assign_references",
    "background_from_values",
    "background_zeros",
    "band_histogram",
    "compute_background",
    "confusion_masks",
    "explain",
    "impute",
    "load_attribution",
    "make_conv_backend",
    "make_linear_backend",
    "make_subprocess_backend",
    "map_at_k",
    "mccg_map",
    "mccg_proportions",
    "parse_groups_config",
    "parse_rules",
    "precision_at",
    "predict",
    "predicted_classes",
    "rank_groups",
    "read_mask",
    "read_tensor",
    "rule_alignment",
    "save_attribution",
    "segmentation_from_counts",
    "segmentation_metrics",
    "shapley_weight",
    "validate_partition",
    "write_mask",
    "write_pgm",
    "write_tensor",
]
