"""Point-voxel scene flow estimation with optimal-transport correspondence.

The public surface mirrors the pipeline: umbrella surface features feed a
fused SetConv/sparse-voxel-attention encoder; cosine matching costs go
through a Sinkhorn solver; soft correspondences are refined into flow.
"""

from .config import Config, load_config, parse_config, serialize_config
from .errors import (
    BadMagic,
    KTooLarge,
    NonFiniteValue,
    PvflowError,
    ShapeError,
    TruncatedFile,
    UnequalSizes,
    UnrecordedNode,
)
from .fileio import (
    read_cloud,
    read_flow,
    read_weights,
    write_cloud,
    write_flow,
    write_weights,
)
from .fit import FitResult, fit, mean_loss
from .flow import (
    FlowField,
    TransportPlan,
    estimate,
    estimate_details,
    initial_flow,
    matching_cost,
    refine_flow,
    self_supervised_loss,
    sinkhorn,
    sinkhorn_unrolled,
    soft_correspondence,
)
from .fusion import FeatureMatrix, embed, fuse
from .geometry import (
    NeighborGraph,
    PointCloud,
    SurfaceFeatures,
    UmbrellaFeatures,
    knn,
    umbrella_features,
    umbrella_normals,
    usfe,
)
from .kernels import HAVE_EXT
from .metrics import (
    EvalReport,
    accuracy_relaxed,
    accuracy_strict,
    count_params_flops,
    epe,
    evaluate,
    outliers,
)
from .params import bind_params, count_params, init_params, registry
from .voxel import (
    NormalizedCloud,
    SparseVoxelGrid,
    devoxelize,
    normalize_cloud,
    sparse_grid_attention,
    voxelize,
    window_partition,
)

__version__ = "0.1.0"

__all__ = [
    "BadMagic",
    "Config",
    "EvalReport",
    "FeatureMatrix",
    "FitResult",
    "FlowField",
    "HAVE_EXT",
    "KTooLarge",
    "NeighborGraph",
    "NonFiniteValue",
    "NormalizedCloud",
    "PointCloud",
    "PvflowError",
    "ShapeError",
    "SparseVoxelGrid",
    "SurfaceFeatures",
    "TransportPlan",
    "TruncatedFile",
    "UmbrellaFeatures",
    "UnequalSizes",
    "UnrecordedNode",
    "accuracy_relaxed",
    "accuracy_strict",
    "bind_params",
    "count_params",
    "count_params_flops",
    "devoxelize",
    "embed",
    "epe",
    "estimate",
    "estimate_details",
    "evaluate",
    "fit",
    "fuse",
    "init_params",
    "initial_flow",
    "knn",
    "load_config",
    "matching_cost",
    "mean_loss",
    "normalize_cloud",
    "outliers",
    "registry",
    "parse_config",
    "read_cloud",
    "read_flow",
    "read_weights",
    "refine_flow",
    "self_supervised_loss",
    "serialize_config",
    "sinkhorn",
    "sinkhorn_unrolled",
    "soft_correspondence",
    "sparse_grid_attention",
    "umbrella_features",
    "umbrella_normals",
    "usfe",
    "voxelize",
    "window_partition",
    "write_cloud",
    "write_flow",
    "write_weights",
    "__version__",
]
