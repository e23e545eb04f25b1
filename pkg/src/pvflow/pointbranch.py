"""SetConv point branch: local aggregation without downsampling.

Each layer gathers every point's k neighbors, encodes [relative offset,
neighbor feature] rows through a shared MLP (instance norm + leaky ReLU on
hidden layers), and max-pools over the neighborhood.  N is preserved so the
per-layer fusion with the voxel branch stays shape-compatible.
"""

import numpy as np

from . import tape as T
from .errors import ShapeError


def set_conv(cloud, features, params, graph):
    """One SetConv layer: gather -> shared MLP -> max over k neighbors.

    ``features`` is an (N, C) Var (wrapped on a fresh non-recording tape when
    given as an array); ``params`` a SetConvParams whose MLP input width is
    3 + C.  Offsets are relative, so the layer is translation invariant.
    """
    if not isinstance(features, T.Var):
        features = T.Tape(record=False).var(np.asarray(features))
    n, c = features.value.shape
    if graph.indices.shape[0] != n:
        raise ShapeError("neighbor graph does not match the feature rows")
    if params.mlp.in_width != 3 + c:
        raise ShapeError(
            f"set_conv MLP expects width {params.mlp.in_width}, input gives {3 + c}"
        )
    k = graph.indices.shape[1]
    offsets = cloud.positions[graph.indices] - cloud.positions[:, None, :]
    offsets = offsets.reshape(n * k, 3).astype(features.value.dtype)
    gathered = T.gather_rows(features, graph.indices.reshape(-1))
    rows = T.concat_cols([features.tape.var(offsets), gathered])
    hidden = T.mlp_forward(rows, params.mlp)
    if params.post_norm:
        hidden = T.leaky_relu(T.instance_norm(hidden), params.mlp.alpha)
    return T.rows_group_max(hidden, k)


def point_stage(cloud, features, params, graph):
    """The point branch's contribution for one fusion layer (one SetConv)."""
    return set_conv(cloud, features, params, graph)
