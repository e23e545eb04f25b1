"""Per-layer fusion of point and voxel features and the final embedding.

Layer 0 input is [normalized coordinates, umbrella surface features]; each of
the three layers runs the SetConv branch and the voxel branch on the previous
fused features and adds the results elementwise.  Normalized (not raw)
coordinates keep the whole embedding translation invariant.  The three fused
outputs are concatenated and linearly projected to D (skip connections).
"""

from dataclasses import dataclass

from . import geometry as G
from . import tape as T
from . import voxel as V
from .errors import ShapeError
from .pointbranch import set_conv


@dataclass
class FeatureMatrix:
    values: T.Var  # (N, D)
    layer: str = ""

    @property
    def array(self):
        return self.values.value


def fuse(point_feats, voxel_feats):
    """Elementwise sum of the two branches."""
    a = point_feats.value.shape if isinstance(point_feats, T.Var) else point_feats.shape
    b = voxel_feats.value.shape if isinstance(voxel_feats, T.Var) else voxel_feats.shape
    if a != b:
        raise ShapeError(f"fuse: {a} vs {b}")
    return T.add(point_feats, voxel_feats)


def embed(cloud, surface, params, cfg, tape=None):
    """Three fused layers plus skip connections; returns a FeatureMatrix.

    ``surface`` comes from geometry.usfe on the same tape; weights in
    ``params`` are shared between the source and target clouds by the caller.
    """
    if tape is None:
        tape = surface.embedding.tape
    nc = V.normalize_cloud(cloud)
    graph = G.knn(cloud, cfg.k_sc)
    dtype = surface.embedding.value.dtype
    coords = tape.var(nc.coords.astype(dtype))
    prev = T.concat_cols([coords, surface.embedding])
    fused_layers = []
    for sc, vx in zip(params.point, params.voxel):
        p = set_conv(cloud, prev, sc, graph)
        v_in = T.leaky_relu(T.instance_norm(T.linear(prev, vx.proj_w, vx.proj_b)), sc.mlp.alpha)
        v = V.voxel_stage(nc, v_in, vx.attn, cfg.r)
        prev = fuse(p, v)
        fused_layers.append(prev)
    final = T.linear(T.concat_cols(fused_layers), params.fuse_w, params.fuse_b)
    return FeatureMatrix(final, layer="final")
