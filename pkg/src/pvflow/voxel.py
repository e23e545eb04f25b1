"""Sparse voxel branch: normalization, voxelization, windowed attention,
and trilinear devoxelization.

Points are mapped into the unit cube, binned into an r-per-axis grid of which
only non-empty cells are stored (packed 64-bit keys, 21 bits per axis, in a
hash map).  Voxel features are mean-pooled point features; two attention
passes (unshifted then shifted windows) mix them; trilinear interpolation
projects them back onto the points.  All feature math runs on the tape.
"""

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import ShapeError

KEY_BITS = 21  # per-axis budget inside the packed 64-bit key


@dataclass
class NormalizedCloud:
    """Coordinates in [0,1]^3 plus the (centroid, scale) to invert the map."""

    coords: np.ndarray  # (N, 3) in [0, 1]
    scale: float  # meters per unit
    centroid: np.ndarray  # (3,) meters

    def __post_init__(self):
        if np.any(self.coords < 0.0) or np.any(self.coords > 1.0):
            raise ShapeError("normalized coordinates must lie in [0, 1]")

    def to_world(self, coords=None):
        c = self.coords if coords is None else coords
        return (2.0 * c - 1.0) * self.scale + self.centroid


def normalize_cloud(cloud):
    """Center by the centroid, divide by the max centered norm, map to [0,1].

    A fully coincident cloud gets scale 1, landing every point at (.5,.5,.5).
    """
    centroid = cloud.positions.mean(axis=0)
    centered = cloud.positions - centroid
    scale = float(np.linalg.norm(centered, axis=1).max())
    if scale == 0.0:
        scale = 1.0
    coords = (centered / scale + 1.0) / 2.0
    return NormalizedCloud(coords, scale, centroid)


def pack_keys(coords3):
    c = np.asarray(coords3, dtype=np.int64)
    return (c[..., 0] << (2 * KEY_BITS)) | (c[..., 1] << KEY_BITS) | c[..., 2]


def unpack_keys(keys):
    mask = (1 << KEY_BITS) - 1
    return np.stack(
        [(keys >> (2 * KEY_BITS)) & mask, (keys >> KEY_BITS) & mask, keys & mask],
        axis=-1,
    )


@dataclass
class SparseVoxelGrid:
    """Non-empty voxels only, rows sorted by packed key."""

    r: int
    keys: np.ndarray  # (V,) packed, ascending
    coords: np.ndarray  # (V, 3) int64
    point_voxel: np.ndarray  # (N,) row index into keys
    counts: np.ndarray  # (V,) int64
    features: T.Var  # (V, D) pooled voxel features
    lookup: dict  # packed key -> row

    @property
    def n_voxels(self):
        return self.keys.shape[0]

    def members(self):
        """Per-voxel point index lists (disjoint, covering all points)."""
        order = np.argsort(self.point_voxel, kind="stable")
        return np.split(order, np.cumsum(self.counts)[:-1])


def voxel_indices(nc, r):
    """Uniform binning: floor(coord * r), clamped so coord = 1.0 stays inside."""
    return np.clip(np.floor(nc.coords * r).astype(np.int64), 0, r - 1)


def voxelize(nc, features, r):
    """Bin points and mean-pool their features into a sparse grid."""
    if r < 1:
        raise ShapeError("resolution must be >= 1")
    if r >= (1 << KEY_BITS):
        raise ShapeError(f"resolution {r} exceeds the packed-key budget")
    if not isinstance(features, T.Var):
        features = T.Tape(record=False).var(np.asarray(features))
    if features.value.shape[0] != nc.coords.shape[0]:
        raise ShapeError("feature rows must match point count")
    packed = pack_keys(voxel_indices(nc, r))
    keys, point_voxel = np.unique(packed, return_inverse=True)
    counts = np.bincount(point_voxel, minlength=keys.shape[0]).astype(np.int64)
    pooled = T.segment_mean(features, point_voxel, keys.shape[0], counts)
    lookup = {int(k): i for i, k in enumerate(keys)}
    return SparseVoxelGrid(
        r, keys, unpack_keys(keys), point_voxel.astype(np.int64), counts, pooled, lookup
    )


def window_partition(grid, w, shifted):
    """Group voxels into W^3 windows; returns voxel-row index arrays.

    Unshifted: window id = floor(key / W) per axis.  Shifted: the grid is
    translated by floor(W/2) before binning (no cyclic wrap, so boundary
    windows may be smaller).  Window order follows the packed window id;
    rows within a window keep ascending key order.
    """
    if not 1 <= w <= grid.r:
        raise ShapeError(f"window {w} must lie in [1, r={grid.r}]")
    c = grid.coords + (w // 2 if shifted else 0)
    wid = pack_keys(c // w)
    uniq, inverse = np.unique(wid, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    sizes = np.bincount(inverse, minlength=uniq.shape[0])
    return np.split(order, np.cumsum(sizes)[:-1])


@dataclass
class AttentionParams:
    """Shared q/k/v/o projections plus a positional map of the voxel key."""

    wq: object  # (D, D)
    wk: object  # (D, D)
    wv: object  # (D, D)
    wo: object  # (D, D)
    pos: object  # (D, 3) applied to the centered, 1/W-scaled integer key
    heads: int
    window: int

    def __post_init__(self):
        d = (self.wq.value if isinstance(self.wq, T.Var) else np.asarray(self.wq)).shape[0]
        if d % self.heads != 0:
            raise ShapeError(f"width {d} not divisible by {self.heads} heads")


def sparse_grid_attention(features, coords, params):
    """Multi-head attention over one window's voxels, residual-added.

    ``features`` is an (m, D) Var of the window's voxel features; ``coords``
    the matching (m, 3) integer keys.  The positional encoding (learned linear
    map of the centered key, scaled by 1/window) is added to queries and keys;
    values carry features only.
    """
    d = features.value.shape[1]
    dh = d // params.heads
    rel = (coords - coords.mean(axis=0)) / params.window
    pe = T.linear(T.Var(rel.astype(features.value.dtype), features.tape), params.pos)
    q = T.add(T.linear(features, params.wq), pe)
    k = T.add(T.linear(features, params.wk), pe)
    v = T.linear(features, params.wv)
    heads = []
    for h in range(params.heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = (T.slice_cols(x, lo, hi) for x in (q, k, v))
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / np.sqrt(dh))
        heads.append(T.matmul(T.softmax_rows(scores), vh))
    out = T.linear(heads[0] if len(heads) == 1 else T.concat_cols(heads), params.wo)
    return T.add(features, out)


def attention_pass(grid, params, shifted):
    """Run windowed attention over the whole grid; returns updated features."""
    windows = window_partition(grid, params.window, shifted)
    outs = [
        sparse_grid_attention(
            T.gather_rows(grid.features, rows), grid.coords[rows], params
        )
        for rows in windows
    ]
    perm = np.concatenate(windows)
    stacked = outs[0] if len(outs) == 1 else T.concat_rows(outs)
    return T.gather_rows(stacked, np.argsort(perm, kind="stable"))


def interpolation_weights(grid, nc):
    """Per-point trilinear corner rows and weights into the sparse grid.

    Corners outside the grid or on empty voxels get weight 0; the rest are
    renormalized to sum 1.  A point's own voxel is always among the corners,
    so the weight mass is never zero; the all-empty fallback (own voxel,
    weight 1) is kept for safety.  Returns (idx (N, 8), weights (N, 8)).
    """
    r = grid.r
    x = nc.coords * r - 0.5
    x0 = np.floor(x)
    t = x - x0
    n = nc.coords.shape[0]
    own_keys = pack_keys(voxel_indices(nc, r))
    own = np.fromiter(
        (grid.lookup.get(int(k), -1) for k in own_keys), dtype=np.int64, count=n
    )
    idx = np.empty((n, 8), dtype=np.int64)
    wgt = np.empty((n, 8), dtype=np.float64)
    for c in range(8):
        bits = np.array([(c >> 2) & 1, (c >> 1) & 1, c & 1], dtype=np.int64)
        corner = x0.astype(np.int64) + bits
        inside = np.all((corner >= 0) & (corner < r), axis=1)
        w = np.prod(np.where(bits == 1, t, 1.0 - t), axis=1)
        packed = pack_keys(np.clip(corner, 0, r - 1))
        row = np.fromiter(
            (grid.lookup.get(int(kk), -1) for kk in packed), dtype=np.int64, count=n
        )
        ok = inside & (row >= 0)
        idx[:, c] = np.where(ok, row, np.maximum(own, 0))
        wgt[:, c] = np.where(ok, w, 0.0)
    wsum = wgt.sum(axis=1)
    empty = wsum == 0.0  # unreachable when the grid was built from nc
    if empty.any():
        if (own[empty] < 0).any():
            raise ShapeError("point sees no populated voxel in this grid")
        idx[empty] = own[empty, None]
        wgt[empty] = 0.0
        wgt[empty, 0] = 1.0
        wsum[empty] = 1.0
    return idx, wgt / wsum[:, None]


def devoxelize(grid, nc):
    """Trilinear interpolation of voxel features back onto the points."""
    idx, wgt = interpolation_weights(grid, nc)
    return T.weighted_gather(grid.features, idx, wgt)


def voxel_stage(nc, features, params, r):
    """voxelize -> unshifted attention -> shifted attention -> devoxelize."""
    grid = voxelize(nc, features, r)
    grid.features = attention_pass(grid, params, shifted=False)
    grid.features = attention_pass(grid, params, shifted=True)
    return devoxelize(grid, nc)
