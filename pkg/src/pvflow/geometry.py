"""Point-cloud container, exact KNN, and umbrella surface features.

The umbrella front-end builds, for every point, K azimuthally ordered
neighbor offsets, takes cyclic cross products to get per-pair normals, and
encodes [unit normal, polar offset] rows through a small MLP max-pooled over
the K pairs.  Everything here is a pure function of its inputs.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from . import tape as T
from .errors import KTooLarge, ShapeError

EPS_DEGENERATE = 1e-12  # squared-norm threshold for a degenerate cross product


@dataclass
class PointCloud:
    """N points with positions in meters and optional feature channels."""

    positions: np.ndarray
    features: Optional[np.ndarray] = None
    id: str = ""

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ShapeError(f"positions must be N x 3, got {self.positions.shape}")
        if self.positions.shape[0] < 1:
            raise ShapeError("point cloud must contain at least one point")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")
        if self.features is not None:
            self.features = np.asarray(self.features)
            if self.features.shape[0] != self.positions.shape[0]:
                raise ShapeError("feature rows must match point count")

    @property
    def n(self):
        return self.positions.shape[0]


@dataclass
class NeighborGraph:
    """KNN indices into the same cloud, self excluded."""

    indices: np.ndarray  # (N, K) int64
    k: int


@dataclass
class UmbrellaFeatures:
    normals: np.ndarray  # (N, 3) averaged unit normal, zero if degenerate
    polar: np.ndarray  # (N, 3) (r, theta, phi) of each point
    raw: np.ndarray  # (N, K, 6) per-pair [unit normal, polar offset]
    degenerate: np.ndarray  # (N,) bool


@dataclass
class SurfaceFeatures:
    embedding: T.Var  # (N, D_s)
    umbrella: UmbrellaFeatures


def knn(cloud, k):
    """Exact k nearest neighbors per point, self excluded, ties by lower index."""
    n = cloud.n
    if k >= n:
        raise KTooLarge(f"k={k} with only {n} points (need k <= N-1)")
    if k < 1:
        raise ValueError("k must be positive")
    return NeighborGraph(kernels.knn_brute(cloud.positions, k), k)


def _wrap_phi(phi):
    # atan2 yields [-pi, pi]; fold the closed lower end onto +pi
    return np.where(phi <= -np.pi, np.pi, phi)


def cartesian_to_polar(p):
    """(x, y, z) -> (r, theta, phi); theta from the xy-plane, phi in (-pi, pi]."""
    p = np.asarray(p, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r = np.sqrt(x * x + y * y + z * z)
    theta = np.arctan2(z, np.hypot(x, y))
    phi = _wrap_phi(np.arctan2(y, x))
    return np.stack([r, theta, phi], axis=-1)


def azimuthal_order(center, neighbors):
    """Counterclockwise ordering of neighbors around center in the xy-plane.

    Returns a permutation of range(len(neighbors)): ascending azimuth, ties by
    radial distance, then by input position.  Neighbors at the center get
    azimuth 0.
    """
    center = np.asarray(center, dtype=np.float64)
    neighbors = np.asarray(neighbors, dtype=np.float64)
    d = neighbors - center
    az = _wrap_phi(np.arctan2(d[:, 1], d[:, 0]))
    radial = np.linalg.norm(d, axis=1)
    return np.lexsort((np.arange(len(neighbors)), radial, az))


def direction_vectors(center, ordered_neighbors):
    """d_k = p_k - p, rows in the given (azimuthal) order."""
    return np.asarray(ordered_neighbors, dtype=np.float64) - np.asarray(
        center, dtype=np.float64
    )


def _umbrella_batch(d):
    """Cyclic pair normals for direction sets d of shape (N, K, 3).

    Returns (unit normals (N, K, 3), averaged normal (N, 3), degenerate (N,)).
    """
    nxt = np.roll(d, -1, axis=1)
    v = np.cross(d, nxt)
    sq = np.einsum("nkc,nkc->nk", v, v)
    ok = sq > EPS_DEGENERATE
    inv = np.zeros_like(sq)
    inv[ok] = 1.0 / np.sqrt(sq[ok])
    unit = v * inv[..., None]
    avg = unit.mean(axis=1)
    avg_sq = np.einsum("nc,nc->n", avg, avg)
    avg_ok = avg_sq > EPS_DEGENERATE
    avg_inv = np.zeros_like(avg_sq)
    avg_inv[avg_ok] = 1.0 / np.sqrt(avg_sq[avg_ok])
    averaged = avg * avg_inv[:, None]
    degenerate = ~ok.any(axis=1)
    return unit, averaged, degenerate


def umbrella_normals(directions):
    """Per-pair unit normals v_k = d_k x d_{k+1} (cyclic) and their average.

    Returns (normals (K, 3), averaged (3,), degenerate bool).  Pairs with
    squared cross-product norm <= 1e-12 yield the zero vector; the umbrella is
    degenerate iff all pairs are.
    """
    d = np.asarray(directions, dtype=np.float64)
    if d.shape[0] < 2:
        raise ShapeError("umbrella needs at least 2 directions")
    unit, averaged, degenerate = _umbrella_batch(d[None])
    return unit[0], averaged[0], bool(degenerate[0])


def ordered_neighbor_indices(cloud, graph):
    """Azimuthally order each KNN row around its center point.

    Same key as azimuthal_order (azimuth, radial distance, cloud index),
    vectorized over all points.
    """
    pos = cloud.positions
    n, k = graph.indices.shape
    nbr = pos[graph.indices]  # (N, K, 3)
    d = nbr - pos[:, None, :]
    az = _wrap_phi(np.arctan2(d[..., 1], d[..., 0]))
    radial = np.linalg.norm(d, axis=2)
    rows = np.repeat(np.arange(n), k)
    perm = np.lexsort(
        (graph.indices.ravel(), radial.ravel(), az.ravel(), rows)
    )
    return graph.indices.ravel()[perm].reshape(n, k)


def umbrella_features(cloud, k):
    """Build the raw umbrella encoding for every point (no learned weights)."""
    graph = knn(cloud, k)
    ordered = ordered_neighbor_indices(cloud, graph)
    d = cloud.positions[ordered] - cloud.positions[:, None, :]
    unit, averaged, degenerate = _umbrella_batch(d)
    raw = np.concatenate([unit, cartesian_to_polar(d)], axis=2)
    polar = cartesian_to_polar(cloud.positions)
    return UmbrellaFeatures(averaged, polar, raw, degenerate)


def usfe(cloud, k, params, tape=None):
    """Umbrella surface feature extraction: raw pairs -> MLP -> max over K.

    Returns SurfaceFeatures whose embedding is an (N, D_s) Var on the tape
    (a non-recording tape is created when none is given).
    """
    if k < 2:
        raise ValueError("umbrella needs k >= 2")
    umb = umbrella_features(cloud, k)
    n = cloud.n
    if tape is None:
        tape = T.Tape(record=False)
    wdtype = (
        params.layers[0].w.value.dtype
        if isinstance(params.layers[0].w, T.Var)
        else np.asarray(params.layers[0].w).dtype
    )
    rows = tape.var(umb.raw.reshape(n * k, 6).astype(wdtype))
    hidden = T.mlp_forward(rows, params, tape)
    pooled = T.rows_group_max(hidden, k)
    return SurfaceFeatures(pooled, umb)
