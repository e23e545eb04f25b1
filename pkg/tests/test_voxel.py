import numpy as np
import pytest

from pvflow import geometry as G
from pvflow import tape as T
from pvflow import voxel as V
from pvflow.errors import ShapeError


def rand_cloud(seed, n, scale=1.0):
    rng = np.random.default_rng(seed)
    return G.PointCloud(rng.uniform(-scale, scale, size=(n, 3)))


# ---------------------------------------------------------------------------
# normalization


def test_normalize_two_symmetric_points():
    nc = V.normalize_cloud(G.PointCloud([[0, 0, 0], [2, 0, 0]]))
    np.testing.assert_allclose(nc.centroid, [1, 0, 0])
    assert nc.scale == 1.0
    np.testing.assert_allclose(nc.coords, [[0, 0.5, 0.5], [1, 0.5, 0.5]])


def test_normalize_single_point():
    nc = V.normalize_cloud(G.PointCloud([[3.2, -7.0, 0.4]]))
    np.testing.assert_allclose(nc.coords, [[0.5, 0.5, 0.5]])
    assert nc.scale == 1.0


def test_normalize_round_trip():
    cloud = rand_cloud(50, 200, scale=15.0)
    nc = V.normalize_cloud(cloud)
    assert nc.coords.min() >= 0.0 and nc.coords.max() <= 1.0
    back = nc.to_world()
    rel = np.linalg.norm(back - cloud.positions, axis=1) / np.maximum(
        np.linalg.norm(cloud.positions, axis=1), 1e-12
    )
    assert rel.max() <= 1e-6


# ---------------------------------------------------------------------------
# voxelize


def _nc(coords):
    coords = np.asarray(coords, dtype=np.float64)
    return V.NormalizedCloud(coords, 1.0, np.zeros(3))


def test_voxel_index_direct():
    nc = _nc([[0.5, 0.25, 0.75]])
    np.testing.assert_array_equal(V.voxel_indices(nc, 4), [[2, 1, 3]])


def test_voxel_index_boundary_clamp():
    nc = _nc([[1.0, 1.0, 1.0]])
    np.testing.assert_array_equal(V.voxel_indices(nc, 4), [[3, 3, 3]])


def test_voxelize_mean_and_count():
    nc = _nc([[0.1, 0.1, 0.1], [0.12, 0.11, 0.13]])
    grid = V.voxelize(nc, np.array([[1.0, 3.0], [3.0, 5.0]]), 4)
    assert grid.n_voxels == 1
    np.testing.assert_array_equal(grid.features.value, [[2.0, 4.0]])
    np.testing.assert_array_equal(grid.counts, [2])


def test_voxelize_partition_property():
    cloud = rand_cloud(51, 300)
    nc = V.normalize_cloud(cloud)
    grid = V.voxelize(nc, np.zeros((300, 2)), 8)
    assert grid.counts.sum() == 300
    members = grid.members()
    seen = np.concatenate(members)
    assert len(seen) == 300 and len(np.unique(seen)) == 300
    for v, rows in enumerate(members):
        np.testing.assert_array_equal(grid.point_voxel[rows], v)


def test_voxelize_mean_matches_brute_force():
    rng = np.random.default_rng(52)
    cloud = rand_cloud(53, 257)
    feats = rng.normal(size=(257, 6))
    nc = V.normalize_cloud(cloud)
    grid = V.voxelize(nc, feats, 8)
    packed = V.pack_keys(V.voxel_indices(nc, 8))
    for v, key in enumerate(grid.keys):
        ref = feats[packed == key].mean(axis=0)
        assert np.abs(grid.features.value[v] - ref).max() <= 1e-12


def test_voxelize_rejects_bad_resolution():
    nc = _nc([[0.5, 0.5, 0.5]])
    with pytest.raises(ShapeError):
        V.voxelize(nc, np.zeros((1, 2)), 0)


# ---------------------------------------------------------------------------
# window partition


def _grid_with_keys(keys3, r, d=2):
    coords = (np.asarray(keys3, dtype=np.float64) + 0.5) / r
    return V.voxelize(_nc(coords), np.zeros((len(keys3), d)), r)


def test_window_partition_unshifted():
    grid = _grid_with_keys([[0, 0, 0], [1, 1, 1], [2, 0, 0]], r=4)
    wins = V.window_partition(grid, 2, shifted=False)
    groups = [set(grid.keys[rows]) for rows in wins]
    k = V.pack_keys(np.array([[0, 0, 0], [1, 1, 1], [2, 0, 0]]))
    assert {k[0], k[1]} in groups
    assert {k[2]} in groups


def test_window_partition_w_equals_r():
    grid = _grid_with_keys([[0, 0, 0], [3, 3, 3], [1, 2, 0]], r=4)
    wins = V.window_partition(grid, 4, shifted=False)
    assert len(wins) == 1 and len(wins[0]) == 3


def test_window_partition_shifted():
    grid = _grid_with_keys([[1, 1, 1], [2, 2, 2]], r=4)
    wins = V.window_partition(grid, 2, shifted=True)
    assert len(wins) == 1 and len(wins[0]) == 2
    # unshifted, the same two voxels separate
    assert len(V.window_partition(grid, 2, shifted=False)) == 2


@pytest.mark.parametrize("shifted", [False, True])
def test_window_partition_is_a_partition(shifted):
    cloud = rand_cloud(54, 400)
    grid = V.voxelize(V.normalize_cloud(cloud), np.zeros((400, 2)), 16)
    wins = V.window_partition(grid, 4, shifted=shifted)
    allrows = np.concatenate(wins)
    assert len(allrows) == grid.n_voxels
    assert len(np.unique(allrows)) == grid.n_voxels


# ---------------------------------------------------------------------------
# attention


def _attn_params(rng, d, heads, window, zero_o=False, identity=False):
    if identity:
        mk = lambda: np.eye(d)
    else:
        mk = lambda: rng.normal(size=(d, d)) / np.sqrt(d)
    wo = np.zeros((d, d)) if zero_o else (np.eye(d) if identity else mk())
    pos = np.zeros((d, 3)) if identity else rng.normal(size=(d, 3)) * 0.1
    return V.AttentionParams(mk(), mk(), mk(), wo, pos, heads, window)


def test_attention_single_voxel():
    rng = np.random.default_rng(55)
    d = 8
    params = _attn_params(rng, d, heads=2, window=2)
    tp = T.Tape(record=False)
    x = rng.normal(size=(1, d))
    out = V.sparse_grid_attention(
        tp.var(x), np.array([[1, 1, 1]], dtype=np.int64), params
    )
    ref = x + (x @ params.wv.T) @ params.wo.T
    np.testing.assert_allclose(out.value, ref, atol=1e-12)


def test_attention_identical_queries_average_values():
    rng = np.random.default_rng(56)
    d = 6
    x = rng.normal(size=(2, d))
    params = V.AttentionParams(
        np.zeros((d, d)), np.zeros((d, d)), np.eye(d), np.eye(d),
        np.zeros((d, 3)), heads=1, window=2,
    )
    tp = T.Tape(record=False)
    out = V.sparse_grid_attention(
        tp.var(x), np.array([[0, 0, 0], [1, 0, 0]], dtype=np.int64), params
    )
    attn = out.value - x
    np.testing.assert_allclose(attn[0], x.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(attn[1], x.mean(axis=0), atol=1e-12)


def test_attention_rejects_indivisible_heads():
    with pytest.raises(ShapeError):
        V.AttentionParams(
            np.zeros((6, 6)), np.zeros((6, 6)), np.zeros((6, 6)),
            np.zeros((6, 6)), np.zeros((6, 3)), heads=4, window=2,
        )


def _dense_masked_oracle(x, coords, params, region, w):
    """Dense attention over every cell of a window region, empties masked."""
    cells = np.array(region, dtype=np.int64)
    d = x.shape[1]
    dh = d // params.heads
    feats = np.zeros((len(cells), d))
    filled = np.zeros(len(cells), dtype=bool)
    cell_of = {tuple(c): i for i, c in enumerate(cells)}
    for i, c in enumerate(coords):
        j = cell_of[tuple(c)]
        feats[j] = x[i]
        filled[j] = True
    center = coords.mean(axis=0)  # center over non-empty voxels, as stored
    pe = ((cells - center) / w) @ params.pos.T
    q = feats @ params.wq.T + pe
    k = feats @ params.wk.T + pe
    v = feats @ params.wv.T
    outs = []
    for h in range(params.heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        s[:, ~filled] = -np.inf
        e = np.exp(s - s.max(axis=1, keepdims=True))
        a = e / e.sum(axis=1, keepdims=True)
        outs.append(a @ v[:, sl])
    dense = np.concatenate(outs, axis=1) @ params.wo.T + feats
    back = np.array([dense[cell_of[tuple(c)]] for c in coords])
    return back


def test_attention_matches_dense_masked_oracle():
    rng = np.random.default_rng(57)
    d, w = 8, 3
    region = [(u, v, z) for u in range(w) for v in range(w) for z in range(w)]
    occupied = rng.permutation(len(region))[:11]
    coords = np.array([region[i] for i in sorted(occupied)], dtype=np.int64)
    x = rng.normal(size=(len(coords), d))
    params = _attn_params(rng, d, heads=2, window=w)
    tp = T.Tape(record=False)
    out = V.sparse_grid_attention(tp.var(x), coords, params)
    ref = _dense_masked_oracle(x, coords, params, region, w)
    assert np.abs(out.value - ref).max() <= 1e-6


def test_attention_grad_check():
    rng = np.random.default_rng(58)
    d = 4
    coords = np.array([[0, 0, 0], [1, 1, 0], [0, 1, 1]], dtype=np.int64)
    x = rng.normal(size=(3, d))
    theta = {
        "wq": rng.normal(size=(d, d)),
        "wk": rng.normal(size=(d, d)),
        "wv": rng.normal(size=(d, d)),
        "wo": rng.normal(size=(d, d)),
        "pos": rng.normal(size=(d, 3)),
        "x": x,
    }

    def f(tp, v):
        params = V.AttentionParams(
            v["wq"], v["wk"], v["wv"], v["wo"], v["pos"], heads=2, window=2
        )
        out = V.sparse_grid_attention(v["x"], coords, params)
        return T.sum_all(T.square(out))

    report = T.grad_check(f, theta, tol=1e-4)
    assert report.passed, report.failures[:5]


# ---------------------------------------------------------------------------
# devoxelize


def test_devoxelize_point_at_voxel_center():
    r = 4
    nc = _nc([[(1 + 0.5) / r, (2 + 0.5) / r, (0 + 0.5) / r]])
    grid = V.voxelize(nc, np.array([[7.0, -3.0]]), r)
    out = V.devoxelize(grid, nc)
    np.testing.assert_allclose(out.value, [[7.0, -3.0]], atol=1e-12)
    idx, wgt = V.interpolation_weights(grid, nc)
    assert wgt.max() == 1.0 and wgt.sum() == 1.0


def test_devoxelize_midway_blend():
    r = 4
    # two populated voxel centers along x; query midway, nudged in y so the
    # empty y+1 corners get nonzero raw weight and renormalization kicks in
    pts = [[0.5 / r, 0.5 / r, 0.5 / r], [1.5 / r, 0.5 / r, 0.5 / r]]
    query = [[1.0 / r, 0.5 / r + 0.05 / r, 0.5 / r]]
    grid = V.voxelize(_nc(pts), np.array([[1.0], [3.0]]), r)
    out = V.devoxelize(grid, _nc(query))
    np.testing.assert_allclose(out.value, [[0.5 * 1.0 + 0.5 * 3.0]], atol=1e-12)
    idx, wgt = V.interpolation_weights(grid, _nc(query))
    np.testing.assert_allclose(np.sort(wgt[0])[-2:], [0.5, 0.5], atol=1e-12)


def test_devoxelize_weights_nonneg_sum_one():
    cloud = rand_cloud(59, 256)
    nc = V.normalize_cloud(cloud)
    grid = V.voxelize(nc, np.ones((256, 3)), 8)
    idx, wgt = V.interpolation_weights(grid, nc)
    assert wgt.min() >= 0.0
    np.testing.assert_allclose(wgt.sum(axis=1), 1.0, atol=1e-12)
    out = V.devoxelize(grid, nc)  # all-ones features stay all ones
    np.testing.assert_allclose(out.value, 1.0, atol=1e-12)


def test_devoxelize_matches_textbook_trilinear():
    rng = np.random.default_rng(60)
    r, d = 4, 5
    # seed every voxel so interior queries see 8 populated corners
    centers = np.array(
        [[(u + 0.5) / r, (v + 0.5) / r, (w + 0.5) / r]
         for u in range(r) for v in range(r) for w in range(r)]
    )
    queries = rng.uniform(0.5 / r, (r - 0.5) / r, size=(50, 3))
    nc = _nc(np.concatenate([centers, queries]))
    feats = rng.normal(size=(len(centers) + 50, d))
    grid = V.voxelize(nc, feats, r)
    out = V.devoxelize(grid, _nc(queries)).value

    fv = grid.features.value
    key_row = {tuple(c): i for i, c in enumerate(grid.coords)}
    for i, c in enumerate(queries):
        x = c * r - 0.5
        x0 = np.floor(x).astype(int)
        t = x - x0
        ref = np.zeros(d)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    wx = t[0] if dx else 1 - t[0]
                    wy = t[1] if dy else 1 - t[1]
                    wz = t[2] if dz else 1 - t[2]
                    ref += wx * wy * wz * fv[key_row[(x0[0] + dx, x0[1] + dy, x0[2] + dz)]]
        assert np.abs(out[i] - ref).max() <= 1e-9


# ---------------------------------------------------------------------------
# voxel_stage


def test_voxel_stage_residual_only_path():
    rng = np.random.default_rng(61)
    d = 4
    cloud = rand_cloud(62, 40)
    nc = V.normalize_cloud(cloud)
    feats = rng.normal(size=(40, d))
    params = _attn_params(rng, d, heads=2, window=2, zero_o=True)
    out = V.voxel_stage(nc, feats, params, r=4)
    grid = V.voxelize(nc, feats, 4)
    ref = V.devoxelize(grid, nc)
    np.testing.assert_array_equal(out.value, ref.value)


def test_voxel_stage_single_voxel_uniform_output():
    rng = np.random.default_rng(63)
    d = 4
    pts = 0.25 + rng.uniform(-0.01, 0.01, size=(12, 3))
    nc = _nc(pts)
    feats = rng.normal(size=(12, d))
    params = _attn_params(rng, d, heads=2, window=2)
    out = V.voxel_stage(nc, feats, params, r=2).value
    assert np.abs(out - out[0]).max() <= 1e-12


def test_voxel_stage_smoke_shape_finite():
    rng = np.random.default_rng(64)
    d = 8
    cloud = rand_cloud(65, 120)
    nc = V.normalize_cloud(cloud)
    feats = rng.normal(size=(120, d))
    params = _attn_params(rng, d, heads=4, window=4)
    out = V.voxel_stage(nc, feats, params, r=16)
    assert out.value.shape == (120, d)
    assert np.all(np.isfinite(out.value))


def test_voxel_stage_grad_check():
    rng = np.random.default_rng(66)
    d = 4
    cloud = rand_cloud(67, 10)
    nc = V.normalize_cloud(cloud)
    theta = {
        "x": rng.normal(size=(10, d)),
        "wq": rng.normal(size=(d, d)),
        "wk": rng.normal(size=(d, d)),
        "wv": rng.normal(size=(d, d)),
        "wo": rng.normal(size=(d, d)),
        "pos": rng.normal(size=(d, 3)),
    }

    def f(tp, v):
        params = V.AttentionParams(
            v["wq"], v["wk"], v["wv"], v["wo"], v["pos"], heads=2, window=2
        )
        out = V.voxel_stage(nc, v["x"], params, r=4)
        return T.sum_all(T.square(out))

    report = T.grad_check(f, theta, tol=1e-4)
    assert report.passed, report.failures[:5]
