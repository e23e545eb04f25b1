import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvflow import metrics as M
from pvflow.config import Config
from pvflow.errors import ShapeError
from pvflow.flow import FlowField


def rand_flow(seed, n, scale=1.0):
    return np.random.default_rng(seed).normal(size=(n, 3)) * scale


# ------------------------------------------------------------------------ epe


def test_epe_zero_on_equal():
    f = rand_flow(0, 50)
    assert M.epe(f, f.copy()) == 0.0


def test_epe_constant_offset():
    f = rand_flow(1, 40)
    shifted = f + np.array([0.3, 0.0, 0.0])
    assert abs(M.epe(shifted, f) - 0.3) < 1e-12


def test_epe_matches_direct_formula():
    p, g = rand_flow(2, 100), rand_flow(3, 100)
    ref = np.mean([np.linalg.norm(p[i] - g[i]) for i in range(100)])
    assert abs(M.epe(p, g) - ref) < 1e-12


def test_epe_accepts_flowfields():
    f = rand_flow(4, 10)
    assert M.epe(FlowField(f, "refined"), FlowField(f.copy(), "refined")) == 0.0


def test_epe_shape_mismatch():
    with pytest.raises(ShapeError):
        M.epe(rand_flow(5, 10), rand_flow(6, 11))


# ------------------------------------------------------------------- accuracy


def test_accuracy_perfect_prediction():
    f = rand_flow(7, 30)
    assert M.accuracy_strict(f, f.copy()) == 100.0
    assert M.accuracy_relaxed(f, f.copy()) == 100.0
    assert M.outliers(f, f.copy()) == 0.0


def test_accuracy_absolute_branch():
    g = np.tile([10.0, 0.0, 0.0], (20, 1))
    p = g + np.array([0.04, 0.0, 0.0])
    assert M.accuracy_strict(p, g) == 100.0


def test_accuracy_half_and_half():
    g = np.tile([1.0, 0.0, 0.0], (10, 1))
    p = g.copy()
    p[:5, 1] += 0.2
    assert M.accuracy_strict(p, g) == 50.0
    assert M.accuracy_relaxed(p, g) == 50.0


def test_relaxed_thresholds():
    g = np.tile([1.0, 0.0, 0.0], (4, 1))
    p = g.copy()
    p[0, 1] += 0.08  # passes 0.1 m, fails 0.05 m
    p[1, 1] += 0.5  # fails both
    assert M.accuracy_strict(p, g) == 50.0
    assert M.accuracy_relaxed(p, g) == 75.0


def test_outliers_all_off_by_one_meter():
    g = rand_flow(8, 25, scale=0.1)
    p = g + np.array([1.0, 0.0, 0.0])
    assert M.outliers(p, g) == 100.0


def test_outliers_mixed_matches_bruteforce():
    rng = np.random.default_rng(9)
    g = rng.normal(size=(200, 3))
    p = g + rng.normal(size=(200, 3)) * rng.uniform(0, 0.5, size=(200, 1))
    err = np.linalg.norm(p - g, axis=1)
    rel = err / np.maximum(np.linalg.norm(g, axis=1), 1e-12)
    ref = 100.0 * np.mean((err > 0.3) | (rel > 0.1))
    assert abs(M.outliers(p, g) - ref) < 1e-12


@settings(deadline=None, max_examples=50)
@given(st.integers(0, 10_000))
def test_relaxed_at_least_strict(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 100))
    g = rng.normal(size=(n, 3)) * rng.uniform(0, 2)
    p = g + rng.normal(size=(n, 3)) * rng.uniform(0, 0.5)
    assert M.accuracy_relaxed(p, g) >= M.accuracy_strict(p, g)


def test_strict_complement_sums_to_hundred():
    rng = np.random.default_rng(10)
    g = rng.normal(size=(64, 3))
    p = g + rng.normal(size=(64, 3)) * 0.2
    err = np.linalg.norm(p - g, axis=1)
    rel = err / np.maximum(np.linalg.norm(g, axis=1), 1e-12)
    failing = np.sum(~((err < 0.05) | (rel < 0.05)))
    assert M.accuracy_strict(p, g) + 100.0 * failing / 64 == 100.0


def test_outliers_bounded_by_strict_complement():
    # gt norms in [0.5, 2] keep the strict and outlier sets disjoint
    rng = np.random.default_rng(11)
    for trial in range(20):
        d = rng.normal(size=(500, 3))
        g = d / np.linalg.norm(d, axis=1, keepdims=True) * rng.uniform(0.5, 2, (500, 1))
        p = g + rng.normal(size=(500, 3)) * rng.uniform(0, 0.3)
        assert M.outliers(p, g) <= 100.0 - M.accuracy_strict(p, g) + 1e-12


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(12)
    g = rng.normal(size=(80, 3))
    p = g + rng.normal(size=(80, 3)) * 0.1
    perm = rng.permutation(80)
    assert abs(M.epe(p, g) - M.epe(p[perm], g[perm])) < 1e-12
    assert M.accuracy_strict(p, g) == M.accuracy_strict(p[perm], g[perm])
    assert M.outliers(p, g) == M.outliers(p[perm], g[perm])


# ------------------------------------------------------------------- counters


def test_single_linear_layer_param_count():
    assert M.linear_params(3, 3) == 12


def test_empty_chain_has_no_params():
    assert M.chain_params([]) == 0
    assert M.chain_params([7]) == 0


def test_default_param_count_regression():
    params_m, flops_g = M.count_params_flops(Config(), 8192)
    assert params_m == pytest.approx(0.2832, abs=1e-12)
    assert flops_g > 0


def test_default_flops_regression():
    # pinned so refactors that change the documented counting rules fail loudly
    _, flops_g = M.count_params_flops(Config(), 8192)
    assert flops_g == pytest.approx(60.341354496, rel=1e-12)


def test_flops_scale_with_cloud_size():
    _, small = M.count_params_flops(Config(), 1024)
    _, large = M.count_params_flops(Config(), 8192)
    assert large > small


def test_report_fields_and_format():
    g = rand_flow(13, 16)
    p = g + 0.01
    rep = M.evaluate(p, g, Config())
    assert rep.n == 16
    assert 0 <= rep.as_pct <= 100 and 0 <= rep.out_pct <= 100
    assert rep.epe >= 0
    assert rep.params_m == pytest.approx(0.2832)
    text = rep.format()
    assert "epe = " in text and "params_m = " in text
    assert rep.as_dict()["n"] == 16
