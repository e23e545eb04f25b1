"""Scene-flow evaluation metrics and analytic parameter/FLOP counters.

Accuracy thresholds follow the FlowNet3D-lineage convention: strict 0.05 m or
5 percent relative, relaxed 0.1 m or 10 percent, outliers 0.3 m or 10 percent.
Relative error divides by max(||gt_i||, 1e-12).

FLOP counting rules: only dense multiply-accumulates are counted (MLPs,
projections, attention scores and weighted sums, trilinear gathers, the cost
matrix, and the correspondence barycenter), with 1 MAC = 2 FLOPs.  Elementwise
activations, normalizations, sorting, and the Sinkhorn/refinement iterations
are excluded; the encoder is counted twice (source and target clouds).  Voxel
occupancy is bounded analytically by min(N, r^3).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .params import count_params

REL_FLOOR = 1e-12


def _vectors(flow):
    v = flow.vectors if hasattr(flow, "vectors") else np.asarray(flow, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 3:
        raise ShapeError(f"flow must be (N, 3), got {v.shape}")
    return np.asarray(v, dtype=np.float64)


def _errors(pred, gt):
    p, g = _vectors(pred), _vectors(gt)
    if p.shape != g.shape:
        raise ShapeError(f"flow shapes differ: {p.shape} vs {g.shape}")
    err = np.linalg.norm(p - g, axis=1)
    rel = err / np.maximum(np.linalg.norm(g, axis=1), REL_FLOOR)
    return err, rel


def epe(pred, gt):
    """Mean Euclidean endpoint error.

    Args:
        pred: FlowField or (N, 3) array of predicted flow vectors.
        gt: FlowField or (N, 3) array of ground-truth flow vectors.

    Returns:
        Mean over points of the per-point L2 error (meters).
    """
    err, _ = _errors(pred, gt)
    return float(err.mean())


def accuracy_strict(pred, gt):
    """Percentage of points with error < 0.05 m or relative error < 5%."""
    err, rel = _errors(pred, gt)
    return float(100.0 * np.mean((err < 0.05) | (rel < 0.05)))


def accuracy_relaxed(pred, gt):
    """Percentage of points with error < 0.1 m or relative error < 10%."""
    err, rel = _errors(pred, gt)
    return float(100.0 * np.mean((err < 0.1) | (rel < 0.1)))


def outliers(pred, gt):
    """Percentage of points with error > 0.3 m or relative error > 10%."""
    err, rel = _errors(pred, gt)
    return float(100.0 * np.mean((err > 0.3) | (rel > 0.1)))


def linear_params(n_in, n_out, bias=True):
    """Parameter count of one linear layer (weights plus optional bias)."""
    return n_in * n_out + (n_out if bias else 0)


def chain_params(widths):
    """Parameter count of a linear chain; an empty chain has none."""
    widths = list(widths)
    return sum(linear_params(a, b) for a, b in zip(widths[:-1], widths[1:]))


def count_flops(cfg, n_points):
    """Analytic forward FLOPs of estimate at a given cloud size.

    Args:
        cfg: Config with the pipeline hyperparameters.
        n_points: Number of points per cloud.

    Returns:
        Total forward FLOPs (1 MAC = 2 FLOPs) under the documented rules.
    """
    n = int(n_points)
    d, ds = cfg.d, cfg.d_s
    m = min(n, cfg.r**3)
    win = cfg.w**3
    macs = n * cfg.k_usfe * (6 * ds + ds * ds)
    c_in = 3 + ds
    for c_out in cfg.widths:
        macs += n * cfg.k_sc * ((3 + c_in) * c_out + c_out * c_out)
        macs += n * c_in * c_out
        per_pass = (
            m * 3 * c_out  # positional encoding
            + 3 * m * c_out * c_out  # q, k, v projections
            + 2 * m * win * c_out  # scores and weighted sums
            + m * c_out * c_out  # output projection
        )
        macs += 2 * per_pass  # plain and shifted windows
        macs += 8 * n * c_out  # trilinear devoxelization
        c_in = c_out
    macs += n * sum(cfg.widths) * d  # skip-connection projection
    macs *= 2  # source and target encoders
    macs += n * n * d  # matching cost
    macs += n * n * 3  # correspondence barycenter
    return 2 * macs


def count_params_flops(cfg, n_points):
    """Analytic (params in millions, forward FLOPs in billions) for a config."""
    return count_params(cfg) / 1e6, count_flops(cfg, n_points) / 1e9


@dataclass
class EvalReport:
    epe: float
    as_pct: float
    ar_pct: float
    out_pct: float
    n: int
    params_m: float = 0.0
    flops_g: float = 0.0

    def as_dict(self):
        return {
            "epe": self.epe,
            "as_pct": self.as_pct,
            "ar_pct": self.ar_pct,
            "out_pct": self.out_pct,
            "n": self.n,
            "params_m": self.params_m,
            "flops_g": self.flops_g,
        }

    def format(self):
        lines = [f"{k} = {v:.6f}" if isinstance(v, float) else f"{k} = {v}" for k, v in self.as_dict().items()]
        return "\n".join(lines)


def evaluate(pred, gt, cfg=None):
    """Full evaluation report for a predicted flow against ground truth.

    Args:
        pred: FlowField or (N, 3) array of predicted flow.
        gt: FlowField or (N, 3) array of ground-truth flow.
        cfg: Optional Config; when given, analytic parameter and FLOP
            counts at this N are included.

    Returns:
        EvalReport with EPE, AS, AR, Out percentages and counts.
    """
    p = _vectors(pred)
    n = p.shape[0]
    params_m, flops_g = count_params_flops(cfg, n) if cfg is not None else (0.0, 0.0)
    return EvalReport(
        epe=epe(pred, gt),
        as_pct=accuracy_strict(pred, gt),
        ar_pct=accuracy_relaxed(pred, gt),
        out_pct=outliers(pred, gt),
        n=n,
        params_m=params_m,
        flops_g=flops_g,
    )
