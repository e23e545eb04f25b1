"""Desk-scale self-supervised fitting of the encoder weights with Adam.

Master weights are kept in float64; each step runs one (source, target) pair
through the recorded pipeline loss, backpropagates into every leaf tensor,
and applies a bias-corrected Adam update.  Weights returned for serialization
are cast to float32.
"""

from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import tape as T
from .errors import ShapeError
from .flow import embed_cloud, self_supervised_loss
from .params import bind_params, init_params

MAX_FIT_POINTS = 1024


@dataclass
class FitResult:
    weights: dict
    losses: list = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0


def _pair_loss(source, target, master, cfg, record):
    tape = T.Tape(record=record)
    bound = bind_params(master, cfg, tape)
    f_s = embed_cloud(source, bound, cfg, tape)
    f_t = embed_cloud(target, bound, cfg, tape)
    loss = self_supervised_loss(source, target, f_s, f_t, cfg)
    return tape, bound, loss


def mean_loss(pairs, weights, cfg):
    """Mean self-supervised loss over pairs without recording gradients."""
    total = 0.0
    for source, target in pairs:
        _, _, loss = _pair_loss(source, target, weights, cfg, record=False)
        total += float(loss.value)
    return total / len(pairs)


def fit(pairs, cfg, steps=200, lr=1e-3, weights=None, betas=(0.9, 0.999), eps=1e-8):
    """Fit encoder weights on (source, target) cloud pairs.

    Args:
        pairs: Sequence of (PointCloud, PointCloud) tuples, cycled per step.
        cfg: Config; seed initializes weights when none are given.
        steps: Number of Adam updates.
        lr: Adam learning rate.
        weights: Optional name -> array dict to start from.
        betas: Adam moment decay rates.
        eps: Adam denominator floor.

    Returns:
        FitResult with float32 weights, the per-step training losses, and
        the mean loss over all pairs before and after fitting.
    """
    if not pairs:
        raise ValueError("fit needs at least one cloud pair")
    for source, target in pairs:
        if source.n > MAX_FIT_POINTS or target.n > MAX_FIT_POINTS:
            raise ShapeError(
                f"fit is desk-scale only: clouds must have at most {MAX_FIT_POINTS} points"
            )
    start = weights if weights is not None else init_params(cfg)
    master = {k: np.asarray(v, dtype=np.float64).copy() for k, v in start.items()}
    m = {k: np.zeros_like(v) for k, v in master.items()}
    v = {k: np.zeros_like(val) for k, val in master.items()}
    b1, b2 = betas
    limit = 1 if cfg.deterministic else None
    with threadpool_limits(limits=limit):
        result = FitResult(weights={})
        result.initial_loss = mean_loss(pairs, master, cfg)
        for t in range(1, steps + 1):
            source, target = pairs[(t - 1) % len(pairs)]
            tape, bound, loss = _pair_loss(source, target, master, cfg, record=True)
            tape.backward(loss)
            result.losses.append(float(loss.value))
            for name, leaf in bound.leaves.items():
                g = np.zeros_like(master[name]) if leaf.grad is None else leaf.grad.astype(np.float64)
                m[name] = b1 * m[name] + (1.0 - b1) * g
                v[name] = b2 * v[name] + (1.0 - b2) * g * g
                m_hat = m[name] / (1.0 - b1**t)
                v_hat = v[name] / (1.0 - b2**t)
                master[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
        result.final_loss = mean_loss(pairs, master, cfg)
    result.weights = {k: val.astype(np.float32) for k, val in master.items()}
    return result
