"""Correspondence and flow: cosine matching cost, entropic optimal transport,
soft correspondences, test-time refinement, and the self-supervised loss.

Sinkhorn runs in the log domain with uniform marginals 1/N.  The inference
path is plain float64 numpy with an early marginal-deviation stop; the
training path unrolls a fixed iteration count on the tape so gradients flow
through the solver into the encoder.
"""

from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import fusion as FU
from . import geometry as G
from . import params as PR
from . import tape as T
from .errors import ShapeError, UnequalSizes

NORM_FLOOR = 1e-12  # guard for zero-norm feature rows in the cosine cost
MAX_HALVINGS = 60  # line-search budget per refinement step
REFINE_K = 32  # smoothness neighborhood in the refinement objective


@dataclass
class TransportPlan:
    values: np.ndarray  # (N, N) float64, non-negative
    epsilon: float
    iterations: int
    converged: bool


@dataclass
class FlowField:
    vectors: np.ndarray  # (N, 3) meters
    stage: str  # "initial" | "refined"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != 3:
            raise ShapeError(f"flow must be N x 3, got {self.vectors.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("flow vectors must be finite")


def _arr(x):
    if isinstance(x, FU.FeatureMatrix):
        return x.values.value
    if isinstance(x, T.Var):
        return x.value
    return np.asarray(x)


def matching_cost(f_s, f_t):
    """c(i,j) = 1 - cos(f_i, g_j); zero-norm rows cost 1 against everything."""
    a, b = _arr(f_s).astype(np.float64), _arr(f_t).astype(np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature widths differ: {a.shape} vs {b.shape}")
    na = np.maximum(np.linalg.norm(a, axis=1), NORM_FLOOR)
    nb = np.maximum(np.linalg.norm(b, axis=1), NORM_FLOOR)
    c = 1.0 - (a @ b.T) / np.outer(na, nb)
    return np.maximum(c, 0.0)


def matching_cost_t(f_s, f_t):
    """Tape version of matching_cost (no clamp at 0: keeps gradients exact)."""
    gram = T.matmul(f_s, T.transpose(f_t))
    ns = T.sqrt(T.maximum_scalar(T.rowsum(T.square(f_s)), NORM_FLOOR**2))
    nt = T.sqrt(T.maximum_scalar(T.rowsum(T.square(f_t)), NORM_FLOOR**2))
    denom = T.matmul(ns, T.transpose(nt))
    return T.sub(1.0, T.div(gram, denom))


def sinkhorn(cost, epsilon, max_iters, tol_marg):
    """Log-domain Sinkhorn with uniform marginals 1/N on both sides.

    Stops early once both marginal max-deviations drop to tol_marg; otherwise
    runs max_iters and returns the plan with converged=False.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    c = np.asarray(cost, dtype=np.float64)
    n, m = c.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    log_a, log_b = np.log(a), np.log(b)
    k = -c / epsilon
    u = np.zeros(n)
    v = np.zeros(m)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        u = log_a - _lse_rows(k + v[None, :])
        v = log_b - _lse_cols(k + u[:, None])
        plan = np.exp(k + u[:, None] + v[None, :])
        row_dev = np.abs(plan.sum(axis=1) - a).max()
        col_dev = np.abs(plan.sum(axis=0) - b).max()
        if max(row_dev, col_dev) <= tol_marg:
            converged = True
            break
    plan = np.exp(k + u[:, None] + v[None, :])
    return TransportPlan(plan, epsilon, it, converged)


def _lse_rows(x):
    m = x.max(axis=1, keepdims=True)
    return (np.log(np.exp(x - m).sum(axis=1, keepdims=True)) + m)[:, 0]


def _lse_cols(x):
    m = x.max(axis=0, keepdims=True)
    return (np.log(np.exp(x - m).sum(axis=0, keepdims=True)) + m)[0, :]


def sinkhorn_unrolled(cost, epsilon, iters):
    """Fixed-iteration Sinkhorn on the tape; returns the (N, N) plan Var."""
    n, m = cost.value.shape
    tape = cost.tape
    k = T.scale(cost, -1.0 / epsilon)
    log_a = tape.var(np.full((n, 1), -np.log(n), dtype=cost.value.dtype))
    log_b = tape.var(np.full((1, m), -np.log(m), dtype=cost.value.dtype))
    u = tape.var(np.zeros((n, 1), dtype=cost.value.dtype))
    v = tape.var(np.zeros((1, m), dtype=cost.value.dtype))
    for _ in range(iters):
        u = T.sub(log_a, T.logsumexp_rows(T.add(k, v)))
        v = T.sub(log_b, T.logsumexp_cols(T.add(k, u)))
    return T.exp(T.add(T.add(k, u), v))


def soft_correspondence(plan, target):
    """Row-normalized barycenter of target points: q_hat = W q.

    Rows with zero mass fall back to uniform weights; returns (points,
    zero_row_mask).
    """
    w = plan.values if isinstance(plan, TransportPlan) else np.asarray(plan)
    rowsum = w.sum(axis=1)
    zero = rowsum <= 0.0
    if zero.any():
        w = w.copy()
        w[zero] = 1.0
        rowsum = w.sum(axis=1)
    q_hat = (w / rowsum[:, None]) @ target.positions
    return q_hat, zero


def initial_flow(source, correspondences):
    """f_i = q_hat_i - p_i."""
    corr = np.asarray(correspondences, dtype=np.float64)
    if corr.shape != source.positions.shape:
        raise ShapeError("correspondences must match source shape")
    return FlowField(corr - source.positions, stage="initial")


def flow_objective(source_pos, q_hat, flow, lam, nbr):
    """J(F) = sum ||p + f - q_hat||^2 + lam * sum_i sum_k ||f_i - f_k||^2."""
    j = float(((source_pos + flow - q_hat) ** 2).sum())
    if lam > 0.0 and nbr is not None:
        j += lam * float(((flow[:, None, :] - flow[nbr]) ** 2).sum())
    return j


def flow_gradient(source_pos, q_hat, flow, lam, nbr):
    g = 2.0 * (source_pos + flow - q_hat)
    if lam > 0.0 and nbr is not None:
        d = flow[:, None, :] - flow[nbr]  # (N, k, 3)
        g += 2.0 * lam * d.sum(axis=1)
        np.add.at(g, nbr.reshape(-1), -2.0 * lam * d.reshape(-1, 3))
    return g


def refine_flow(
    source,
    correspondences,
    initial,
    lam_smooth,
    steps,
    step_size,
    k=REFINE_K,
    return_trace=False,
):
    """Descend J with backtracking (halve until J decreases); q_hat fixed.

    Returns the best iterate; J is non-increasing across accepted steps.  If
    no halved step improves J (already optimal), the input is returned.
    """
    p = source.positions
    q_hat = np.asarray(correspondences, dtype=np.float64)
    nbr = None
    if lam_smooth > 0.0:
        nbr = G.knn(source, min(k, source.n - 1)).indices
    f = initial.vectors.copy()
    best = flow_objective(p, q_hat, f, lam_smooth, nbr)
    trace = [best]
    for _ in range(steps):
        grad = flow_gradient(p, q_hat, f, lam_smooth, nbr)
        s = step_size
        accepted = False
        for _ in range(MAX_HALVINGS):
            trial = f - s * grad
            j = flow_objective(p, q_hat, trial, lam_smooth, nbr)
            if j < best:
                f, best, accepted = trial, j, True
                break
            s *= 0.5
        if not accepted:
            break
        trace.append(best)
    result = FlowField(f, stage="refined")
    return (result, np.array(trace)) if return_trace else result


def self_supervised_loss(source, target, f_s, f_t, cfg):
    """Nearest-target + flow-smoothness loss through unrolled Sinkhorn.

    ``f_s`` / ``f_t`` are embedding Vars on a recording tape; the returned
    scalar Var differentiates back into all encoder parameters.
    """
    fs = f_s.values if isinstance(f_s, FU.FeatureMatrix) else f_s
    ft = f_t.values if isinstance(f_t, FU.FeatureMatrix) else f_t
    tape = fs.tape
    n = source.n
    cost = matching_cost_t(fs, ft)
    plan = sinkhorn_unrolled(cost, cfg.epsilon, cfg.sinkhorn_iters)
    w = T.div(plan, T.rowsum(plan))
    q = target.positions.astype(fs.value.dtype)
    q_hat = T.matmul(w, tape.var(q))
    # min_j ||q_hat_i - q_j||^2 via the expanded pairwise square distance
    sq_qhat = T.rowsum(T.square(q_hat))
    sq_q = (q * q).sum(axis=1)[None, :]
    pair = T.add(
        T.sub(sq_qhat, T.scale(T.matmul(q_hat, tape.var(q.T.copy())), 2.0)),
        tape.var(sq_q),
    )
    nearest = T.mean_all(T.row_min(pair))
    if cfg.lambda_c > 0.0:
        kk = min(cfg.k_sc, n - 1)
        nbr = G.knn(source, kk).indices
        p = source.positions.astype(fs.value.dtype)
        flow = T.sub(q_hat, tape.var(p))
        own = T.gather_rows(flow, np.repeat(np.arange(n), kk))
        other = T.gather_rows(flow, nbr.reshape(-1))
        smooth = T.scale(T.sum_all(T.square(T.sub(own, other))), cfg.lambda_c / n)
        return T.add(nearest, smooth)
    return nearest


def embed_cloud(cloud, bound, cfg, tape):
    surface = G.usfe(cloud, cfg.k_usfe, bound.usfe, tape)
    return FU.embed(cloud, surface, bound, cfg, tape)


def estimate_details(source, target, weights, cfg):
    """Full pipeline with intermediates (plan, correspondences, both flows)."""
    if source.n != target.n:
        raise UnequalSizes(f"source has {source.n} points, target {target.n}")
    limit = 1 if cfg.deterministic else None
    with threadpool_limits(limits=limit):
        tape = T.Tape(record=False)
        bound = PR.bind_params(weights, cfg, tape)
        f_s = embed_cloud(source, bound, cfg, tape)
        f_t = embed_cloud(target, bound, cfg, tape)
        cost = matching_cost(f_s, f_t)
        plan = sinkhorn(cost, cfg.epsilon, cfg.sinkhorn_iters, cfg.tol_marg)
        q_hat, zero_rows = soft_correspondence(plan, target)
        init = initial_flow(source, q_hat)
        refined = refine_flow(
            source,
            q_hat,
            init,
            cfg.lambda_smooth,
            cfg.refine_steps,
            cfg.step_size,
        )
    return {
        "flow": refined,
        "initial": init,
        "plan": plan,
        "correspondences": q_hat,
        "zero_rows": zero_rows,
        "cost": cost,
    }


def estimate(source, target, weights, cfg):
    """usfe -> embed (shared weights) -> cost -> sinkhorn -> refine."""
    return estimate_details(source, target, weights, cfg)["flow"]
