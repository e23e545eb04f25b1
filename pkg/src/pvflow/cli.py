"""Command-line interface.

Subcommands: estimate, eval, features, gradcheck, fit, init-weights.
Exit codes: 0 on success, 1 on pipeline errors (message carries the error
class name), 2 on usage errors.
"""

import argparse
import contextlib
import glob
import os
import sys
from dataclasses import replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import fileio as IO
from . import metrics as M
from . import params as PR
from . import tape as T
from .config import Config, load_config, parse_config
from .errors import PvflowError
from .fit import fit
from .flow import embed_cloud, estimate_details, self_supervised_loss
from .geometry import PointCloud, usfe


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else Config()
    if args.set:
        cfg = parse_config("\n".join(args.set), base=cfg)
    return cfg


def _threads_ctx(args):
    if args.threads:
        return threadpool_limits(limits=args.threads)
    return contextlib.nullcontext()


def _cmd_estimate(args):
    cfg = _load_cfg(args)
    source = IO.read_cloud(args.source)
    target = IO.read_cloud(args.target)
    weights = IO.read_weights(args.weights)
    with _threads_ctx(args):
        details = estimate_details(source, target, weights, cfg)
    IO.write_flow(args.out, details["flow"])
    if args.dump_correspondences:
        IO.write_cloud(args.dump_correspondences, PointCloud(details["correspondences"]))
    if args.plot:
        _write_plot(args.plot, source, details)
    print(f"estimate: wrote {source.n} flow vectors to {args.out}")
    return 0


def _write_plot(path, source, details):
    flow = details["flow"].vectors
    q_hat = details["correspondences"]
    residual = np.linalg.norm(source.positions + flow - q_hat, axis=1)
    with open(path, "w") as fh:
        fh.write("x,y,z,fx,fy,fz,residual\n")
        for p, f, r in zip(source.positions, flow, residual):
            fh.write(f"{p[0]:.9g},{p[1]:.9g},{p[2]:.9g},{f[0]:.9g},{f[1]:.9g},{f[2]:.9g},{r:.9g}\n")


def _cmd_eval(args):
    cfg = _load_cfg(args)
    pred = IO.read_flow(args.pred)
    gt = IO.read_flow(args.gt)
    report = M.evaluate(pred, gt, cfg)
    print(report.format())
    return 0


def _cmd_features(args):
    cfg = _load_cfg(args)
    cloud = IO.read_cloud(args.cloud)
    weights = IO.read_weights(args.weights) if args.weights else PR.init_params(cfg)
    with _threads_ctx(args):
        tape = T.Tape(record=False)
        bound = PR.bind_params(weights, cfg, tape)
        surf = usfe(cloud, cfg.k_usfe, bound.usfe, tape)
    IO.write_cloud(args.out, cloud, features=surf.embedding.value)
    print(f"features: wrote {cloud.n} x {surf.embedding.value.shape[1]} features to {args.out}")
    return 0


def _gradcheck_cases():
    rng = np.random.default_rng(7)

    def mlp_case(tp, v):
        params = T.MlpParams(
            [T.MlpLayer(v["w0"], v["b0"], norm=True), T.MlpLayer(v["w1"], v["b1"])]
        )
        return T.sum_all(T.square(T.mlp_forward(v["x"], params)))

    mlp_theta = {
        "x": rng.normal(size=(12, 5)),
        "w0": rng.normal(size=(7, 5)) * 0.5,
        "b0": rng.normal(size=7) * 0.1,
        "w1": rng.normal(size=(4, 7)) * 0.5,
        "b1": rng.normal(size=4) * 0.1,
    }

    def softmax_case(tp, v):
        return T.sum_all(T.square(T.softmax_rows(v["x"])))

    def rowmin_case(tp, v):
        return T.sum_all(T.row_min(T.square(v["x"])))

    cfg = Config(d_s=4, widths=(8, 8, 8), d=8, h=2, r=4, w=2, k_sc=4, k_usfe=4, mode="f64", sinkhorn_iters=8)
    source = PointCloud(rng.uniform(-1, 1, size=(12, 3)))
    target = PointCloud(source.positions + rng.normal(size=(12, 3)) * 0.1)
    weights = {k: v.astype(np.float64) for k, v in PR.init_params(cfg).items()}

    def chain_case(tp, v):
        bound = PR.assemble_params(v, cfg)
        f_s = embed_cloud(source, bound, cfg, tp)
        f_t = embed_cloud(target, bound, cfg, tp)
        return self_supervised_loss(source, target, f_s, f_t, cfg)

    return [
        ("mlp", mlp_case, mlp_theta, 1e-4, None),
        ("softmax", softmax_case, {"x": rng.normal(size=(6, 5))}, 1e-4, None),
        ("row_min", rowmin_case, {"x": rng.normal(size=(6, 5))}, 1e-4, None),
        ("pipeline_loss", chain_case, weights, 1e-3, 4),
    ]


def _cmd_gradcheck(args):
    del args
    failed = 0
    for name, fn, theta, tol, max_coords in _gradcheck_cases():
        report = T.grad_check(fn, theta, tol=tol, max_coords_per_param=max_coords, seed=0)
        status = "PASS" if report.passed else "FAIL"
        print(f"gradcheck {name}: {status} (max rel err {report.max_rel_err:.3e}, tol {tol:g})")
        failed += 0 if report.passed else 1
    return 0 if failed == 0 else 1


def _collect_pairs(pairs_dir):
    sources = sorted(glob.glob(os.path.join(pairs_dir, "*_s.sfpc")))
    pairs = []
    for spath in sources:
        tpath = spath[: -len("_s.sfpc")] + "_t.sfpc"
        if os.path.exists(tpath):
            pairs.append((IO.read_cloud(spath), IO.read_cloud(tpath)))
    if not pairs:
        raise FileNotFoundError(f"no *_s.sfpc/*_t.sfpc pairs under {pairs_dir}")
    return pairs


def _cmd_fit(args):
    cfg = _load_cfg(args)
    pairs = _collect_pairs(args.pairs)
    start = IO.read_weights(args.start) if args.start else None
    with _threads_ctx(args):
        result = fit(pairs, cfg, steps=args.steps, lr=args.lr, weights=start)
    IO.write_weights(args.weights, result.weights)
    print(
        f"fit: {len(pairs)} pairs, {args.steps} steps, "
        f"loss {result.initial_loss:.6f} -> {result.final_loss:.6f}; wrote {args.weights}"
    )
    return 0


def _cmd_init_weights(args):
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    weights = PR.init_params(cfg)
    IO.write_weights(args.out, weights)
    total = sum(int(np.prod(w.shape)) for w in weights.values())
    print(f"init-weights: seed {cfg.seed}, {total} parameters, wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="pvflow", description="Point-voxel scene-flow pipeline")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("--threads", type=int, help="cap library thread pools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate scene flow between two clouds")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-correspondences")
    p.add_argument("--plot", help="CSV dump of per-point flow and residual")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("eval", help="compare a predicted flow file against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("features", help="dump umbrella surface features for a cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("fit", help="desk-scale self-supervised fitting")
    p.add_argument("--pairs", required=True, help="directory of *_s.sfpc / *_t.sfpc pairs")
    p.add_argument("--weights", required=True, help="output weights path")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--start", help="warm-start weights")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("init-weights", help="write freshly initialized weights")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_init_weights)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PvflowError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
