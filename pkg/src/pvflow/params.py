"""Parameter registry: names, shapes, seeded initialization, tape binding.

Every learnable tensor has a fixed name and a place in a fixed registry order;
initialization draws from one seeded PCG64 stream in that order, so a (seed,
config) pair pins every weight byte.  Storage is float32; binding casts to the
configured compute dtype and wraps tensors as leaf Vars on a tape.
"""

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import ShapeError
from .voxel import AttentionParams


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    fan_in: int


def layer_widths(cfg):
    """Channel widths entering each fusion layer: input, then the three layers."""
    return (3 + cfg.d_s,) + tuple(cfg.widths)


def registry(cfg):
    """Fixed-order list of every learnable tensor for this config."""
    specs = []

    def mlp(prefix, widths):
        for j, (cin, cout) in enumerate(zip(widths, widths[1:])):
            specs.append(ParamSpec(f"{prefix}.layer{j}.w", (cout, cin), cin))
            specs.append(ParamSpec(f"{prefix}.layer{j}.b", (cout,), cin))

    mlp("usfe.mlp", (6, cfg.d_s, cfg.d_s))
    chain = layer_widths(cfg)
    for l in (1, 2, 3):
        cin, cout = chain[l - 1], chain[l]
        mlp(f"point.layer{l}.mlp", (3 + cin, cout, cout))
        specs.append(ParamSpec(f"voxel.layer{l}.proj.w", (cout, cin), cin))
        specs.append(ParamSpec(f"voxel.layer{l}.proj.b", (cout,), cin))
        for nm in ("wq", "wk", "wv", "wo"):
            specs.append(ParamSpec(f"voxel.layer{l}.{nm}", (cout, cout), cout))
        specs.append(ParamSpec(f"voxel.layer{l}.pos", (cout, 3), 3))
    total = sum(chain[1:])
    specs.append(ParamSpec("fuse.proj.w", (cfg.d, total), total))
    specs.append(ParamSpec("fuse.proj.b", (cfg.d,), total))
    return specs


def init_params(cfg):
    """Seeded uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) init, float32 storage."""
    rng = np.random.default_rng(cfg.seed)
    out = {}
    for spec in registry(cfg):
        bound = np.sqrt(1.0 / spec.fan_in)
        out[spec.name] = rng.uniform(-bound, bound, size=spec.shape).astype(
            np.float32
        )
    return out


def count_params(cfg):
    return sum(int(np.prod(s.shape)) for s in registry(cfg))


def validate_params(params, cfg):
    """Check a loaded name->array dict against the registry."""
    specs = {s.name: s for s in registry(cfg)}
    missing = sorted(set(specs) - set(params))
    if missing:
        raise ShapeError(f"missing parameters: {missing[:4]}{'...' if len(missing) > 4 else ''}")
    extra = sorted(set(params) - set(specs))
    if extra:
        raise ShapeError(f"unknown parameters: {extra[:4]}{'...' if len(extra) > 4 else ''}")
    for name, spec in specs.items():
        if tuple(params[name].shape) != spec.shape:
            raise ShapeError(
                f"{name}: expected shape {spec.shape}, got {tuple(params[name].shape)}"
            )


@dataclass
class SetConvParams:
    mlp: T.MlpParams
    k: int
    post_norm: bool = True


@dataclass
class VoxelLayerParams:
    proj_w: object
    proj_b: object
    attn: AttentionParams


@dataclass
class PipelineParams:
    """Tape-bound views of every tensor, grouped by pipeline role."""

    usfe: T.MlpParams
    point: list  # 3 x SetConvParams
    voxel: list  # 3 x VoxelLayerParams
    fuse_w: object
    fuse_b: object
    leaves: dict  # name -> Var, for gradient collection


def assemble_params(leaves, cfg):
    """Group a name -> Var (or array) dict into PipelineParams."""

    def mlp(prefix, n_layers, norm_hidden):
        layers = []
        for j in range(n_layers):
            layers.append(
                T.MlpLayer(
                    leaves[f"{prefix}.layer{j}.w"],
                    leaves[f"{prefix}.layer{j}.b"],
                    norm=(norm_hidden and j < n_layers - 1),
                )
            )
        return T.MlpParams(layers)

    point = [
        SetConvParams(mlp(f"point.layer{l}.mlp", 2, norm_hidden=True), cfg.k_sc)
        for l in (1, 2, 3)
    ]
    voxelp = [
        VoxelLayerParams(
            leaves[f"voxel.layer{l}.proj.w"],
            leaves[f"voxel.layer{l}.proj.b"],
            AttentionParams(
                leaves[f"voxel.layer{l}.wq"],
                leaves[f"voxel.layer{l}.wk"],
                leaves[f"voxel.layer{l}.wv"],
                leaves[f"voxel.layer{l}.wo"],
                leaves[f"voxel.layer{l}.pos"],
                heads=cfg.h,
                window=cfg.w,
            ),
        )
        for l in (1, 2, 3)
    ]
    return PipelineParams(
        usfe=mlp("usfe.mlp", 2, norm_hidden=False),
        point=point,
        voxel=voxelp,
        fuse_w=leaves["fuse.proj.w"],
        fuse_b=leaves["fuse.proj.b"],
        leaves=leaves,
    )


def bind_params(params, cfg, tape):
    """Wrap a name->array dict as Vars on ``tape`` in the compute dtype."""
    validate_params(params, cfg)
    leaves = {
        k: tape.var(np.ascontiguousarray(v, dtype=cfg.dtype), k)
        for k, v in params.items()
    }
    return assemble_params(leaves, cfg)
