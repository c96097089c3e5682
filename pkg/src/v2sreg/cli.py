"""`v2s` command line: generate, voxelize, eval, inspect."""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import glob as globmod
import os
import re
import sys
import traceback

import numpy as np

from . import dataset, kernels, meshio
from .config import ConfigError, PipelineConfig, load_config
from .evaluation import Stopwatch, displacement_error, export_report
from .fields import (OpenSurfaceError, Sample, grid_spec_for, mls_smooth,
                     signed_distance_grid, unsigned_distance_grid)
from .geometry import SurfaceMesh
from .pipeline import run_sample
from .scenario import SampleMeta

ENV_DATA_ROOT = "V2S_DATA_ROOT"


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _effective_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) \
        else PipelineConfig()
    overrides = {}
    for flag, field in (("seed", "seed"), ("count", "count"),
                        ("res", "resolution"), ("workers", "workers"),
                        ("out", "out_root")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _resolve_out_root(cfg: PipelineConfig):
    root = cfg.out_root or os.environ.get(ENV_DATA_ROOT)
    if not root:
        raise ConfigError(
            f"no output root: pass --out, set out_root in the config, "
            f"or set {ENV_DATA_ROOT}")
    return root


def _seed_done(manifest, seed: int, out_root: str) -> bool:
    rec = manifest.records.get(seed)
    if rec is None:
        return False
    if not rec["accepted"]:
        return True
    return os.path.exists(os.path.join(out_root, rec["path"]))


def _generate_one(seed: int, cfg: PipelineConfig, out_root: str):
    """Worker body: run one seed, write its file if accepted."""
    try:
        run = run_sample(seed, cfg)
        path = None
        if run.sample is not None:
            path = dataset.sample_filename(seed)
            dataset.write_sample(run.sample, os.path.join(out_root, path))
        return seed, run.meta, path, None
    except Exception:
        meta = SampleMeta(seed=seed, accepted=False, reason="error")
        return seed, meta, None, traceback.format_exc()


def cmd_generate(args) -> int:
    cfg = _effective_config(args)
    out_root = _resolve_out_root(cfg)
    os.makedirs(out_root, exist_ok=True)
    print(f"config {cfg.hash()}")
    print(f"backend {kernels.backend()}")

    manifest_path = os.path.join(out_root, "manifest.jsonl")
    if os.path.exists(manifest_path):
        manifest = dataset.Manifest.load(manifest_path)
        have = manifest.header.get("config_hash")
        if have != cfg.hash():
            raise ConfigError(
                f"{manifest_path}: dataset was built with config "
                f"{have}, refusing to mix in {cfg.hash()}")
    else:
        manifest = dataset.Manifest.new(cfg.identity_dict())

    seeds = [cfg.seed + i for i in range(cfg.count)]
    todo = [s for s in seeds if not _seed_done(manifest, s, out_root)]
    print(f"{len(seeds)} seeds requested, {len(seeds) - len(todo)} already "
          f"done, {len(todo)} to run")

    timer = Stopwatch()

    def record(seed, meta, path, err):
        if err is not None:
            _warn(f"seed {seed} failed unexpectedly:\n{err}")
        manifest.add(seed, meta.accepted, meta.reason, path, meta)
        manifest.write(manifest_path)
        dt = timer.lap(f"seed{seed}")
        status = "accepted" if meta.accepted else f"discarded ({meta.reason})"
        print(f"seed {seed}: {status} [{dt:.1f}s]")

    if cfg.workers == 1:
        for seed in todo:
            record(*_generate_one(seed, cfg, out_root))
    else:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=cfg.workers) as pool:
            futs = [pool.submit(_generate_one, s, cfg, out_root)
                    for s in todo]
            for fut in concurrent.futures.as_completed(futs):
                record(*fut.result())

    manifest.write(manifest_path)
    counts = manifest.counts()
    print(f"attempted {counts['attempted']}, accepted {counts['accepted']}, "
          f"discarded {counts['attempted'] - counts['accepted']} "
          f"{counts['discarded']}")
    return 0


def _read_intraop(path, mls_radius):
    """Load the intraop input; meshes keep faces, point clouds may be
    MLS-smoothed."""
    verts = None
    try:
        mesh = meshio.read_surface(path)
        if mls_radius is None:
            return mesh
        verts = mesh.vertices
    except meshio.MeshIOError:
        verts = meshio.read_points(path)
    if mls_radius is not None:
        verts = mls_smooth(verts, mls_radius)
    return SurfaceMesh(vertices=verts,
                       triangles=np.zeros((0, 3), dtype=np.int32))


def cmd_voxelize(args) -> int:
    cfg = _effective_config(args)
    print(f"config {cfg.hash()}")
    print(f"backend {kernels.backend()}")
    out = args.out
    if not out:
        raise ConfigError("voxelize needs --out <file.v2sd>")
    mls_radius = args.mls_radius
    if mls_radius is not None and mls_radius <= 0:
        raise ConfigError("--mls-radius must be positive")

    preop = meshio.read_surface(args.preop)
    intraop = _read_intraop(args.intraop, mls_radius)
    spec = grid_spec_for(preop, intraop, cfg.resolution)
    try:
        sdf_p = signed_distance_grid(preop, spec)
    except OpenSurfaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    df_i = unsigned_distance_grid(intraop, spec)
    meta = SampleMeta(seed=args.seed if args.seed is not None else -1,
                      accepted=True, reason="ok")
    sample = Sample(sdf_p=sdf_p, df_i=df_i, u=None, meta=meta)
    dataset.write_sample(sample, out)
    print(f"wrote {out} (resolution {spec.resolution}, "
          f"spacing {spec.spacing:.6g} m)")
    return 0


_SEED_RE = re.compile(r"(\d{8})")


def _pred_seed(path, sample) -> int:
    if sample.meta is not None and sample.meta.seed >= 0:
        return sample.meta.seed
    m = _SEED_RE.search(os.path.basename(path))
    if not m:
        raise dataset.SampleFormatError(f"{path}: cannot infer sample seed")
    return int(m.group(1))


def cmd_eval(args) -> int:
    cfg = _effective_config(args)
    print(f"config {cfg.hash()}")
    manifest = dataset.Manifest.load(args.manifest)
    print(f"dataset {manifest.header.get('config_hash')}")
    root = os.path.dirname(os.path.abspath(args.manifest))
    by_seed = {r["seed"]: r for r in manifest.accepted_records()}

    pred_paths = sorted(globmod.glob(args.predictions))
    if not pred_paths:
        print(f"error: no predictions match {args.predictions!r}",
              file=sys.stderr)
        return 1

    stats = []
    for path in pred_paths:
        try:
            pred = dataset.read_sample(path)
            if pred.u is None:
                raise dataset.SampleFormatError("no displacement channels")
            seed = _pred_seed(path, pred)
            rec = by_seed.get(seed)
            if rec is None:
                raise dataset.SampleFormatError(
                    f"seed {seed} not in the manifest")
            gt = dataset.read_sample(os.path.join(root, rec["path"]))
            if pred.u.spec != gt.u.spec:
                raise dataset.SampleFormatError("grid spec mismatch")
            stats.append(displacement_error(
                pred.u, gt.u, gt.sdf_p,
                sample_id=f"{seed:08d}",
                visible_fraction=rec["meta"]["visible_fraction"]))
        except Exception as exc:
            _warn(f"{path}: skipped ({exc})")
    export_report(stats, args.out or "report.csv")
    if stats:
        mean = float(np.mean([s.mean_error for s in stats]))
        print(f"scored {len(stats)}/{len(pred_paths)} predictions, "
              f"mean error {mean:.6f} m")
    else:
        _warn("no predictions could be scored")
    print(f"wrote {args.out or 'report.csv'}")
    return 0


def cmd_inspect(args) -> int:
    cfg = _effective_config(args)
    print(f"config {cfg.hash()}")
    path = args.path
    header = dataset.peek_header(path)
    names = [n for n, _ in dataset.channel_layout(header['descriptor'])]
    print(f"file        {path} ({os.path.getsize(path)} bytes)")
    print(f"format      V2SD v{header['version']}")
    print(f"resolution  {header['resolution']}")
    print(f"spacing     {header['spacing']:.8g} m")
    print(f"origin      ({header['origin'][0]:.8g}, "
          f"{header['origin'][1]:.8g}, {header['origin'][2]:.8g})")
    print(f"channels    {header['descriptor']} = {'+'.join(names)}")
    sample = dataset.read_sample(path)
    for name in names:
        grid = getattr(sample, name)
        v = grid.values
        print(f"  {name}: min {v.min():+.6g} max {v.max():+.6g} "
              f"mean {v.mean():+.6g}")
    if sample.meta is not None:
        for key, value in sorted(sample.meta.to_dict().items()):
            print(f"  meta.{key} = {value}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="v2s",
        description="Synthetic volume-to-surface registration data pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="produce dataset samples")
    gen.add_argument("--config", help="JSON pipeline config")
    gen.add_argument("--seed", type=int, help="first sample seed")
    gen.add_argument("--count", type=int, help="number of seeds to attempt")
    gen.add_argument("--res", type=int, help="grid resolution")
    gen.add_argument("--out", help="output dataset directory")
    gen.add_argument("--workers", type=int, help="parallel sample workers")
    gen.set_defaults(func=cmd_generate)

    vox = sub.add_parser("voxelize",
                         help="voxelize a preop mesh + intraop surface")
    vox.add_argument("preop", help="closed preop surface mesh (.ply)")
    vox.add_argument("intraop", help="intraop surface mesh or point cloud")
    vox.add_argument("--config", help="JSON pipeline config")
    vox.add_argument("--res", type=int, help="grid resolution")
    vox.add_argument("--out", help="output sample file (.v2sd)")
    vox.add_argument("--seed", type=int, help="seed recorded in the sidecar")
    vox.add_argument("--mls-radius", type=float, nargs="?", const=0.005,
                     default=None, dest="mls_radius",
                     help="smooth an intraop point cloud with a moving "
                          "least squares filter of this radius (m)")
    vox.set_defaults(func=cmd_voxelize)

    ev = sub.add_parser("eval", help="score displacement predictions")
    ev.add_argument("predictions", help="glob of predicted .v2sd files")
    ev.add_argument("manifest", help="dataset manifest.jsonl")
    ev.add_argument("--config", help="JSON pipeline config")
    ev.add_argument("--out", help="report CSV path (default report.csv)")
    ev.set_defaults(func=cmd_eval)

    ins = sub.add_parser("inspect", help="print a sample file's header")
    ins.add_argument("path", help=".v2sd file")
    ins.add_argument("--config", help="JSON pipeline config")
    ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
