"""Command-line entry point.

``latentforge run`` drives the staged pipeline from a JSON run config;
``latentforge sim pool`` and ``latentforge sim embed`` expose the analytic
backend as standalone artifact writers, so downstream stages consume its
output through the same files a model bridge would produce.

Exit codes: 0 success, 2 config error, 3 dependency error, 4 data error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import fileio as fio
from . import pipeline
from . import simworld as sw
from .errors import (
    ConfigError,
    DataError,
    DependencyError,
    FormatError,
    InputError,
    InvariantError,
    IoError,
    LatentForgeError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_DATA = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute pipeline stages from a run config")
    run.add_argument("--config", required=True, help="JSON run configuration")
    run.add_argument("--run-dir", required=True, help="run directory for artifacts and manifest")
    run.add_argument("--stages", default=None, help="comma-separated subset of stages to run")
    run.add_argument("--seed-override", type=int, default=None)
    run.add_argument("--t-ip", type=float, default=None, help="override the identity-preservation threshold")

    sim = sub.add_parser("sim", help="analytic backend artifact writers")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)

    pool = sim_sub.add_parser("pool", help="sample a labeled candidate pool")
    pool.add_argument("--n", type=int, required=True)
    pool.add_argument("--dim", type=int, default=64)
    pool.add_argument("--embed-dim", type=int, default=32)
    pool.add_argument("--seed", type=int, default=0)
    pool.add_argument("--noise-sigma", type=float, default=0.0)
    pool.add_argument("--out-dir", required=True)

    emb = sim_sub.add_parser("embed", help="embed latents from a LATV file")
    emb.add_argument("--latents", required=True)
    emb.add_argument("--dim", type=int, default=64)
    emb.add_argument("--embed-dim", type=int, default=32)
    emb.add_argument("--seed", type=int, default=0)
    emb.add_argument("--out", required=True)
    emb.add_argument("--sidecar", default=None, help="optional sample_id sidecar to copy row order from")
    return parser


def _cmd_run(args) -> int:
    stages = [s.strip() for s in args.stages.split(",") if s.strip()] if args.stages else None
    pipeline.execute(
        args.config,
        args.run_dir,
        stage_filter=stages,
        seed_override=args.seed_override,
        t_ip_override=args.t_ip,
    )
    return EXIT_OK


def _cmd_sim_pool(args) -> int:
    from pathlib import Path

    world = sw.create_world(dim=args.dim, embed_dim=args.embed_dim, seed=args.seed, noise_sigma=args.noise_sigma)
    samples = sw.sample_labeled_latents(world, args.n, seed=args.seed)
    out = Path(args.out_dir)
    fio.write_latv(out / "latents.latv", np.stack([s.latent for s in samples]))
    fio.write_csv(
        out / "labels.csv",
        pipeline.LABEL_COLUMNS,
        (
            (s.index, s.race, s.gender, s.age_bin, s.expression,
             f"{s.yaw:.8f}", f"{s.pitch:.8f}", f"{s.illumination:.8f}", f"{s.quality:.6f}")
            for s in samples
        ),
    )
    print(f"wrote {len(samples)} labeled latents to {out}")
    return EXIT_OK


def _cmd_sim_embed(args) -> int:
    world = sw.create_world(dim=args.dim, embed_dim=args.embed_dim, seed=args.seed)
    latents = fio.read_latv(args.latents)
    if latents.shape[1] != args.dim:
        raise ConfigError(f"latent dim {latents.shape[1]} != world dim {args.dim}")
    embedded = np.stack([sw.embed(world, w) for w in latents])
    fio.write_latv(args.out, embedded)
    if args.sidecar:
        mapping = fio.read_sidecar_csv(args.sidecar)
        fio.write_sidecar_csv(str(args.out) + ".sidecar.csv", mapping)
    print(f"embedded {latents.shape[0]} latents -> {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sim" and args.sim_command == "pool":
            return _cmd_sim_pool(args)
        if args.command == "sim" and args.sim_command == "embed":
            return _cmd_sim_embed(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (ConfigError, InputError, InvariantError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, IoError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LatentForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
