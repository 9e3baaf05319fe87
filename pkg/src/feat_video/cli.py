"""Command line entry point: ``feat-video {train,sample,bench,ablate,gradcheck,count}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .backbone import FEAT_L, FEAT_S, count_flops, count_params
from .config import format_config, load_config
from .training import TrainConfig

log = logging.getLogger("feat_video")


def _load(args) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def cmd_train(args) -> int:
    from .training import train

    config = _load(args)
    out = args.out_dir or "runs/train"
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as fh:
        fh.write(format_config(config))
    result = train(config, out_dir=out, val_every=args.val_every)
    print(f"steps={len(result.losses)} val_eps_mse={result.val_mse:.5f} checkpoint={result.checkpoint}")
    return 0


def cmd_sample(args) -> int:
    from .checkpoint import fingerprint, load_checkpoint
    from .diffusion import make_schedule, sample
    from .export import write_sample
    from .numerics import RngStream

    if not args.checkpoint:
        print("sample needs --checkpoint", file=sys.stderr)
        return 2
    model, ema, meta = load_checkpoint(args.checkpoint)
    seed = 0 if args.seed is None else args.seed
    c = model.config
    clips = sample(
        model,
        (args.n, c.frames, c.channels, c.height, c.width),
        make_schedule(c.timesteps),
        RngStream(seed).spawn("sampling"),
        ema=None if args.no_ema else ema,
    ).numpy()
    out = args.out_dir or "runs/samples"
    fp = meta.get("fingerprint") or fingerprint(model)
    for i, clip in enumerate(clips):
        write_sample(clip, out, seed=seed, fingerprint=fp, prefix=f"sample{i:03d}")
    print(f"wrote {len(clips)} clip(s) to {out}")
    return 0


def cmd_bench(args) -> int:
    from .bench import bench, doubling_ratios, write_bench_csv

    sizes = [int(s) for s in args.sizes.split(",")]
    rows = bench(sizes=sizes, D=args.dim, reps=args.reps, seed=args.seed or 0)
    out = args.out_dir or "runs/bench"
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "bench.csv")
    write_bench_csv(rows, path)
    for r in rows:
        if r.note:
            print(f"{r.kernel} T={r.T}: {r.note}")
    for name, ratios in doubling_ratios(rows).items():
        print(name, " ".join(f"{T}->{2 * T}: x{ratio:.2f}" for T, ratio in ratios))
    print(f"wrote {path}")
    return 0


def cmd_ablate(args) -> int:
    from .bench import ablate

    config = _load(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    report = ablate(config, seeds=seeds)
    out = args.out_dir or "runs/ablate"
    os.makedirs(out, exist_ok=True)
    report.write_csv(os.path.join(out, "ablation.csv"))
    for v in report.results:
        print(f"{v:12s} mean val eps-MSE {report.mean(v):.5f}")
    print(f"ordering holds: {report.ordering_holds()}; full beats baseline on {report.wins()}/{len(seeds)} seeds")
    return 0


def cmd_gradcheck(args) -> int:
    from .verification import BLOCK_CASES, GRAD_CASES, run_gradcheck_suite

    rows = run_gradcheck_suite(seeds=range(args.seeds), cases=GRAD_CASES + BLOCK_CASES)
    worst = {}
    for name, _, err in rows:
        worst[name] = max(err, worst.get(name, 0.0))
    failed = 0
    for name, err in worst.items():
        ok = err < args.tol
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name:22s} max_rel_err={err:.3e}")
    return 1 if failed else 0


def cmd_count(args) -> int:
    from .resvgm import resvgm_param_overhead

    if args.preset:
        model_cfg = {"S": FEAT_S, "L": FEAT_L}[args.preset]
    else:
        model_cfg = _load(args).model
    twin = count_flops(model_cfg, mixer="quadratic")
    info = {
        "params": count_params(model_cfg),
        "flops": count_flops(model_cfg),
        "flops_quadratic_twin": twin,
        "resvgm_overhead": resvgm_param_overhead(model_cfg) if model_cfg.guided else 0.0,
        "tokens": model_cfg.n_tokens,
    }
    print(json.dumps(info, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feat-video", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--checkpoint")
        return p

    p = common(sub.add_parser("train", help="train a denoiser on synthetic clips"))
    p.add_argument("--val-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("sample", help="sample clips from a checkpoint"), config=False)
    p.add_argument("-n", type=int, default=1)
    p.add_argument("--no-ema", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = common(sub.add_parser("bench", help="time the token mixers"), config=False)
    p.add_argument("--sizes", default="1024,2048,4096,8192")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--reps", type=int, default=30)
    p.set_defaults(func=cmd_bench)

    p = common(sub.add_parser("ablate", help="train the four ablation variants"))
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=cmd_ablate)

    p = common(sub.add_parser("gradcheck", help="finite-difference gradient suite"), config=False)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("count", help="parameter and FLOP accounting"))
    p.add_argument("--preset", choices=["S", "L"])
    p.set_defaults(func=cmd_count)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
