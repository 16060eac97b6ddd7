"""Command line entry point: train, sweep, plot, verify, trajectory."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .envs import dump_trajectory, make_env_config
from .harness import (ExperimentConfig, auc_spread, load_runs, run, run_filename,
                      summarize, sweep)

log = logging.getLogger("cdpo")


def _resolve_reg(algo: str, reg: str | None) -> str:
    if algo == "cdpo":
        if reg not in (None, "complexity"):
            raise SystemExit(f"--algo cdpo always uses the complexity bonus, not {reg!r}")
        return "complexity"
    if reg == "complexity":
        raise SystemExit("--reg complexity requires --algo cdpo")
    return reg or "entropy"


def cmd_train(args) -> int:
    base = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    reg = _resolve_reg(args.algo, args.reg)
    overrides = dict(env=args.env, carts=args.carts if args.env == "carterpillar" else 1,
                     regularizer=reg, total_timesteps=args.timesteps)
    if args.c_reg is not None:
        overrides["reg_coef"] = args.c_reg
    cfg = ExperimentConfig(**{**base.to_dict(), **{k: v for k, v in overrides.items() if v is not None}})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    name = run_filename(cfg.regularizer, cfg.loss_config().reg_coef, args.seed)
    record = run(cfg, args.seed, csv_path=out / name, params_path=out / (Path(name).stem + ".npz"))
    print(f"{cfg.algo} seed={args.seed}: {len(record.rows)} rows, final mean return {record.final_return:.1f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.from_file(args.config, out_dir=args.out, workers=args.workers)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    summary = sweep(cfg, out_dir=out)
    for s in summary.series:
        flag = " (single seed: stderr undefined, reported as 0)" if s.single_seed else ""
        print(f"{s.algo:8s} c_reg={s.reg_coef:<8g} final {s.mean:7.1f} +- {s.stderr:5.1f}{flag}")
    for algo in ("cdpo", "ppo_ent"):
        if summary.for_algo(algo):
            print(f"{algo}: AUC range across c_reg = {auc_spread(summary, algo):.4g}")
    for f in summary.failures:
        print(f"FAILED {f['algo']} c_reg={f['reg_coef']} seed={f['seed']}: {f['error']}")
    return 1 if summary.failures else 0


def cmd_plot(args) -> int:
    from .plots import emit_plots

    records = load_runs(args.in_dir)
    if not records:
        print(f"no run CSVs found in {args.in_dir}", file=sys.stderr)
        return 1
    for path in emit_plots(summarize(records), args.out, title=args.title):
        print(path)
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    return 0 if run_all() else 1


def cmd_trajectory(args) -> int:
    cfg = make_env_config(args.env, args.carts)
    n = dump_trajectory(cfg, args.seed, args.steps, args.out)
    print(f"wrote {n} steps to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdpo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a single agent")
    t.add_argument("--config", help="INI file with defaults; flags override it")
    t.add_argument("--env", choices=("cartpole", "carterpillar"), default="cartpole")
    t.add_argument("--carts", type=int, default=2)
    t.add_argument("--algo", choices=("ppo", "cdpo"), default="cdpo")
    t.add_argument("--reg", choices=("none", "entropy", "complexity"))
    t.add_argument("--c-reg", type=float)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--timesteps", type=int)
    t.add_argument("--out", default="runs/train")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="run a c_reg x seed sweep from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="override [run] out_dir")
    s.add_argument("--workers", type=int, help="override [run] workers")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="render learning curves from run CSVs")
    pl.add_argument("--in", dest="in_dir", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)

    v = sub.add_parser("verify", help="run the regularizer, gradient and physics self-checks")
    v.set_defaults(func=cmd_verify)

    tr = sub.add_parser("trajectory", help="dump a random-action trajectory as CSV")
    tr.add_argument("--env", choices=("cartpole", "carterpillar"), default="cartpole")
    tr.add_argument("--carts", type=int, default=2)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--steps", type=int, default=500)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_trajectory)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
