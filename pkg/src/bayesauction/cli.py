"""Command line entry point: ``bayesauction <verb> [options]``.

Verbs: ``run``, ``sweep-samples``, ``tune-baseline``, ``gen-synthetic`` and
``parse-cats``. Experiment options can come from a flat ``key = value`` file
(``--config``); flags given on the command line take precedence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .cats import generate_synthetic, group_bidders, parse_cats, serialize_cats, SyntheticParams
from .harness import (
    ExperimentConfig,
    build_batches,
    config_from_mapping,
    read_config_file,
    render_table,
    run_experiment,
    sweep_sample_size,
)
from .subgradient import step_grid, tune_stepsize


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; command-line flags override it")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        hint = "comma-separated" if str(f.type).startswith("tuple") else str(f.type)
        p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper(),
                       help=f"{hint} (default: {f.default!r})")


def _config(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return config_from_mapping(values)


def cmd_run(args) -> int:
    cfg = _config(args)
    res = run_experiment(cfg)
    print(render_table(res.summary), end="")
    if res.failed:
        print(f"{res.failed} auction(s) aborted by a pricer failure; results are partial", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    sizes = [int(s) for s in args.sizes.split(",")]
    res, text = sweep_sample_size(cfg, sizes)
    print(text, end="")
    if res.failed:
        print(f"{res.failed} auction(s) aborted by a pricer failure; results are partial", file=sys.stderr)
        return 1
    return 0


def cmd_tune(args) -> int:
    cfg = _config(args)
    for batch in build_batches(cfg):
        tuning = tune_stepsize(batch.profiles, step_grid(cfg.gamma_max, cfg.gamma_count), cfg.cap)
        g = tuning.distribution_choice()
        cleared = tuning.cleared[:, g]
        mean = tuning.rounds[cleared, g].mean() if cleared.any() else float("nan")
        print(f"{batch.distribution}: gamma={tuning.gammas[g]:g} cleared={int(cleared.sum())}/"
              f"{len(batch.profiles)} mean_rounds={mean:.2f}")
        if cfg.out_dir:
            Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
            tuning.to_csv(Path(cfg.out_dir) / f"tuning_{batch.distribution}.csv")
    return 0


def cmd_gen(args) -> int:
    params = SyntheticParams(complementarity=args.complementarity)
    text = serialize_cats(generate_synthetic(args.m, args.n_bids, params, seed=args.seed))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_parse(args) -> int:
    status = 0
    for path in args.files:
        try:
            f = parse_cats(Path(path).read_bytes())
        except ValueError as exc:
            print(f"{path}: {exc}", file=sys.stderr)
            status = 1
            continue
        multi, single = group_bidders(f, "multi"), group_bidders(f, "single")
        values = np.array([b.value for b in f.bids]) if f.bids else np.zeros(1)
        print(f"{path}: goods={f.goods} dummy={f.dummy} bids={len(f.bids)} "
              f"bidders(multi)={len(multi)} bidders(single)={len(single)} "
              f"value range=[{values.min():g}, {values.max():g}]")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayesauction", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="compare pricers on an instance batch")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-samples", help="Bayesian pricer across sample counts")
    _add_config_flags(p)
    p.add_argument("--sizes", default=",".join(str(2 ** k) for k in range(8)),
                   help="comma-separated sample counts (default: 1,2,...,128)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tune-baseline", help="step-size grid search for the subgradient auction")
    _add_config_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("gen-synthetic", help="write a synthetic bid file in CATS format")
    p.add_argument("--m", type=int, default=12)
    p.add_argument("--n-bids", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--complementarity", type=float, default=0.0)
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("parse-cats", help="validate CATS files and print a summary")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_parse)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
