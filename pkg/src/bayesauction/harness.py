"""Batch experiments: instance batches, pricer comparisons and summary tables.

Every run writes ``results.csv`` (one row per instance and pricer) and
``summary.csv`` / ``summary.txt``. Wall-clock times go to ``timings.csv`` so
the other files are byte-identical across re-runs with the same config.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cats import (
    generate_clearable,
    generate_synthetic,
    group_bidders,
    normalize_values,
    parse_cats,
    sample_instance,
    split_train_test,
)
from .core import ValuationProfile
from .engine import PricerFailure, run_auction, write_trace
from .mcem import BayesianPricer, McemConfig
from .prior import PriorModel, fit
from .subgradient import SubgradientPricer, TuningResult, step_grid, tune_stepsize, tuned_outcomes

logger = logging.getLogger(__name__)

PRICERS = ("bayes", "sg-d", "sg-i")
SOURCES = ("synthetic", "clearable", "cats")


@dataclass(frozen=True)
class ExperimentConfig:
    source: str = "synthetic"
    cats_files: tuple[str, ...] = ()
    mode: str = "multi"
    instances: int = 300
    n_bidders: int = 10
    m: int = 12
    n_bids: int = 1000
    train_instances: int = 100
    cap: int = 100
    pricers: tuple[str, ...] = PRICERS
    lam: float = 1.0
    n_samples: int = 128
    eps: float = 0.01
    max_iter: int = 50
    max_attempts: int = 10_000
    beta: float = 1.0
    warm_start: bool = True
    unnormalized: bool = False
    gamma_max: float = 10.0
    gamma_count: int = 100
    train_fraction: float = 0.5
    seed: int = 0
    workers: int = 1
    out_dir: str = ""
    save_traces: bool = False

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        if self.mode not in ("single", "multi"):
            raise ValueError("mode must be 'single' or 'multi'")
        for name in ("instances", "n_bidders", "m", "n_bids", "train_instances", "cap",
                     "gamma_count", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        unknown = set(self.pricers) - set(PRICERS)
        if unknown or not self.pricers:
            raise ValueError(f"pricers must be a nonempty subset of {PRICERS}")
        if self.source == "cats":
            if not self.cats_files:
                raise ValueError("source 'cats' needs at least one file")
            for f in self.cats_files:
                if not Path(f).is_file():
                    raise FileNotFoundError(f)

    def mcem(self, seed: int) -> McemConfig:
        return McemConfig(lam=self.lam, n_samples=self.n_samples, eps=self.eps,
                          max_iter=self.max_iter, max_attempts=self.max_attempts, seed=seed,
                          unnormalized=self.unnormalized, warm_start=self.warm_start)


def _parse_value(kind, text: str):
    text = text.strip()
    if kind in (bool, "bool"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if str(kind).startswith("tuple"):
        return tuple(t.strip() for t in text.split(",") if t.strip())
    return text


def config_from_mapping(values: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from string values (config file or CLI), on top of ``base``."""
    base = base or ExperimentConfig()
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    updates = {}
    for key, text in values.items():
        name = key.replace("-", "_")
        if name not in types:
            raise KeyError(f"unknown config key {key!r}")
        updates[name] = _parse_value(types[name], str(text))
    return replace(base, **updates)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


_TEST_STREAM, _TRAIN_STREAM = 1 << 30, (1 << 30) + 1


def instance_seed(master: int, k: int) -> int:
    return int(np.random.SeedSequence([master, k]).generate_state(1)[0])


@dataclass
class Batch:
    distribution: str
    profiles: list[ValuationProfile]
    prior: PriorModel
    seeds: list[int]


def _pool_batch(cfg: ExperimentConfig, cats_file, distribution: str) -> Batch:
    pool = normalize_values(group_bidders(cats_file, cfg.mode))
    train, test = split_train_test(pool, cfg.train_fraction, seed=cfg.seed)
    prior = fit(train.bidders)
    seeds = [instance_seed(cfg.seed, k) for k in range(cfg.instances)]
    profiles = [sample_instance(test, cfg.n_bidders, seed=s, distribution=distribution).profile
                for s in seeds]
    return Batch(distribution, profiles, prior, seeds)


def build_batches(cfg: ExperimentConfig) -> list[Batch]:
    if cfg.source == "cats":
        return [_pool_batch(cfg, parse_cats(Path(f).read_bytes()), Path(f).stem) for f in cfg.cats_files]
    if cfg.source == "synthetic":
        return [_pool_batch(cfg, generate_synthetic(cfg.m, cfg.n_bids, seed=cfg.seed), "synthetic")]
    # clearable: test and training instances share the distribution's reference prices
    test = generate_clearable(cfg.m, cfg.n_bidders, cfg.instances,
                              seed=instance_seed(cfg.seed, _TEST_STREAM), base_seed=cfg.seed)
    train = generate_clearable(cfg.m, cfg.n_bidders, cfg.train_instances,
                               seed=instance_seed(cfg.seed, _TRAIN_STREAM), base_seed=cfg.seed)
    prior = fit([v for prof in train.profiles for v in prof])
    seeds = [instance_seed(cfg.seed, k) for k in range(cfg.instances)]
    return [Batch("clearable", list(test.profiles), prior, seeds)]


@dataclass(frozen=True)
class InstanceResult:
    instance: int
    distribution: str
    pricer: str
    cleared: bool
    rounds: int
    efficiency: float
    failed: bool = False


RESULT_COLUMNS = ("instance", "distribution", "pricer", "cleared", "rounds", "efficiency")


def _bayes_job(args):
    k, profile, prior, cfg, seed, tag = args
    pricer = BayesianPricer(prior.predict, cfg.mcem(seed), beta=cfg.beta, name=tag)
    start = time.perf_counter()
    failed = False
    try:
        out = run_auction(profile, pricer, cfg.cap)
        res = (out.cleared, out.rounds, out.efficiency)
        trace = out.trace
    except PricerFailure as exc:
        logger.error("%s", exc)
        failed, res, trace = True, (False, len(exc.trace), float("nan")), exc.trace
    return k, res, failed, trace, time.perf_counter() - start


def _map(cfg: ExperimentConfig, fn, jobs):
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def _save_trace(cfg: ExperimentConfig, batch: Batch, k: int, tag: str, trace) -> None:
    if cfg.save_traces and cfg.out_dir:
        d = Path(cfg.out_dir) / "traces"
        d.mkdir(parents=True, exist_ok=True)
        with open(d / f"{batch.distribution}_{k:04d}_{tag}.jsonl", "w") as fh:
            write_trace(trace, fh)


def run_bayes(cfg: ExperimentConfig, batch: Batch, tag: str = "bayes",
              timings: list | None = None) -> list[InstanceResult]:
    jobs = [(k, p, batch.prior, cfg, s, tag) for k, (p, s) in enumerate(zip(batch.profiles, batch.seeds))]
    out = []
    for k, (cleared, rounds, eff), failed, trace, secs in _map(cfg, _bayes_job, jobs):
        out.append(InstanceResult(k, batch.distribution, tag, cleared, rounds, eff, failed))
        _save_trace(cfg, batch, k, tag, trace)
        if timings is not None:
            timings.append((k, batch.distribution, tag, secs))
    return out


def run_subgradient(cfg: ExperimentConfig, batch: Batch, modes: Sequence[str],
                    timings: list | None = None) -> tuple[dict[str, list[InstanceResult]], TuningResult]:
    start = time.perf_counter()
    tuning = tune_stepsize(batch.profiles, step_grid(cfg.gamma_max, cfg.gamma_count), cfg.cap)
    tune_secs = time.perf_counter() - start
    fallback = float(tuning.gammas[tuning.distribution_choice()])
    results: dict[str, list[InstanceResult]] = {}
    for mode in modes:
        tag = "sg-d" if mode == "distribution" else "sg-i"
        rows = []
        for k, (cleared, rounds, gamma) in enumerate(tuned_outcomes(tuning, mode)):
            # replay through the round loop for the allocation; it must agree with the grid run
            t0 = time.perf_counter()
            out = run_auction(batch.profiles[k], SubgradientPricer(gamma or fallback), cfg.cap)
            if gamma is not None and (out.cleared != cleared or (cleared and out.rounds != rounds)):
                raise RuntimeError(f"grid run and round loop disagree on instance {k}")
            rows.append(InstanceResult(k, batch.distribution, tag, out.cleared, out.rounds, out.efficiency))
            _save_trace(cfg, batch, k, tag, out.trace)
            if timings is not None:
                timings.append((k, batch.distribution, tag, time.perf_counter() - t0 + tune_secs / len(batch.profiles)))
        results[tag] = rows
    return results, tuning


def standard_error(samples: Sequence[float]) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("standard error needs at least two samples")
    return float(x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class SummaryRow:
    distribution: str
    pricer: str
    instances: int
    clearing_pct: float
    common: int
    mean_rounds: float | None = None
    se_rounds: float | None = None
    p10: float | None = None
    q1: float | None = None
    median: float | None = None
    q3: float | None = None
    p90: float | None = None


SUMMARY_COLUMNS = tuple(f.name for f in fields(SummaryRow))


def summarize(results: Sequence[InstanceResult]) -> list[SummaryRow]:
    """Per distribution and pricer; rounds only over instances every pricer cleared."""
    rows = []
    for dist in dict.fromkeys(r.distribution for r in results):
        sub = [r for r in results if r.distribution == dist]
        pricers = list(dict.fromkeys(r.pricer for r in sub))
        by = {(r.pricer, r.instance): r for r in sub}
        ids = sorted({r.instance for r in sub})
        common = [k for k in ids if all(by.get((p, k)) is not None and by[(p, k)].cleared for p in pricers)]
        for p in pricers:
            mine = [by[(p, k)] for k in ids if (p, k) in by]
            row = SummaryRow(dist, p, len(mine), 100.0 * sum(r.cleared for r in mine) / len(mine), len(common))
            if common:
                rounds = np.array([by[(p, k)].rounds for k in common], dtype=float)
                row.mean_rounds = float(rounds.mean())
                row.se_rounds = standard_error(rounds) if rounds.size >= 2 else None
                row.p10, row.q1, row.median, row.q3, row.p90 = (
                    float(v) for v in np.percentile(rounds, [10, 25, 50, 75, 90]))
            rows.append(row)
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def results_csv(results: Sequence[InstanceResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in results:
        w.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])
    return buf.getvalue()


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow([_fmt(v) for v in asdict(r).values()])
    return buf.getvalue()


def render_table(rows: Sequence[SummaryRow]) -> str:
    """Plain-text table: clearing %, then mean rounds with the standard error in parentheses."""
    head = f"{'distribution':<14}{'pricer':<12}{'clearing':>10}{'rounds':>18}{'common':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        if r.mean_rounds is None:
            rounds = "-"
        elif r.se_rounds is None:
            rounds = f"{r.mean_rounds:.1f}"
        else:
            rounds = f"{r.mean_rounds:.1f} ({r.se_rounds:.1f})"
        lines.append(f"{r.distribution:<14}{r.pricer:<12}{r.clearing_pct:>9.0f}%{rounds:>18}{r.common:>8}")
    return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    results: list[InstanceResult]
    summary: list[SummaryRow]
    timings: list[tuple[int, str, str, float]] = field(default_factory=list)

    @property
    def failed(self) -> int:
        return sum(r.failed for r in self.results)


def _write_outputs(cfg: ExperimentConfig, res: ExperimentResult, prefix: str = "") -> None:
    if not cfg.out_dir:
        return
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{prefix}results.csv").write_text(results_csv(res.results))
    (out / f"{prefix}summary.csv").write_text(summary_csv(res.summary))
    (out / f"{prefix}summary.txt").write_text(render_table(res.summary))
    with open(out / f"{prefix}timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "distribution", "pricer", "seconds"])
        for row in res.timings:
            w.writerow([row[0], row[1], row[2], f"{row[3]:.4f}"])


def run_experiment(cfg: ExperimentConfig, batches: Sequence[Batch] | None = None) -> ExperimentResult:
    batches = build_batches(cfg) if batches is None else batches
    results: list[InstanceResult] = []
    timings: list = []
    for batch in batches:
        per: dict[str, list[InstanceResult]] = {}
        if "bayes" in cfg.pricers:
            per["bayes"] = run_bayes(cfg, batch, timings=timings)
        modes = [m for p, m in (("sg-d", "distribution"), ("sg-i", "instance")) if p in cfg.pricers]
        if modes:
            sg, tuning = run_subgradient(cfg, batch, modes, timings)
            per.update(sg)
            if cfg.out_dir:
                Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
                tuning.to_csv(Path(cfg.out_dir) / f"tuning_{batch.distribution}.csv")
        for p in cfg.pricers:
            results.extend(per[p])
    res = ExperimentResult(results, summarize(results), timings)
    _write_outputs(cfg, res)
    return res


SWEEP_COLUMNS = ("n_samples", "clearing_pct", "mean_rounds", "se_rounds", "common")


def sweep_sample_size(cfg: ExperimentConfig, sizes: Sequence[int] = tuple(2 ** k for k in range(8)),
                      batches: Sequence[Batch] | None = None) -> tuple[ExperimentResult, str]:
    """Bayesian pricer at each sample count on the same instances and seeds.

    Rounds are averaged over the instances cleared at every sample count.
    Returns the per-instance result and the plot-ready sweep CSV.
    """
    batches = build_batches(cfg) if batches is None else batches
    results, timings = [], []
    for batch in batches:
        for ell in sizes:
            results.extend(run_bayes(replace(cfg, n_samples=int(ell)), batch, tag=f"bayes-l{ell}",
                                     timings=timings))
    res = ExperimentResult(results, summarize(results), timings)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("distribution",) + SWEEP_COLUMNS)
    for row in res.summary:
        w.writerow([row.distribution, row.pricer.removeprefix("bayes-l"), _fmt(row.clearing_pct),
                    _fmt(row.mean_rounds), _fmt(row.se_rounds), row.common])
    text = buf.getvalue()
    _write_outputs(cfg, res, prefix="sweep_")
    if cfg.out_dir:
        (Path(cfg.out_dir) / "sweep.csv").write_text(text)
    return res, text
