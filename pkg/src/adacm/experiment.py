"""Multi-seed runs and the ablation-table comparison, driven by a RunConfig."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .config import RunConfig
from .data import Dataset, Split, load_dataset, split, synth_benchmark
from .metrics import AggregateReport, RunMetrics, aggregate
from .nn import ModelParams
from .trainer import TrainConfig, train, with_mode


def build_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.dataset
    if d["source"] == "synth":
        s = d["synth"]
        return synth_benchmark(s["seed"], s["n_classes"], s["per_class"], s["dim"], float(s["difficulty"]))
    return load_dataset(d["path"], d["source"], d["n_classes"], d["standardize"])


def build_split(cfg: RunConfig) -> Split:
    return split(build_dataset(cfg), cfg.split)


@dataclass
class RunResult:
    mode: str
    seed: int
    params: ModelParams
    metrics: RunMetrics
    checkpoints: dict


def run_one(train_cfg: TrainConfig, sp: Split, checkpoint_every: int = 0) -> RunResult:
    snaps = {}

    def hook(epoch, params, record):
        if checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            snaps[epoch] = params

    params, metrics = train(train_cfg, sp.labeled, sp.unlabeled, sp.test, probe=sp.sealed, epoch_hook=hook)
    return RunResult(train_cfg.mode, train_cfg.seed, params, metrics, snaps)


def _job(args):
    return run_one(*args)


def threads() -> int:
    try:
        return max(1, int(os.environ.get("ADACM_THREADS", "1")))
    except ValueError:
        return 1


def run_jobs(jobs: list[tuple]) -> list[RunResult]:
    """Run (TrainConfig, Split, checkpoint_every) jobs, in parallel if ADACM_THREADS > 1."""
    n = min(threads(), len(jobs))
    if n <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_job, jobs))


def run_seeds(cfg: RunConfig, sp: Split | None = None, mode: str | None = None) -> list[RunResult]:
    sp = sp or build_split(cfg)
    base = with_mode(cfg.train, mode) if mode else cfg.train
    jobs = [(replace(base, seed=s), sp, cfg.checkpoint_every) for s in cfg.seeds]
    return run_jobs(jobs)


def summarize(results: list[RunResult]) -> AggregateReport:
    if len(results) >= 2:
        return aggregate([r.metrics for r in results])
    r = results[0]
    return AggregateReport(r.metrics.mode, r.metrics.final_accuracy, float("nan"),
                           {r.seed: r.metrics.final_accuracy}, r.metrics.family_digest)


def compare(cfg: RunConfig, modes: list[str] | None = None) -> tuple[list[AggregateReport], dict]:
    """Every mode over the shared seed list on one shared split.

    Returns the per-mode reports (in mode order, labelled with the mode
    string as given) and the raw results keyed by mode.
    """
    modes = modes or cfg.modes
    sp = build_split(cfg)
    jobs, keys = [], []
    for m in modes:
        base = with_mode(cfg.train, m)
        for s in cfg.seeds:
            jobs.append((replace(base, seed=s), sp, 0))
            keys.append(m)
    results = run_jobs(jobs)
    by_mode: dict = {m: [] for m in modes}
    for k, r in zip(keys, results):
        by_mode[k].append(r)
    reports = []
    for m in modes:
        rep = summarize(by_mode[m])
        rep.mode = m
        reports.append(rep)
    return reports, by_mode
