"""Paired CMS / baseline runs over a list of seeds, with on-disk result caching.

A finished run is stored under a key derived from the full config text and a
digest of the package sources, so re-running a sweep only computes what is
missing or stale.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics as M
from .config import ExperimentConfig
from .trainer import Experiment, obtain_sensors

log = logging.getLogger(__name__)


def _package_digest() -> str:
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def run_key(cfg: ExperimentConfig) -> str:
    return hashlib.sha256((cfg.to_text() + _package_digest()).encode()).hexdigest()[:20]


def parse_seeds(text: str) -> list[int]:
    """``"1..5"`` -> [1, 2, 3, 4, 5]; ``"1,4,9"`` -> [1, 4, 9]."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError(f"no seeds in {text!r}")
    return out


def run_one(cfg: ExperimentConfig, out_dir, cache_dir=None):
    """Run (or fetch from ``out_dir``) one experiment; returns its metric columns."""
    out_dir = Path(out_dir)
    run_dir = out_dir / "runs" / f"{cfg.mode}-seed{cfg.seed}-{run_key(cfg)}"
    csv_path = run_dir / "metrics.csv"
    if csv_path.exists():
        cols = M.read_run_csv(csv_path)
        if len(cols.get("iter", [])) == cfg.iterations:
            log.info("reusing %s", run_dir)
            return cols
    sensors, _ = obtain_sensors(cfg, cache_dir)
    exp = Experiment(cfg, sensors=sensors)
    exp.run(run_dir)
    return M.read_run_csv(csv_path)


def _job(args):
    cfg, out_dir, cache_dir = args
    return cfg.mode, cfg.seed, run_one(cfg, out_dir, cache_dir)


def run_sweep(cfg: ExperimentConfig, seeds, modes=("cms", "baseline"), out_dir="sweep", jobs=1, cache_dir=None,
              plots=True):
    """Every (mode, seed) pair; writes ``sweep.csv`` and one PNG per index. Returns the summary
    and the raw per-run columns keyed by mode."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    obtain_sensors(cfg, cache_dir)  # pretrain once before fanning out
    tasks = [(cfg.replace(mode=m, seed=s), out_dir, cache_dir) for s in seeds for m in modes]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_job, tasks))
    else:
        results = [_job(t) for t in tasks]
    runs = {m: [] for m in modes}
    for mode, _, cols in results:
        runs[mode].append(cols)
    summary = M.aggregate_sweep(runs)
    M.write_sweep_csv(out_dir / "sweep.csv", summary)
    if plots:
        M.plot_sweep(summary, out_dir / "plots")
    return summary, runs
