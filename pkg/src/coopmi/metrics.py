"""Population-level performance indices, per-run CSV records and sweep aggregation.

Every index is computed over one interaction window (one trainer iteration):

* utilities  U = mean payoff per agent
* equity     E = 1 - sum_ij |G_i - G_j| / (2 n sum_i G_i)    (1 when nobody scored)
* peace      P = 1 - (#agent-steps spent timed out) / (n l)
* sustainability S = sum over steps of the apples present
* cooperation psi = (I_shifted / H_bar) * U, with I_shifted clamped at 0
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .env import commons
from .tensor.functional import LN2, entropy

log = logging.getLogger(__name__)

CI_LEVEL = 0.995
Z_995 = float(norm.ppf(0.5 + CI_LEVEL / 2))
ENTROPY_FLOOR = 1e-6
INDICES = ("U", "E", "P", "S", "psi", "H_bar", "I_raw", "I_shifted")


# -- indices ------------------------------------------------------------

def utilities(G) -> float:
    G = np.asarray(G, dtype=np.float64)
    if G.size == 0:
        raise ValueError("utilities of an empty population")
    return float(G.mean())


def equity(G) -> float:
    G = np.asarray(G, dtype=np.float64)
    if G.size == 0:
        raise ValueError("equity of an empty population")
    if np.any(G < 0):
        raise ValueError("payoffs must be non-negative")
    total = G.sum()
    if total == 0:
        return 1.0
    n = G.size
    # sum_ij |G_i - G_j| from the sorted order in O(n log n)
    s = np.sort(G)
    dispersion = 2.0 * np.sum((2 * np.arange(n) - n + 1) * s)
    return float(1.0 - dispersion / (2.0 * n * total))


def peace(observations) -> float:
    """``observations``: (n, l, 9, 9) class indices or (n, l, 9, 9, C) one-hot frames."""
    o = np.asarray(observations)
    if o.ndim == 5:
        o = np.argmax(o, axis=-1)
    if o.ndim != 4:
        raise ValueError("expected (agents, steps, 9, 9) observations")
    n, l = o.shape[:2]
    if n * l == 0:
        return 1.0
    out = np.all(o.reshape(n, l, -1) == commons.EMPTY, axis=2)
    return peace_from_mask(out)


def peace_from_mask(timed_out) -> float:
    """Same index from an (agents, steps) boolean "was out of the game" matrix."""
    m = np.asarray(timed_out, dtype=bool)
    if m.size == 0:
        return 1.0
    return float(1.0 - m.sum() / m.size)


def sustainability(apple_counts) -> float:
    """Cumulative apple count, one entry per step of the window."""
    return float(np.sum(np.asarray(apple_counts, dtype=np.float64)))


def cooperation_index(i_bar_shifted, h_bar, U) -> float:
    """``(max(I, 0) / H) * U``; NaN (missing) when the policies are near-deterministic."""
    if not np.isfinite(h_bar) or h_bar <= ENTROPY_FLOOR:
        return float("nan")
    return float(max(float(i_bar_shifted), 0.0) / h_bar * U)


def average_entropy(policies) -> float:
    """``policies``: per agent, an array (visited states, actions) of action probabilities."""
    per_agent = []
    for p in policies:
        p = np.asarray(p, dtype=np.float64)
        if len(p):
            per_agent.append(float(np.mean(entropy(p, axis=-1))))
    if not per_agent:
        return float("nan")
    return float(np.mean(per_agent))


def shift_mi(i_raw):
    return i_raw + 2.0 * LN2


# -- per-iteration records ---------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    t_total: int
    G: list
    U: float
    E: float
    P: float
    S: float
    psi: float
    H_bar: float
    I_raw: float
    I_shifted: float
    I_agents: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_window(cls, iteration, t_total, G, timed_out, apple_counts, policies, I_agents, extra=None):
        U = utilities(G)
        I_agents = [float(v) for v in I_agents]
        finite = [v for v in I_agents if np.isfinite(v)]
        i_raw = float(np.mean(finite)) if finite else float("nan")
        i_shift = shift_mi(i_raw)
        h_bar = average_entropy(policies)
        psi = cooperation_index(i_shift, h_bar, U) if np.isfinite(i_shift) else float("nan")
        return cls(iteration, int(t_total), [float(g) for g in G], U, equity(G), peace_from_mask(timed_out),
                   sustainability(apple_counts), psi, h_bar, i_raw, i_shift, I_agents, dict(extra or {}))

    def row(self):
        out = {"iter": self.iteration, "t_total": self.t_total}
        for k in INDICES:
            out[k] = getattr(self, k)
        for i, g in enumerate(self.G):
            out[f"G_{i}"] = g
        for i, v in enumerate(self.I_agents):
            out[f"I_{i}"] = v
        out.update(self.extra)
        return out


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_run_csv(path, records):
    """One header row plus one row per iteration; floats are written round-trip exact."""
    records = list(records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not records:
        path.write_text("iter,t_total," + ",".join(INDICES) + "\n")
        return path
    rows = [r.row() for r in records]
    columns = list(rows[0])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, float("nan"))) for c in columns])
    return path


def read_run_csv(path):
    """Returns a dict column -> float array."""
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(x) for x in row] for row in reader]
    arr = np.array(data, dtype=np.float64).reshape(len(data), len(header))
    return {c: arr[:, i] for i, c in enumerate(header)}


# -- sweep aggregation -----------------------------------------------------

def confidence_half_width(values, axis=0, z=Z_995):
    """Normal-approximation half-width ``z * sd / sqrt(k)`` with the sample sd (ddof=1)."""
    values = np.asarray(values, dtype=np.float64)
    k = values.shape[axis]
    if k < 2:
        raise ValueError("a confidence interval needs at least two runs")
    return z * np.std(values, axis=axis, ddof=1) / np.sqrt(k)


@dataclass
class SweepSummary:
    iterations: np.ndarray
    mean: dict   # (mode, index) -> array over iterations
    half_width: dict
    runs: dict   # mode -> number of runs

    def rows(self):
        for (mode, index), m in sorted(self.mean.items()):
            hw = self.half_width[(mode, index)]
            for it, a, b in zip(self.iterations, m, hw):
                yield int(it), index, mode, float(a), float(b)


def aggregate_sweep(runs_by_mode: dict, indices=INDICES) -> SweepSummary:
    """``runs_by_mode``: mode -> list of runs, each a list of IterationRecord or a CSV column dict."""
    mean, half = {}, {}
    iterations = None
    counts = {}
    for mode, runs in runs_by_mode.items():
        cols = [_columns(r) for r in runs]
        if len(cols) < 2:
            raise ValueError(f"mode {mode!r}: need at least two runs, got {len(cols)}")
        lengths = {len(c["iter"]) for c in cols}
        if len(lengths) != 1:
            raise ValueError(f"mode {mode!r}: runs have different iteration counts {sorted(lengths)}")
        its = cols[0]["iter"]
        if iterations is None:
            iterations = its
        elif len(its) != len(iterations):
            raise ValueError("modes have different iteration counts")
        counts[mode] = len(cols)
        for index in indices:
            stack = np.stack([c[index] for c in cols])
            with np.errstate(invalid="ignore"):
                mean[(mode, index)] = stack.mean(axis=0)
                half[(mode, index)] = confidence_half_width(stack)
    return SweepSummary(np.asarray(iterations), mean, half, counts)


def _columns(run):
    if isinstance(run, dict):
        return run
    recs = list(run)
    return {
        "iter": np.array([r.iteration for r in recs], dtype=float),
        **{k: np.array([getattr(r, k) for r in recs], dtype=float) for k in INDICES},
    }


def write_sweep_csv(path, summary: SweepSummary):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "index", "mode", "mean", "ci_half_width"])
        for row in summary.rows():
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    return path


def plot_sweep(summary: SweepSummary, out_dir, indices=INDICES, x_scale=1.0):
    """One PNG per index with every mode overlaid; the band is the confidence interval."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    colors = {"cms": "tab:blue", "baseline": "tab:red"}
    paths = []
    x = summary.iterations * x_scale
    for index in indices:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for mode in sorted(summary.runs):
            if (mode, index) not in summary.mean:
                continue
            m = summary.mean[(mode, index)]
            hw = summary.half_width[(mode, index)]
            c = colors.get(mode)
            ax.plot(x, m, color=c, label=f"{mode} (n={summary.runs[mode]})")
            ax.fill_between(x, m - hw, m + hw, color=c, alpha=0.25, linewidth=0)
        ax.set_xlabel("time step" if x_scale != 1.0 else "iteration")
        ax.set_ylabel(index)
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        p = out_dir / f"{index}.png"
        fig.savefig(p, dpi=100)
        plt.close(fig)
        paths.append(p)
    return paths
