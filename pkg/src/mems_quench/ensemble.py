"""Monte Carlo ensembles of quench times.

Realization ``i`` of an ensemble always uses ``derive_seed(master_seed, i)``
and is integrated independently of every other row, so the summary does not
depend on the block size or on how many worker processes are used.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fem import Grid1D, ModelSpec, run_block
from .noise import derive_seed

__all__ = [
    "McSummary",
    "run_ensemble",
    "sweep_lambda",
    "delta_sensitivity",
    "transition_midpoint",
    "is_monotone",
    "worker_count",
    "write_table_csv",
    "WORKERS_ENV",
]

WORKERS_ENV = "MEMS_QUENCH_WORKERS"
BLOCK_SIZE = 250


@dataclass
class McSummary:
    """Quench statistics of one ensemble.

    ``mean_Tq`` needs at least one quenched path and ``var_Tq`` (unbiased)
    at least two; otherwise they are ``None``. Paths that went non-finite
    are counted as quenched and also reported in ``nonfinite_count``.
    """

    lam: float
    N_R: int
    quench_count: int
    nonfinite_count: int
    mean_Tq: float | None
    var_Tq: float | None
    T: float
    master_seed: int
    spec: ModelSpec
    grid: Grid1D
    N: int
    m: int
    T_q: np.ndarray = field(repr=False, default=None)

    @property
    def quench_fraction(self) -> float:
        return self.quench_count / self.N_R

    @property
    def standard_error(self) -> float:
        p = self.quench_fraction
        return math.sqrt(p * (1.0 - p) / self.N_R)


def worker_count(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def _block(args):
    spec, grid, N, m, T, seeds, refine_above = args
    res = run_block(spec, grid, N, m, T, seeds, refine_above=refine_above)
    return res.quenched, res.T_q, res.nonfinite


def run_ensemble(spec: ModelSpec, grid: Grid1D, N: int, m: int, T: float, N_R: int,
                 master_seed: int, *, workers: int | None = None,
                 refine_above: float | None = None) -> McSummary:
    if int(N_R) != N_R or N_R < 1:
        raise ValueError(f"N_R must be a positive integer, got {N_R}")
    N_R = int(N_R)
    workers = worker_count() if workers is None else int(workers)
    seeds = np.array([derive_seed(master_seed, i) for i in range(N_R)], dtype=np.uint64)
    jobs = [(spec, grid, N, m, T, seeds[s:s + BLOCK_SIZE], refine_above)
            for s in range(0, N_R, BLOCK_SIZE)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            parts = list(pool.map(_block, jobs))
    else:
        parts = [_block(j) for j in jobs]
    quenched = np.concatenate([p[0] for p in parts])
    T_q = np.concatenate([p[1] for p in parts])
    nonfinite = np.concatenate([p[2] for p in parts])

    times = T_q[quenched]
    count = int(quenched.sum())
    mean = float(np.mean(times)) if count >= 1 else None
    var = float(np.var(times, ddof=1)) if count >= 2 else None
    return McSummary(lam=spec.lam, N_R=N_R, quench_count=count,
                     nonfinite_count=int(nonfinite.sum()), mean_Tq=mean, var_Tq=var,
                     T=float(T), master_seed=int(master_seed), spec=spec, grid=grid,
                     N=int(N), m=int(m), T_q=T_q)


def sweep_lambda(template: ModelSpec, lams: Sequence[float], grid: Grid1D, N: int, m: int,
                 T: float, N_R: int, master_seed: int, **kwargs) -> list[McSummary]:
    """One ensemble per ``lam``; the k-th value uses master seed ``master_seed + k``."""
    lams = list(lams)
    if not lams:
        raise ValueError("lambda list is empty")
    return [run_ensemble(template.replace(lam=float(lam)), grid, N, m, T, N_R,
                         master_seed + k, **kwargs)
            for k, lam in enumerate(lams)]


def delta_sensitivity(spec: ModelSpec, deltas: Sequence[float], grid: Grid1D, N: int, m: int,
                      T: float, N_R: int, master_seed: int, **kwargs) -> list[McSummary]:
    """Rerun one ensemble (same seeds) for several quench thresholds ``1 - delta``."""
    return [run_ensemble(spec.replace(quench_delta=float(d)), grid, N, m, T, N_R,
                         master_seed, **kwargs)
            for d in deltas]


def is_monotone(summaries: Sequence[McSummary], n_se: float = 4.0) -> bool:
    """True if no quench fraction drops by more than ``n_se`` pooled standard errors."""
    for a, b in zip(summaries, summaries[1:]):
        drop = a.quench_fraction - b.quench_fraction
        if drop <= 0:
            continue
        p = (a.quench_count + b.quench_count) / (a.N_R + b.N_R)
        se = math.sqrt(p * (1 - p) * (1 / a.N_R + 1 / b.N_R))
        if drop > n_se * se:
            return False
    return True


def transition_midpoint(lams: Sequence[float], fractions: Sequence[float],
                        level: float = 0.5) -> float | None:
    """First ``lam`` where the fraction crosses ``level``, linearly interpolated."""
    for (l0, f0), (l1, f1) in zip(zip(lams, fractions), zip(lams[1:], fractions[1:])):
        if f0 < level <= f1:
            return l0 + (level - f0) * (l1 - l0) / (f1 - f0)
    return None


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_table_csv(path, summaries: Sequence[McSummary], header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["lambda", "N_R", "quench_count", "mean_Tq", "var_Tq", "seed"])
        for s in summaries:
            w.writerow([repr(float(s.lam)), s.N_R, s.quench_count, _fmt(s.mean_Tq),
                        _fmt(s.var_Tq), s.master_seed])
