"""
Replicate-parallel power study: simulate, fit, estimate the Godambe
information and run the Z and LR tests over a grid of ``a0`` values.

Every replicate owns independent random streams derived from the master
seed and its index, and writes its own CSV file. Aggregation re-reads those
files in index order, so results do not depend on the number of workers and
an interrupted study resumes where it stopped.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .hypothesis_tests import ALPHAS, lr_test, z_test
from .inference import (CensoringConfig, LikelihoodError, PairwiseLikelihood, fit_constrained,
                        fit_mm, refit_if_not_nested)
from .models import MixtureParams, get_model
from .simulation import child_seed, fmt, sample_sites_uniform, simulate_model, write_kv
from .uncertainty import estimate_godambe_mc, submatrix_a

logger = logging.getLogger(__name__)

REPLICATE_COLUMNS = ["replicate", "status", "a0", "a_hat", "se_a", "logpl_full", "logpl_constrained",
                     "lambda", "Z", "p_Z", "LR", "p_LR", "converged"]
POWER_COLUMNS = ["a0", "alpha", "statistic", "n_replicates", "rejections", "rate"]


def _parse_floats(s) -> tuple:
    if isinstance(s, str):
        return tuple(float(v) for v in s.replace(";", ",").split(",") if v.strip())
    return tuple(float(v) for v in s)


@dataclass(frozen=True)
class StudyConfig:
    model: str = "M1"
    a: float = 0.5
    phi_x: float = 0.10
    r_x: float = 0.25
    phi_y: float = 0.75
    r_y: float = 1.2
    K: int = 25
    N: int = 500
    J: int = 20
    M: int = 300
    side: float = 2.0
    a0_grid: tuple = (0.1, 0.5)
    alphas: tuple = ALPHAS
    seed: int = 1
    workers: int = 0
    p: float = 0.9
    scheme: str = "two"
    delta: float = math.inf
    accuracy: int = 50_000
    sensitivity: str = "observed"
    fit_model: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "a0_grid", _parse_floats(self.a0_grid))
        object.__setattr__(self, "alphas", _parse_floats(self.alphas))
        if self.J < 1:
            raise ValueError("J must be at least 1")
        if not self.a0_grid or any(not 0.0 < v < 1.0 for v in self.a0_grid):
            raise ValueError("a0 grid must lie inside (0, 1)")
        if any(not 0.0 < v < 1.0 for v in self.alphas):
            raise ValueError("test levels must lie inside (0, 1)")
        if not get_model(self.fitted_model).is_mixture:
            raise ValueError("the fitted model must have a mixing coefficient")

    @property
    def fitted_model(self) -> str:
        return self.fit_model or self.model

    @property
    def true_params(self) -> MixtureParams:
        spec = get_model(self.model)
        vals = {n: getattr(self, n) for n in spec.param_names}
        return MixtureParams(**vals)

    @property
    def censoring(self) -> CensoringConfig:
        return CensoringConfig(p=self.p, scheme=self.scheme, delta=self.delta)

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in types:
                raise ValueError(f"unknown study setting {k!r}")
            t = types[k]
            if k in ("a0_grid", "alphas"):
                kw[k] = _parse_floats(v)
            elif t == "int":
                kw[k] = int(v)
            elif t == "float":
                kw[k] = float(v)
            elif k == "fit_model":
                kw[k] = None if v in (None, "", "None") else str(v)
            else:
                kw[k] = v
        return cls(**kw)

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["a0_grid"] = ",".join(fmt(v) for v in self.a0_grid)
        d["alphas"] = ",".join(fmt(v) for v in self.alphas)
        return d


def run_replicate(cfg: StudyConfig, j: int) -> list:
    """One replicate: returns one row per ``a0``."""
    sites = sample_sites_uniform(cfg.K, cfg.side, child_seed(cfg.seed, j, 0))
    data = simulate_model(cfg.model, cfg.true_params, sites, cfg.N, child_seed(cfg.seed, j, 1),
                          cfg.accuracy)
    spec = get_model(cfg.fitted_model)
    lik = PairwiseLikelihood(data.values, sites, spec, cfg.censoring)
    full = fit_mm(lik, sites, spec)
    constrained = [fit_constrained(lik, sites, spec, a0=a0, start=full.params) for a0 in cfg.a0_grid]
    full = refit_if_not_nested(lik, sites, full, constrained)
    est = estimate_godambe_mc(full, sites, cfg.M, child_seed(cfg.seed, j, 2), data=lik,
                              sensitivity=cfg.sensitivity)
    var_a = est.var_natural("a")
    G_aa, H_aa = submatrix_a(est)
    a_hat = full.params.a
    rows = []
    for a0, con in zip(cfg.a0_grid, constrained):
        zt = z_test(a_hat, a0, var_a)
        lt = lr_test(full.logpl, min(con.logpl, full.logpl), H_aa, G_aa, a0=a0)
        rows.append({"replicate": j, "status": "ok", "a0": a0, "a_hat": a_hat,
                     "se_a": math.sqrt(var_a), "logpl_full": full.logpl,
                     "logpl_constrained": con.logpl, "lambda": lt.lam, "Z": zt.statistic,
                     "p_Z": zt.p_value, "LR": lt.statistic, "p_LR": lt.p_value,
                     "converged": full.converged and con.converged})
    return rows


def _failed_rows(cfg: StudyConfig, j: int) -> list:
    return [{"replicate": j, "status": "failed", "a0": a0} for a0 in cfg.a0_grid]


def replicate_path(out: Path, j: int) -> Path:
    return Path(out) / "replicates" / f"rep_{j:04d}.csv"


def write_rows(path: Path, rows: list, columns: Sequence[str]) -> None:
    """Write atomically so a killed study never leaves a truncated file."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])
    os.replace(tmp, path)


def read_rows(path: Path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _replicate_job(args):
    cfg, j, out = args
    path = replicate_path(out, j)
    try:
        rows = run_replicate(cfg, j)
    except (LikelihoodError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.warning("replicate %d failed: %s", j, exc)
        rows = _failed_rows(cfg, j)
    write_rows(path, rows, REPLICATE_COLUMNS)
    return j


def _complete(path: Path, cfg: StudyConfig) -> bool:
    if not path.exists():
        return False
    try:
        rows = read_rows(path)
    except (OSError, csv.Error):
        return False
    return [float(r["a0"]) for r in rows] == list(cfg.a0_grid)


def aggregate(cfg: StudyConfig, out: Path) -> list:
    """Rejection rates per ``(a0, alpha, statistic)`` recounted from the replicate files."""
    per_a0 = {a0: [] for a0 in cfg.a0_grid}
    for j in range(cfg.J):
        for r in read_rows(replicate_path(out, j)):
            if r["status"] == "ok":
                per_a0[float(r["a0"])].append(r)
    rows = []
    for a0 in cfg.a0_grid:
        reps = per_a0[a0]
        for alpha in cfg.alphas:
            for stat, col in (("Z", "p_Z"), ("LR", "p_LR")):
                rej = sum(float(r[col]) < alpha for r in reps)
                n = len(reps)
                rows.append({"a0": a0, "alpha": alpha, "statistic": stat, "n_replicates": n,
                             "rejections": rej, "rate": rej / n if n else math.nan})
    return rows


def run_power_study(cfg: StudyConfig, out, workers: Optional[int] = None) -> list:
    """Run (or resume) the study in ``out`` and write ``power.csv``; returns the aggregated rows."""
    out = Path(out)
    (out / "replicates").mkdir(parents=True, exist_ok=True)
    # worker count is excluded so outputs do not depend on it
    write_kv(out / "study.cfg", {k: v for k, v in cfg.as_dict().items() if k != "workers"})
    todo = [j for j in range(cfg.J) if not _complete(replicate_path(out, j), cfg)]
    workers = cfg.workers if workers is None else workers
    workers = max(1, min(workers or os.cpu_count() or 1, len(todo) or 1))
    jobs = [(cfg, j, out) for j in todo]
    if workers == 1:
        for job in jobs:
            _replicate_job(job)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_replicate_job, jobs))
    rows = aggregate(cfg, out)
    write_rows(out / "power.csv", rows, POWER_COLUMNS)
    return rows
