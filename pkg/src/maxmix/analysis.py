"""
Station-data pipeline: margins, diagnostics, model selection on one group of
stations and a test of the mixing coefficient on a second group.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .diagnostics import pair_statistics, sector_curves, write_pair_statistics
from .hypothesis_tests import boundary_test, lr_test, two_sample_z, z_test
from .inference import (CensoringConfig, FitResult, LikelihoodError, PairwiseLikelihood,
                        fit_constrained, fit_mm)
from .margins import fit_gev_per_site, to_unit_frechet, write_gev_params
from .models import MODELS, get_model
from .simulation import DataMatrix, child_seed, fmt, write_kv
from .stations import DEFAULT_SEASON, StationError, load_station_data
from .uncertainty import clic, estimate_godambe_mc, submatrix_a

logger = logging.getLogger(__name__)

MODEL_MENU = ("M1", "M2", "M3", "M4", "M5")


@dataclass
class ModelFit:
    fit: FitResult
    se: dict
    clic: float
    godambe: object = None


@dataclass
class AnalysisResult:
    fits: dict
    selected: str
    tested_model: str
    group_a: list
    group_b: list
    tests: list = field(default_factory=list)
    excluded: list = field(default_factory=list)


def _fit_with_godambe(data: DataMatrix, sites, model: str, config: CensoringConfig, M: int,
                      seed) -> ModelFit:
    lik = PairwiseLikelihood(data.values, sites, model, config)
    fit = fit_mm(lik, sites, model)
    est = estimate_godambe_mc(fit, sites, M, seed, data=lik)
    se = {n: float(s) for n, s in zip(est.names, est.se)}
    return ModelFit(fit, se, clic(fit.logpl, est.H, est.J), est)


def _write_csv(path, rows: list, columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c)) for c in columns])


def run_analysis(series_path, meta_path, group_a: Sequence[str], group_b: Sequence[str], out,
                 M: int = 300, seed: int = 1, u: float = 0.97,
                 config: CensoringConfig = CensoringConfig(), months=DEFAULT_SEASON,
                 models: Sequence[str] = MODEL_MENU) -> AnalysisResult:
    """Full station analysis; every intermediate table is written under ``out``."""
    group_a, group_b = list(group_a), list(group_b)
    overlap = set(group_a) & set(group_b)
    if overlap:
        raise StationError(f"stations in both groups: {sorted(overlap)}")
    for name, g in (("A", group_a), ("B", group_b)):
        if len(g) < 2:
            raise StationError(f"group {name} needs at least two stations")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    raw, table, dates = load_station_data(series_path, meta_path, group_a + group_b, months)
    gev = fit_gev_per_site(raw)
    write_gev_params(out / "gev.csv", gev)
    frechet = to_unit_frechet(raw, gev)
    excluded = [s for s in raw.site_ids if s not in gev]
    group_a = [s for s in group_a if s in gev]
    group_b = [s for s in group_b if s in gev]
    for name, g in (("A", group_a), ("B", group_b)):
        if len(g) < 2:
            raise StationError(f"group {name} has fewer than two stations after GEV fitting")
    cols = {s: k for k, s in enumerate(frechet.site_ids)}

    all_sites = table.sites(frechet.site_ids)
    stats = pair_statistics(frechet.values, all_sites, u)
    write_pair_statistics(out / "pairs.csv", stats, frechet.site_ids)
    curve_rows = []
    for measure in ("chi", "chibar"):
        for sector, (grid, fitted) in sector_curves(stats, measure).items():
            curve_rows += [{"measure": measure, "sector": sector, "h": h, "value": v}
                           for h, v in zip(grid, fitted)]
    _write_csv(out / "sector_curves.csv", curve_rows, ["measure", "sector", "h", "value"])

    def group_data(ids):
        return (DataMatrix(frechet.values[:, [cols[s] for s in ids]], "frechet", ids),
                table.sites(ids))

    data_a, sites_a = group_data(group_a)
    data_b, sites_b = group_data(group_b)

    fits = {}
    for k, model in enumerate(models):
        try:
            fits[model] = _fit_with_godambe(data_a, sites_a, model, config, M,
                                            child_seed(seed, 0, k))
        except (LikelihoodError, ValueError, FloatingPointError) as exc:
            logger.warning("model %s failed on group A: %s", model, exc)
    if not fits:
        raise LikelihoodError("no model could be fitted to group A")
    model_rows = []
    for model, mf in fits.items():
        row = mf.fit.as_row()
        row["clic"] = mf.clic
        for n, s in mf.se.items():
            row[f"se_{n}"] = s
        model_rows.append(row)
    _write_csv(out / "models.csv", model_rows,
               ["model", "logpl", "clic", "converged", "a", "phi_x", "r_x", "phi_y", "r_y",
                "se_a", "se_phi_x", "se_r_x", "se_phi_y", "se_r_y"])
    selected = min(fits, key=lambda m: fits[m].clic)
    mixtures = [m for m in fits if get_model(m).is_mixture]
    tested = selected if get_model(selected).is_mixture else (
        min(mixtures, key=lambda m: fits[m].clic) if mixtures else None)

    result = AnalysisResult(fits, selected, tested, group_a, group_b, excluded=excluded)
    report = {"n_days": frechet.shape[0], "group_a": " ".join(group_a),
              "group_b": " ".join(group_b), "excluded": " ".join(excluded) or "none",
              "selected_model": selected, "tested_model": tested or "none"}
    for model, mf in fits.items():
        report[f"clic_{model}"] = mf.clic

    if tested is not None:
        fa = fits[tested]
        a_ref = boundary_test(min(max(fa.fit.params.a, 0.0), 1.0))
        fb = _fit_with_godambe(data_b, sites_b, tested, config, M, child_seed(seed, 1, 0))
        lik_b = PairwiseLikelihood(data_b.values, sites_b, tested, config)
        con = fit_constrained(lik_b, sites_b, tested, a0=a_ref, start=fb.fit.params)
        G_aa, H_aa = submatrix_a(fb.godambe)
        prov = {"model": tested, "M": M, "seed": seed, "variance_scaling": "Ginv/N"}
        tests = [
            z_test(fb.fit.params.a, a_ref, fb.se["a"] ** 2, **prov),
            lr_test(fb.fit.logpl, min(con.logpl, fb.fit.logpl), H_aa, G_aa, a0=a_ref, **prov),
            two_sample_z(fa.fit.params.a, fa.se["a"], fb.fit.params.a, fb.se["a"], **prov),
        ]
        result.tests = tests
        report.update({"a_hat_A": fa.fit.params.a, "se_a_A": fa.se["a"],
                       "a_hat_B": fb.fit.params.a, "se_a_B": fb.se["a"]})
        for t in tests:
            report[f"{t.kind}_statistic"] = t.statistic
            report[f"{t.kind}_p_value"] = t.p_value
        _write_csv(out / "tests.csv", [t.as_row() for t in tests],
                   ["kind", "a0", "statistic", "lambda", "p_value",
                    "reject_0.01", "reject_0.05", "reject_0.1"])
    write_kv(out / "report.txt", report)
    return result
