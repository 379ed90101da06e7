"""
Per-site GEV margins and the transformation to unit Fréchet.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.optimize import minimize
from scipy.stats import genextreme

from .simulation import DataMatrix, fmt

logger = logging.getLogger(__name__)

XI_EPS = 1e-8


class GevFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class GevParams:
    """GEV location, scale and shape (``xi > 0`` is heavy-tailed)."""

    mu: float
    sigma: float
    xi: float
    converged: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def cdf(self, x):
        return genextreme.cdf(x, -self.xi, loc=self.mu, scale=self.sigma)

    def quantile(self, p):
        return genextreme.ppf(p, -self.xi, loc=self.mu, scale=self.sigma)


def gev_negloglik(x, mu: float, sigma: float, xi: float) -> float:
    if sigma <= 0:
        return math.inf
    ll = genextreme.logpdf(x, -xi, loc=mu, scale=sigma)
    s = float(np.sum(ll))
    return -s if np.isfinite(s) else math.inf


def fit_gev(x, maxiter: int = 5000) -> GevParams:
    """Maximum-likelihood GEV fit by Nelder-Mead on ``(mu, log sigma, xi)``."""
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 3:
        raise GevFitError("need at least three finite observations")
    sd = float(np.std(x))
    if sd == 0:
        raise GevFitError("constant column: GEV scale not identifiable")
    # Gumbel moment start
    sigma0 = sd * math.sqrt(6) / math.pi
    mu0 = float(np.mean(x)) - 0.5772156649 * sigma0
    best = None
    for xi0 in (0.1, -0.1, 0.0):
        with np.errstate(invalid="ignore"):  # inf - inf in the simplex spread
            res = minimize(lambda p: gev_negloglik(x, p[0], math.exp(p[1]), p[2]),
                           np.array([mu0, math.log(sigma0), xi0]), method="Nelder-Mead",
                           options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": maxiter,
                                    "maxfev": 4 * maxiter})
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise GevFitError("GEV likelihood is not finite at any start")
    mu, logs, xi = best.x
    return GevParams(float(mu), float(math.exp(logs)), float(xi), bool(best.success))


def fit_gev_per_site(raw: DataMatrix) -> dict:
    """Fit every column; returns ``site_id -> GevParams``.

    Sites whose fit fails or does not converge are logged and left out.
    """
    values = np.asarray(raw.values, dtype=float)
    out = {}
    for k, sid in enumerate(raw.site_ids):
        try:
            g = fit_gev(values[:, k])
        except GevFitError as exc:
            logger.warning("site %s excluded: %s", sid, exc)
            continue
        if not g.converged:
            logger.warning("site %s excluded: GEV fit did not converge", sid)
            continue
        out[sid] = g
    return out


def gev_to_frechet(x, mu: float, sigma: float, xi: float):
    """``-1 / log F_GEV(x)``, i.e. ``(1 + xi (x - mu) / sigma)^(1/xi)``; NaN outside the support."""
    x = np.asarray(x, dtype=float)
    s = (x - mu) / sigma
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        if abs(xi) < XI_EPS:
            z = np.exp(s)
        else:
            t = 1.0 + xi * s
            z = np.where(t > 0, np.power(np.where(t > 0, t, 1.0), 1.0 / xi), np.nan)
    z = np.where(np.isfinite(z) & (z > 0), z, np.nan)
    return z


def frechet_to_gev(z, mu: float, sigma: float, xi: float):
    z = np.asarray(z, dtype=float)
    if abs(xi) < XI_EPS:
        return mu + sigma * np.log(z)
    return mu + sigma * (np.power(z, xi) - 1.0) / xi


def to_unit_frechet(raw: DataMatrix, gev: dict) -> DataMatrix:
    """Transform the fitted columns of ``raw``; columns without a fit are dropped."""
    keep = [k for k, sid in enumerate(raw.site_ids) if sid in gev]
    values = np.asarray(raw.values, dtype=float)
    cols = []
    n_missing = 0
    for k in keep:
        g = gev[raw.site_ids[k]]
        z = gev_to_frechet(values[:, k], g.mu, g.sigma, g.xi)
        n_missing += int(np.count_nonzero(np.isnan(z) & np.isfinite(values[:, k])))
        cols.append(z)
    if n_missing:
        logger.warning("%d values outside the fitted GEV support set to missing", n_missing)
    out = np.column_stack(cols) if cols else np.empty((values.shape[0], 0))
    meta = dict(raw.meta)
    meta["gev_support_missing"] = n_missing
    return DataMatrix(out, "frechet", [raw.site_ids[k] for k in keep], meta)


def write_gev_params(path: Union[str, Path], gev: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "mu", "sigma", "xi"])
        for sid, g in gev.items():
            w.writerow([sid, fmt(g.mu), fmt(g.sigma), fmt(g.xi)])


def read_gev_params(path: Union[str, Path]) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["site"]] = GevParams(float(row["mu"]), float(row["sigma"]), float(row["xi"]))
    return out
