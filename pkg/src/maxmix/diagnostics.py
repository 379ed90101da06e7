"""
Empirical tail-dependence measures and directional summaries.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.stats import rankdata
from statsmodels.nonparametric.smoothers_lowess import lowess

from .models import get_model
from .simulation import SiteSet, fmt

SECTOR_BOUNDS = [(-np.pi / 8, np.pi / 8), (np.pi / 8, 3 * np.pi / 8),
                 (3 * np.pi / 8, 5 * np.pi / 8), (5 * np.pi / 8, 7 * np.pi / 8)]


def _uniform_scores(x1, x2):
    """Rank-based uniform scores of the jointly observed rows (average ranks for ties)."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    ok = np.isfinite(x1) & np.isfinite(x2)
    x1, x2 = x1[ok], x2[ok]
    n = x1.size
    return rankdata(x1) / (n + 1), rankdata(x2) / (n + 1), n


def empirical_chi(x1, x2, u: float) -> float:
    """Symmetrised ``P(F1 > u | F2 > u)`` from empirical ranks; NaN if nothing exceeds ``u``."""
    U1, U2, n = _uniform_scores(x1, x2)
    both = np.count_nonzero((U1 > u) & (U2 > u))
    denom = 0.5 * (np.count_nonzero(U1 > u) + np.count_nonzero(U2 > u))
    if denom == 0:
        return math.nan
    return both / denom


def empirical_chibar(x1, x2, u: float) -> float:
    """``2 log P(F > u) / log P(F1 > u, F2 > u) - 1`` from empirical ranks.

    Returns -1 when no joint exceedance is observed.
    """
    U1, U2, n = _uniform_scores(x1, x2)
    if n == 0:
        return math.nan
    p_marg = 0.5 * (np.count_nonzero(U1 > u) + np.count_nonzero(U2 > u)) / n
    p_joint = np.count_nonzero((U1 > u) & (U2 > u)) / n
    if p_marg == 0:
        return math.nan
    if p_joint == 0:
        return -1.0
    if p_joint >= 1.0:
        return 1.0
    return float(np.clip(2.0 * math.log(p_marg) / math.log(p_joint) - 1.0, -1.0, 1.0))


def fold_bearing(theta):
    """Fold an axial bearing (radians, 0 = north, clockwise) into ``(-pi/8, 7pi/8]``."""
    theta = np.asarray(theta, dtype=float)
    return theta - np.pi * np.ceil((theta - 7 * np.pi / 8) / np.pi)


def sector_from_bearing(theta):
    """Sector 0-3 of the half-open bands ``(-pi/8 + k pi/4, pi/8 + k pi/4]``."""
    folded = fold_bearing(theta)
    k = np.ceil((folded - np.pi / 8) / (np.pi / 4) - 1e-12).astype(int)
    return np.clip(k, 0, 3)


def bearing(p1, p2, crs: str = "planar"):
    """Bearing from ``p1`` to ``p2``, radians clockwise from north."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    if crs == "planar":
        dx = p2[..., 0] - p1[..., 0]
        dy = p2[..., 1] - p1[..., 1]
        return np.arctan2(dx, dy)
    lon1, lat1 = np.radians(p1[..., 0]), np.radians(p1[..., 1])
    lon2, lat2 = np.radians(p2[..., 0]), np.radians(p2[..., 1])
    dlon = lon2 - lon1
    y = np.sin(dlon) * np.cos(lat2)
    x = np.cos(lat1) * np.sin(lat2) - np.sin(lat1) * np.cos(lat2) * np.cos(dlon)
    return np.arctan2(y, x)


def sector_assign(p1, p2, crs: str = "planar"):
    return sector_from_bearing(bearing(p1, p2, crs))


@dataclass
class PairStatistic:
    i: int
    j: int
    h: float
    sector: int
    chi: float
    chibar: float
    u: float

    def as_row(self, site_ids=None) -> dict:
        si = site_ids[self.i] if site_ids is not None else self.i
        sj = site_ids[self.j] if site_ids is not None else self.j
        return {"site_i": si, "site_j": sj, "h": self.h, "sector": self.sector,
                "chi": self.chi, "chibar": self.chibar, "u": self.u}


def pair_statistics(values, sites: SiteSet, u: float = 0.97) -> list:
    """Empirical chi and chibar at level ``u`` for every site pair."""
    values = np.asarray(values, dtype=float)
    D = sites.distance_matrix
    out = []
    K = values.shape[1]
    for i in range(K - 1):
        for j in range(i + 1, K):
            sec = int(sector_assign(sites.coords[i], sites.coords[j], sites.crs))
            out.append(PairStatistic(i, j, float(D[i, j]), sec,
                                     empirical_chi(values[:, i], values[:, j], u),
                                     empirical_chibar(values[:, i], values[:, j], u), u))
    return out


def write_pair_statistics(path: Union[str, Path], stats: list, site_ids=None) -> None:
    cols = ["site_i", "site_j", "h", "sector", "chi", "chibar", "u"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in stats:
            row = s.as_row(site_ids)
            w.writerow([fmt(row[c]) for c in cols])


def smooth_by_distance(h, values, span: float = 0.75, grid=None, n_grid: int = 50):
    """Tricube-weighted local linear (loess) smooth of ``values`` against ``h``.

    Returns ``(grid, fitted)``; the grid defaults to ``n_grid`` evenly spaced
    distances spanning the data.
    """
    h = np.asarray(h, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(h) & np.isfinite(values)
    h, values = h[ok], values[ok]
    if h.size == 0:
        raise ValueError("nothing to smooth")
    if grid is None:
        grid = np.linspace(h.min(), h.max(), n_grid) if h.size > 1 else h.copy()
    grid = np.asarray(grid, dtype=float)
    if h.size == 1 or np.ptp(h) == 0:
        return grid, np.full(grid.shape, values.mean())
    fitted = lowess(values, h, frac=span, it=0, delta=0.0, xvals=grid)
    return grid, fitted


def sector_curves(stats: list, measure: str = "chi", span: float = 0.75, n_grid: int = 50) -> dict:
    """Loess curve per directional sector: ``sector -> (grid, fitted)``."""
    out = {}
    for k in range(4):
        pts = [(s.h, getattr(s, measure)) for s in stats if s.sector == k]
        pts = [(h, v) for h, v in pts if np.isfinite(v)]
        if len(pts) < 2:
            continue
        h, v = map(np.array, zip(*pts))
        out[k] = smooth_by_distance(h, v, span, n_grid=n_grid)
    return out


def model_chi(spec, params, h):
    """Limiting chi of the model at lag ``h``: ``a (2 - theta_X(h))``; zero for AI models."""
    spec = get_model(spec)
    a, law_x, _ = spec.laws(params, h)
    if law_x is None or a == 0:
        return np.zeros_like(np.asarray(h, dtype=float))
    return a * (2.0 - law_x.theta())
