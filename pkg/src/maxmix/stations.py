"""
Station metadata and daily-series ingestion.

Series are read in long format (``date, station, value``) and pivoted to a
date-by-station matrix with NaN for missing days. Station metadata holds
``station, lon, lat, altitude``; altitude is carried but unused.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .simulation import DataMatrix, SiteSet

DEFAULT_SEASON = (4, 9)


class StationError(ValueError):
    pass


@dataclass
class StationTable:
    ids: list
    lon: np.ndarray
    lat: np.ndarray
    altitude: np.ndarray

    def __post_init__(self):
        self.lon = np.asarray(self.lon, dtype=float)
        self.lat = np.asarray(self.lat, dtype=float)
        self.altitude = np.asarray(self.altitude, dtype=float)
        if len(set(self.ids)) != len(self.ids):
            raise StationError("duplicate station ids")
        if np.any(np.abs(self.lat) > 90) or np.any(np.abs(self.lon) > 180):
            raise StationError("station coordinates out of range")

    def sites(self, ids: Sequence[str] = None) -> SiteSet:
        """Geographic :class:`SiteSet` (lon, lat) for ``ids`` (all stations by default)."""
        ids = list(self.ids) if ids is None else list(ids)
        idx = self.indices(ids)
        coords = np.column_stack([self.lon[idx], self.lat[idx]])
        return SiteSet(coords, crs="geographic", ids=ids)

    def indices(self, ids: Sequence[str]) -> list:
        pos = {s: i for i, s in enumerate(self.ids)}
        unknown = [s for s in ids if s not in pos]
        if unknown:
            raise StationError(f"unknown station ids: {unknown}")
        return [pos[s] for s in ids]


def read_station_table(path: Union[str, Path]) -> StationTable:
    ids, lon, lat, alt = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["station"].strip())
            lon.append(float(row["lon"]))
            lat.append(float(row["lat"]))
            a = row.get("altitude", "")
            alt.append(float(a) if a not in ("", None, "NA") else np.nan)
    return StationTable(ids, lon, lat, alt)


def _parse_value(s: str) -> float:
    s = s.strip()
    if s in ("", "NA", "NaN", "nan"):
        return np.nan
    return float(s)


def read_daily_long(path: Union[str, Path], stations: Sequence[str] = None):
    """Pivot a long CSV to ``(dates, station_ids, values)``; absent entries are NaN."""
    records = {}
    seen = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sid = row["station"].strip()
            date = dt.date.fromisoformat(row["date"].strip())
            if sid not in records:
                records[sid] = {}
                seen.append(sid)
            records[sid][date] = _parse_value(row["value"])
    ids = list(stations) if stations is not None else sorted(seen)
    unknown = [s for s in ids if s not in records]
    if unknown:
        raise StationError(f"no data for stations: {unknown}")
    dates = sorted({d for s in ids for d in records[s]})
    values = np.full((len(dates), len(ids)), np.nan)
    pos = {d: i for i, d in enumerate(dates)}
    for k, s in enumerate(ids):
        for d, v in records[s].items():
            values[pos[d], k] = v
    return dates, ids, values


def season_mask(dates: Sequence[dt.date], months=DEFAULT_SEASON) -> np.ndarray:
    """True for dates whose month lies in the inclusive range ``months``."""
    lo, hi = months
    m = np.array([d.month for d in dates])
    return (m >= lo) & (m <= hi)


def load_station_data(series_path, meta_path, stations: Sequence[str] = None,
                      months=DEFAULT_SEASON):
    """Read, align and season-filter station series.

    Returns ``(DataMatrix raw, StationTable, dates)``.
    """
    table = read_station_table(meta_path)
    if stations is not None:
        table.indices(stations)
    dates, ids, values = read_daily_long(series_path, stations)
    table.indices(ids)
    keep = season_mask(dates, months)
    dates = [d for d, k in zip(dates, keep) if k]
    data = DataMatrix(values[keep], "raw", ids, {"season": f"{months[0]}-{months[1]}"})
    return data, table, dates
