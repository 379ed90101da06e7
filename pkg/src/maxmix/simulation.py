"""
Simulation of Gaussian, max-stable, inverted max-stable and max-mixture fields.

Max-stable fields use the spectral representation
``X(s) = max_k zeta_k Q_k(s - x_k)`` where ``{(zeta_k, x_k)}`` is a Poisson
process on ``(0, inf) x W`` with intensity ``zeta**-2 dzeta dx`` and ``W`` is
the bounding box of the sites enlarged by the support of ``Q``. Points are
generated in decreasing order of ``zeta`` until no remaining point can
change any site value, up to a cap of ``accuracy`` points per realisation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import log_ndtr

from .models import MixtureParams, ModelSpec, ParameterDomainError, get_model, omega

logger = logging.getLogger(__name__)

Seed = Union[None, int, np.random.Generator, np.random.SeedSequence]

EARTH_RADIUS_KM = 6371.0
# bound on max(0, eps) used by the TEG stopping rule; P(eps > 4) ~ 3e-5
GAUSS_BOUND = 4.0
DEFAULT_ACCURACY = 50_000


def make_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def child_seed(master: int, *counter: int) -> np.random.SeedSequence:
    """Counter-based stream split: stream ``counter`` of ``master``."""
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(c) for c in counter))


# ---------------------------------------------------------------------------
# sites and data containers
# ---------------------------------------------------------------------------

def haversine_km(lon1, lat1, lon2, lat2):
    """Great-circle distance in kilometres between points given in degrees."""
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    dlon = lon2 - lon1
    dlat = lat2 - lat1
    a = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


@dataclass
class SiteSet:
    """K locations; ``coords[:, 0]`` is x (or longitude), ``coords[:, 1]`` is y (latitude)."""

    coords: np.ndarray
    crs: str = "planar"
    ids: Optional[list] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValueError("coords must have shape (K, 2)")
        if len(self.coords) < 2:
            raise ValueError("a site set needs at least two sites")
        if self.crs not in ("planar", "geographic"):
            raise ValueError(f"unknown crs {self.crs!r}")
        if self.ids is None:
            self.ids = [f"s{i}" for i in range(len(self.coords))]
        self.ids = [str(i) for i in self.ids]
        if len(self.ids) != len(self.coords):
            raise ValueError("one id per site required")
        self._dist = None

    def __len__(self):
        return len(self.coords)

    @property
    def distance_matrix(self) -> np.ndarray:
        if self._dist is None:
            if self.crs == "planar":
                d = cdist(self.coords, self.coords)
            else:
                lon, lat = self.coords[:, 0], self.coords[:, 1]
                d = haversine_km(lon[:, None], lat[:, None], lon[None, :], lat[None, :])
            d = 0.5 * (d + d.T)
            np.fill_diagonal(d, 0.0)
            self._dist = d
        return self._dist

    def to_planar(self) -> "SiteSet":
        """Planar copy in km (local equirectangular projection) for geographic sites."""
        if self.crs == "planar":
            return self
        lon, lat = np.radians(self.coords[:, 0]), np.radians(self.coords[:, 1])
        lat0 = 0.5 * (lat.min() + lat.max())
        x = EARTH_RADIUS_KM * np.cos(lat0) * (lon - lon.min())
        y = EARTH_RADIUS_KM * (lat - lat.min())
        return SiteSet(np.column_stack([x, y]), "planar", list(self.ids))

    def subset(self, idx) -> "SiteSet":
        idx = np.asarray(idx)
        return SiteSet(self.coords[idx], self.crs, [self.ids[i] for i in idx])


@dataclass
class DataMatrix:
    """N x K observations; rows are replicates, columns are sites."""

    values: np.ndarray
    scale: str = "frechet"
    site_ids: Optional[list] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.scale not in ("raw", "gev", "frechet"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.site_ids is None:
            self.site_ids = [f"s{i}" for i in range(self.values.shape[1])]
        if self.scale == "frechet":
            finite = np.isfinite(self.values)
            if np.any(self.values[finite] <= 0):
                raise ValueError("Fréchet-scale values must be strictly positive")

    @property
    def shape(self):
        return self.values.shape


def sample_sites_uniform(K: int, square_side: float = 2.0, seed: Seed = None) -> SiteSet:
    """K i.i.d. uniform locations in ``[0, side]^2``."""
    if K < 2:
        raise ValueError("K must be at least 2")
    rng = make_rng(seed)
    return SiteSet(rng.uniform(0.0, square_side, size=(K, 2)))


# ---------------------------------------------------------------------------
# Gaussian fields
# ---------------------------------------------------------------------------

def _correlation_matrix(sites: SiteSet, correlation) -> np.ndarray:
    d = sites.distance_matrix
    if callable(correlation):
        C = np.asarray(correlation(d), dtype=float)
    else:
        phi = float(correlation)
        if phi <= 0:
            raise ParameterDomainError("correlation range must be positive")
        C = np.exp(-d / phi)
    np.fill_diagonal(C, 1.0)
    return C


def correlation_factor(C: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``C``, retrying once with a 1e-10 diagonal jitter."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        logger.warning("Cholesky failed; adding 1e-10 to the diagonal")
        try:
            return np.linalg.cholesky(C + 1e-10 * np.eye(len(C)))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("correlation matrix is not positive definite") from exc


def simulate_gaussian_field(sites: SiteSet, correlation, n: int, seed: Seed = None) -> DataMatrix:
    """n draws of a zero-mean unit-variance Gaussian field at the sites.

    ``correlation`` is either an exponential range ``phi`` or a callable
    mapping a distance matrix to correlations.
    """
    rng = make_rng(seed)
    L = correlation_factor(_correlation_matrix(sites, correlation))
    eps = rng.standard_normal((n, len(sites))) @ L.T
    return DataMatrix(eps.reshape(n, len(sites)), scale="raw", site_ids=list(sites.ids))


def simulate_gaussian_copula_ai(sites: SiteSet, correlation, n: int, seed: Seed = None) -> DataMatrix:
    """Asymptotically independent field ``-1/log Phi(Y')`` with unit Fréchet margins."""
    g = simulate_gaussian_field(sites, correlation, n, seed).values
    with np.errstate(divide="ignore"):
        y = -1.0 / log_ndtr(g)
    return DataMatrix(y, scale="frechet", site_ids=list(sites.ids))


# ---------------------------------------------------------------------------
# max-stable fields
# ---------------------------------------------------------------------------

def _box_sampler(xy, pad):
    """Uniform centres on the padded bounding box; returns ``(sample, area)``."""
    lo = xy.min(axis=0) - pad
    hi = xy.max(axis=0) + pad

    def sample(rng, shape):
        return lo + (hi - lo) * rng.random(shape + (2,))

    return sample, float(np.prod(hi - lo))


def _spectral_max(n, rng, *, sample, area, shape_fn, bound, accuracy, batch=64, block=512, K):
    """Maxima over the Poisson spectral points for n realisations.

    Centres come from ``sample(rng, shape)`` on a region of measure ``area``;
    ``shape_fn(centers, rng)`` returns the profile at the sites for an
    ``(m, b, 2)`` array of centres and ``bound`` bounds it.
    """
    out = np.empty((n, K))
    n_capped = 0
    for start in range(0, n, block):
        nb = min(block, n - start)
        X = np.zeros((nb, K))
        gam = np.zeros(nb)
        active = np.arange(nb)
        used = 0
        while active.size:
            na = active.size
            arrivals = gam[active, None] + np.cumsum(rng.standard_exponential((na, batch)), axis=1)
            centers = sample(rng, (na, batch))
            Q = shape_fn(centers, rng)
            vals = (area / arrivals)[:, :, None] * Q
            X[active] = np.maximum(X[active], vals.max(axis=1))
            gam[active] = arrivals[:, -1]
            used += batch
            done = area * bound / gam[active] < X[active].min(axis=1)
            active = active[~done]
            if used >= accuracy and active.size:
                n_capped += active.size
                break
        out[start:start + nb] = X
    if n_capped:
        logger.warning("%d realisations hit the %d-point cap", n_capped, accuracy)
    return out, n_capped


def simulate_teg(sites: SiteSet, phi: float, r: float, n: int, seed: Seed = None,
                 accuracy: int = DEFAULT_ACCURACY) -> DataMatrix:
    """Truncated extremal Gaussian max-stable field (unit Fréchet margins).

    ``Q(s) = c max(0, eps(s)) 1{|s - x| <= r}`` with ``c = sqrt(2 pi)/(pi r^2)``
    so that ``Q`` integrates to one in expectation over the centre ``x``.

    When the disks around the sites cover less area than the bounding box,
    centres are drawn from the equal mixture of those disks and the profile
    is divided by the number of disks covering the centre, which keeps the
    stopping bound independent of ``r``.
    """
    if phi <= 0 or r <= 0:
        raise ParameterDomainError("TEG needs phi > 0 and r > 0")
    if sites.crs != "planar":
        raise ValueError("max-stable simulation needs planar sites")
    rng = make_rng(seed)
    xy = sites.coords
    K = len(xy)
    L = correlation_factor(_correlation_matrix(sites, phi))
    c = np.sqrt(2.0 * np.pi) / (np.pi * r * r)
    sample, area = _box_sampler(xy, r)
    disks = K * np.pi * r * r < area
    if disks:
        area = K * np.pi * r * r

        def sample(rng, shape):
            k = rng.integers(K, size=shape)
            rad = r * np.sqrt(rng.random(shape))
            ang = 2.0 * np.pi * rng.random(shape)
            return xy[k] + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)

    def shape_fn(centers, rng):
        eps = rng.standard_normal(centers.shape[:2] + (K,)) @ L.T
        d2 = ((centers[:, :, None, :] - xy[None, None, :, :]) ** 2).sum(axis=-1)
        covered = d2 <= r * r
        Q = c * np.maximum(eps, 0.0) * covered
        if disks:
            Q = Q / np.maximum(covered.sum(axis=-1, keepdims=True), 1)
        return Q

    vals, capped = _spectral_max(n, rng, sample=sample, area=area, shape_fn=shape_fn,
                                 bound=c * GAUSS_BOUND, accuracy=accuracy, K=K)
    return DataMatrix(vals, "frechet", list(sites.ids),
                      {"model": "teg", "phi": phi, "r": r, "capped": capped})


def simulate_smith(sites: SiteSet, phi: float, n: int, seed: Seed = None,
                   accuracy: int = DEFAULT_ACCURACY) -> DataMatrix:
    """Isotropic Smith storm-profile field with ``Sigma = phi^2 I``."""
    if phi <= 0:
        raise ParameterDomainError("Smith needs phi > 0")
    if sites.crs != "planar":
        raise ValueError("max-stable simulation needs planar sites")
    rng = make_rng(seed)
    xy = sites.coords
    norm = 1.0 / (2.0 * np.pi * phi * phi)

    def shape_fn(centers, rng):
        d2 = ((centers[:, :, None, :] - xy[None, None, :, :]) ** 2).sum(axis=-1)
        return norm * np.exp(-d2 / (2.0 * phi * phi))

    sample, area = _box_sampler(xy, 4.0 * phi)
    vals, capped = _spectral_max(n, rng, sample=sample, area=area, shape_fn=shape_fn,
                                 bound=norm, accuracy=accuracy, K=len(xy))
    return DataMatrix(vals, "frechet", list(sites.ids),
                      {"model": "smith", "phi": phi, "capped": capped})


def invert_ms(data: Union[DataMatrix, np.ndarray]) -> Union[DataMatrix, np.ndarray]:
    """Map a unit Fréchet max-stable field to its inverted (AI) counterpart."""
    if isinstance(data, DataMatrix):
        if data.scale != "frechet":
            raise ValueError("inversion needs Fréchet-scale data")
        return DataMatrix(omega(data.values), "frechet", list(data.site_ids), dict(data.meta))
    return omega(data)


def _simulate_ms(kind, sites, phi, r, n, rng, accuracy):
    if kind == "teg":
        return simulate_teg(sites, phi, r, n, rng, accuracy).values
    if kind == "smith":
        return simulate_smith(sites, phi, n, rng, accuracy).values
    raise ValueError(f"unknown max-stable kind {kind!r}")


def simulate_model(spec: Union[str, ModelSpec], params: MixtureParams, sites: SiteSet, n: int,
                   seed: Seed = None, accuracy: int = DEFAULT_ACCURACY) -> DataMatrix:
    """Simulate any entry of the model menu (max-mixture, pure MS or pure IMS)."""
    spec = get_model(spec)
    spec.check(params)
    sites = sites.to_planar()
    rng = make_rng(seed)
    rx, ry = rng.spawn(2)
    a = spec.mixing(params)
    X = Y = None
    if a > 0:
        X = _simulate_ms(spec.x_kind, sites, params.phi_x, params.r_x, n, rx, accuracy)
    if a < 1:
        Y = omega(_simulate_ms(spec.y_kind, sites, params.phi_y, params.r_y, n, ry, accuracy))
    if X is None:
        Z = Y
    elif Y is None:
        Z = X
    else:
        Z = np.maximum(a * X, (1.0 - a) * Y)
    meta = {"model": spec.name, **params.as_dict()}
    return DataMatrix(Z, "frechet", list(sites.ids), meta)


def simulate_mm(sites: SiteSet, params: MixtureParams, spec: Union[str, ModelSpec], n: int,
                seed: Seed = None, accuracy: int = DEFAULT_ACCURACY) -> DataMatrix:
    """Max-mixture ``max(a X, (1-a) Y)``; ``a`` in {0, 1} returns the pure component."""
    spec = get_model(spec)
    if not spec.is_mixture:
        raise ValueError(f"{spec.name} is not a max-mixture model")
    return simulate_model(spec, params, sites, n, seed, accuracy)


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    """Fixed 17-significant-digit formatting used for every numeric output."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if np.isnan(x) else format(float(x), ".17g")
    return str(x)


def write_kv(path: Union[str, Path], items: dict) -> None:
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {fmt(v)}\n")


def read_kv(path: Union[str, Path]) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: malformed line {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_data_matrix(path: Union[str, Path], data: DataMatrix) -> None:
    """CSV with a header of site ids; sidecar ``<path>.meta`` holds scale and metadata."""
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(",".join(data.site_ids) + "\n")
        for row in data.values:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    write_kv(str(path) + ".meta", {"scale": data.scale, "n": data.shape[0],
                                   "k": data.shape[1], **data.meta})


def read_data_matrix(path: Union[str, Path]) -> DataMatrix:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    values = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
    meta = {}
    scale = "raw"
    side = Path(str(path) + ".meta")
    if side.exists():
        meta = read_kv(side)
        scale = meta.pop("scale", "raw")
        meta.pop("n", None)
        meta.pop("k", None)
    return DataMatrix(values.reshape(-1, len(header)), scale, header, meta)


def write_sites(path: Union[str, Path], sites: SiteSet) -> None:
    with open(path, "w") as fh:
        fh.write("site,x,y,crs\n")
        for sid, (x, y) in zip(sites.ids, sites.coords):
            fh.write(f"{sid},{fmt(x)},{fmt(y)},{sites.crs}\n")


def read_sites(path: Union[str, Path]) -> SiteSet:
    ids, xy, crs = [], [], "planar"
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            if not line.strip():
                continue
            row = dict(zip(header, line.strip().split(",")))
            ids.append(row["site"])
            xy.append((float(row["x"]), float(row["y"])))
            crs = row.get("crs", crs) or crs
    return SiteSet(np.array(xy), crs, ids)
