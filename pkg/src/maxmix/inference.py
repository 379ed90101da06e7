"""
Censored pairwise likelihood for max-mixture models and its maximisation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .models import MixtureParams, ModelSpec, ParameterDomainError, get_model
from .simulation import DataMatrix, SiteSet

logger = logging.getLogger(__name__)


class LikelihoodError(RuntimeError):
    """The pairwise likelihood cannot be evaluated."""


@dataclass(frozen=True)
class CensoringConfig:
    """Threshold and weighting choices of the censored pairwise likelihood.

    ``mode`` is ``"quantile"`` (per-site empirical quantile ``p``) or
    ``"fixed"`` (common Fréchet threshold ``u``). ``scheme`` selects the
    two-branch or four-branch censoring. Pairs further apart than ``delta``
    get zero weight.
    """

    mode: str = "quantile"
    p: float = 0.9
    u: Optional[float] = None
    scheme: str = "two"
    delta: float = math.inf

    def __post_init__(self):
        if self.mode not in ("quantile", "fixed"):
            raise ValueError(f"unknown threshold mode {self.mode!r}")
        if self.mode == "quantile" and not 0.0 < self.p < 1.0:
            raise ValueError("quantile level p must lie in (0, 1)")
        if self.mode == "fixed" and not (self.u is not None and self.u > 0):
            raise ValueError("fixed threshold u must be positive")
        if self.scheme not in ("two", "four"):
            raise ValueError(f"unknown censoring scheme {self.scheme!r}")
        if not self.delta > 0:
            raise ValueError("weight cutoff delta must be positive")

    def thresholds(self, values: np.ndarray) -> np.ndarray:
        K = values.shape[1]
        if self.mode == "fixed":
            return np.full(K, float(self.u))
        return np.nanquantile(values, self.p, axis=0)


# ---------------------------------------------------------------------------
# parameter transforms
# ---------------------------------------------------------------------------

def to_theta(spec: ModelSpec, params: MixtureParams, names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Unconstrained coordinates: logit for ``a``, log for ranges and radii."""
    names = spec.param_names if names is None else names
    out = []
    for n in names:
        v = getattr(params, n)
        out.append(logit(v) if n == "a" else math.log(v))
    return np.array(out, dtype=float)


def from_theta(spec: ModelSpec, theta, base: Optional[MixtureParams] = None,
               names: Optional[Sequence[str]] = None) -> MixtureParams:
    names = spec.param_names if names is None else names
    vals = {}
    for n, t in zip(names, np.asarray(theta, dtype=float)):
        vals[n] = float(expit(t)) if n == "a" else float(math.exp(t))
    if base is None:
        return MixtureParams(**vals)
    return replace(base, **vals)


def jacobian_diag(spec: ModelSpec, params: MixtureParams) -> np.ndarray:
    """d(natural)/d(theta) for each parameter, in ``spec.param_names`` order."""
    out = []
    for n in spec.param_names:
        v = getattr(params, n)
        out.append(v * (1.0 - v) if n == "a" else v)
    return np.array(out)


def default_start(spec: ModelSpec, sites: SiteSet) -> MixtureParams:
    """``a = 0.5``, ranges ``median distance / 3``, radii ``median distance``."""
    d = sites.distance_matrix[np.triu_indices(len(sites), 1)]
    med = float(np.median(d))
    vals = {}
    for n in spec.param_names:
        if n == "a":
            vals[n] = 0.5
        elif n.startswith("phi"):
            vals[n] = med / 3.0
        else:
            vals[n] = med
    return MixtureParams(**vals)


# ---------------------------------------------------------------------------
# censored contributions
# ---------------------------------------------------------------------------

def _log_or_nan(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), np.nan)


def censored_pair_loglik_2case(z1, z2, u1, u2, spec, params, h):
    """Two-branch censored log-contribution for one pair and one replicate.

    Both values at or below their thresholds give ``log G(u1, u2)``; any
    exceedance gives ``log g(z1, z2)``.
    """
    spec = get_model(spec)
    if z1 <= u1 and z2 <= u2:
        G = spec.pieces(u1, u2, params, h)[0]
        return float(_log_or_nan(G))
    return float(spec.log_density(z1, z2, params, h))


def censored_pair_loglik_4case(z1, z2, u1, u2, spec, params, h):
    """Four-branch censored log-contribution for one pair and one replicate."""
    spec = get_model(spec)
    if z1 <= u1 and z2 <= u2:
        return float(_log_or_nan(spec.pieces(u1, u2, params, h)[0]))
    if z1 > u1 and z2 <= u2:
        return float(_log_or_nan(spec.pieces(z1, u2, params, h)[1]))
    if z1 <= u1 and z2 > u2:
        return float(_log_or_nan(spec.pieces(u1, z2, params, h)[2]))
    return float(spec.log_density(z1, z2, params, h))


# ---------------------------------------------------------------------------
# pairwise likelihood on a data set
# ---------------------------------------------------------------------------

class PairwiseLikelihood:
    """Censored pairwise log-likelihood of one data set.

    Branch membership depends only on the data and thresholds, so it is
    resolved once here. Censored contributions are constant per pair and are
    evaluated once per pair; only exceedances need the density.

    Parameters
    ----------
    values : ndarray, shape (N, K)
        Fréchet-scale observations; NaN marks a missing value.
    sites : SiteSet
    spec : ModelSpec or str
    config : CensoringConfig
    thresholds : ndarray, optional
        Per-site thresholds; computed from ``values`` and ``config`` if absent.
    """

    def __init__(self, values, sites: SiteSet, spec, config: CensoringConfig = CensoringConfig(),
                 thresholds=None):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        N, K = values.shape
        if K != len(sites):
            raise ValueError(f"data has {K} columns but there are {len(sites)} sites")
        self.spec = get_model(spec)
        self.config = config
        self.n_rows = N
        self.thresholds = (config.thresholds(values) if thresholds is None
                           else np.asarray(thresholds, dtype=float))
        ii, jj = np.triu_indices(K, 1)
        h = sites.distance_matrix[ii, jj]
        keep = h <= config.delta
        ii, jj, h = ii[keep], jj[keep], h[keep]
        if ii.size == 0:
            raise LikelihoodError("no pairs: weight cutoff is below every pairwise distance")
        self.pair_i, self.pair_j, self.h = ii, jj, h
        self.u1 = self.thresholds[ii]
        self.u2 = self.thresholds[jj]

        Z1 = values[:, ii]  # (N, P)
        Z2 = values[:, jj]
        ok = np.isfinite(Z1) & np.isfinite(Z2)
        above1 = Z1 > self.u1
        above2 = Z2 > self.u2
        cens = ok & ~above1 & ~above2
        exc = ok & (above1 | above2)
        self.n_cens = cens.sum(axis=0)
        self.n_missing = int((~ok).sum())
        # pair-major ordering of the exceedances fixes the summation order
        ep, er = np.nonzero(exc.T)
        self.exc_pair, self.exc_row = ep, er
        z1 = Z1[er, ep]
        z2 = Z2[er, ep]
        if config.scheme == "two":
            branch = np.full(ep.size, 3, dtype=np.int8)
        else:
            a1, a2 = above1[er, ep], above2[er, ep]
            branch = np.where(a1 & a2, 3, np.where(a1, 1, 2)).astype(np.int8)
            z2 = np.where(branch == 1, self.u2[ep], z2)
            z1 = np.where(branch == 2, self.u1[ep], z1)
        self.branch = branch
        self.z1, self.z2 = z1, z2
        self.h_exc = h[ep]
        cp, cr = np.nonzero(cens.T)
        self.cens_pair, self.cens_row = cp, cr
        self.last_skipped = 0

    @property
    def n_pairs(self) -> int:
        return self.pair_i.size

    def terms(self, params: MixtureParams):
        """Return (log G per pair, log contribution per exceedance)."""
        spec = self.spec
        logG = _log_or_nan(spec.pieces(self.u1, self.u2, params, self.h)[0])
        if self.z1.size == 0:
            return logG, np.empty(0)
        with np.errstate(all="ignore"):
            G, G1, G2, g = spec.pieces(self.z1, self.z2, params, self.h_exc)
            logg = spec.log_density(self.z1, self.z2, params, self.h_exc, g)
        if self.config.scheme == "two":
            return logG, logg
        return logG, np.where(self.branch == 3, logg,
                              _log_or_nan(np.where(self.branch == 1, G1, G2)))

    def loglik(self, params: MixtureParams, on_nonfinite: str = "skip") -> float:
        """Sum of censored contributions.

        ``on_nonfinite`` is ``"skip"`` (drop and count them in
        ``last_skipped``), ``"reject"`` (return ``-inf``) or ``"raise"``.
        """
        logG, contrib = self.terms(params)
        badG = ~np.isfinite(logG) & (self.n_cens > 0)
        badE = ~np.isfinite(contrib)
        n_bad = int(self.n_cens[badG].sum() + badE.sum())
        self.last_skipped = n_bad
        if n_bad:
            if on_nonfinite == "reject":
                return -math.inf
            if on_nonfinite == "raise":
                raise LikelihoodError(f"{n_bad} non-finite contributions at {params}")
            logger.debug("skipping %d non-finite contributions", n_bad)
            if n_bad == int(self.n_cens.sum() + contrib.size):
                raise LikelihoodError("every pair contribution is non-finite")
        total = float(np.sum(np.where(badG, 0.0, self.n_cens * np.nan_to_num(logG))))
        total += float(np.sum(np.where(badE, 0.0, contrib)))
        return total

    def row_loglik(self, params: MixtureParams) -> np.ndarray:
        """Per-replicate pairwise log-likelihood (NaN where non-finite)."""
        logG, contrib = self.terms(params)
        # an empty weighted bincount is integer-typed
        out = np.bincount(self.cens_row, weights=logG[self.cens_pair],
                          minlength=self.n_rows).astype(float)
        out += np.bincount(self.exc_row, weights=contrib, minlength=self.n_rows)
        return out


def pairwise_loglik(data: Union[DataMatrix, np.ndarray], sites: SiteSet, spec, params: MixtureParams,
                    config: CensoringConfig = CensoringConfig(), thresholds=None) -> float:
    """Weighted censored pairwise log-likelihood of a Fréchet-scale data set."""
    if isinstance(data, DataMatrix):
        if data.scale != "frechet":
            raise ValueError("pairwise likelihood needs Fréchet-scale data")
        data = data.values
    spec = get_model(spec)
    spec.check(params)
    return PairwiseLikelihood(data, sites, spec, config, thresholds).loglik(params)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerSettings:
    xatol: float = 1e-6
    fatol: float = 1e-6
    maxiter: int = 2000
    restart: bool = True
    initial_step: float = 0.25


@dataclass
class FitResult:
    model: str
    params: MixtureParams
    logpl: float
    converged: bool
    iterations: int
    n_evals: int
    thresholds: np.ndarray
    config: CensoringConfig
    n_obs: int
    fixed_a: Optional[float] = None
    theta: np.ndarray = field(default_factory=lambda: np.empty(0))
    transforms: dict = field(default_factory=dict)

    @property
    def spec(self) -> ModelSpec:
        return get_model(self.model)

    def as_row(self) -> dict:
        row = {"model": self.model, "logpl": self.logpl, "converged": self.converged,
               "iterations": self.iterations, "n_evals": self.n_evals, "n_obs": self.n_obs,
               "fixed_a": self.fixed_a}
        for n in ("a", "phi_x", "r_x", "phi_y", "r_y"):
            row[n] = getattr(self.params, n)
        return row


def _nelder_mead(fun, x0, settings: OptimizerSettings):
    """Nelder-Mead from an axis-aligned simplex, with one restart at the incumbent."""
    x0 = np.asarray(x0, dtype=float)
    n_evals = 0
    iterations = 0
    converged = False
    best_x, best_f = x0, fun(x0)
    n_evals += 1
    rounds = 2 if settings.restart else 1
    for _ in range(rounds):
        simplex = np.vstack([best_x] + [best_x + settings.initial_step * e
                                        for e in np.eye(best_x.size)])
        res = minimize(fun, best_x, method="Nelder-Mead",
                       options={"xatol": settings.xatol, "fatol": settings.fatol,
                                "maxiter": settings.maxiter, "initial_simplex": simplex})
        n_evals += res.nfev
        iterations += res.nit
        converged = bool(res.success)
        if res.fun <= best_f:
            best_x, best_f = res.x, float(res.fun)
    return best_x, best_f, converged, iterations, n_evals


def _fit(lik: PairwiseLikelihood, start: MixtureParams, names, settings, fixed_a=None) -> FitResult:
    spec = lik.spec
    names = tuple(names)
    theta0 = to_theta(spec, start, names)

    def objective(theta):
        if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) > 30):
            return math.inf
        p = from_theta(spec, theta, start, names)
        return -lik.loglik(p, on_nonfinite="reject")

    f0 = objective(theta0)
    if not math.isfinite(f0):
        raise LikelihoodError(
            f"non-finite objective at start {start}: {lik.last_skipped} bad contributions")
    x, f, conv, nit, nev = _nelder_mead(objective, theta0, settings)
    params = from_theta(spec, x, start, names)
    return FitResult(model=spec.name, params=params, logpl=-f, converged=conv, iterations=nit,
                     n_evals=nev, thresholds=lik.thresholds, config=lik.config, n_obs=lik.n_rows,
                     fixed_a=fixed_a, theta=to_theta(spec, params),
                     transforms={n: ("logit" if n == "a" else "log") for n in spec.param_names})


def _likelihood(data, sites, spec, config, thresholds=None) -> PairwiseLikelihood:
    if isinstance(data, PairwiseLikelihood):
        return data
    if isinstance(data, DataMatrix):
        if data.scale != "frechet":
            raise ValueError("fitting needs Fréchet-scale data")
        data = data.values
    return PairwiseLikelihood(data, sites, spec, config, thresholds)


def fit_mm(data, sites: SiteSet, spec, config: CensoringConfig = CensoringConfig(),
           start: Optional[MixtureParams] = None,
           settings: OptimizerSettings = OptimizerSettings()) -> FitResult:
    """Maximum censored pairwise likelihood fit of any model in the menu.

    ``data`` may be a DataMatrix, an array or a prepared PairwiseLikelihood.
    """
    spec = get_model(spec)
    lik = _likelihood(data, sites, spec, config)
    start = default_start(spec, sites) if start is None else start
    spec.check(start)
    return _fit(lik, start, spec.param_names, settings)


def fit_constrained(data, sites: SiteSet, spec, config: CensoringConfig = CensoringConfig(),
                    a0: float = 0.5, start: Optional[MixtureParams] = None,
                    settings: OptimizerSettings = OptimizerSettings()) -> FitResult:
    """Maximise over the nuisance parameters with the mixing coefficient fixed at ``a0``."""
    spec = get_model(spec)
    if not spec.is_mixture:
        raise ValueError(f"{spec.name} has no mixing coefficient")
    if not 0.0 < a0 < 1.0:
        raise ParameterDomainError("a0 must lie strictly inside (0, 1)")
    lik = _likelihood(data, sites, spec, config)
    start = default_start(spec, sites) if start is None else start
    start = start.with_(a=float(a0))
    spec.check(start)
    names = [n for n in spec.param_names if n != "a"]
    return _fit(lik, start, names, settings, fixed_a=float(a0))


def refit_if_not_nested(data, sites, full: FitResult, constrained: Sequence[FitResult],
                        settings: OptimizerSettings = OptimizerSettings()) -> FitResult:
    """Restart the unrestricted fit from the best constrained optimum if that one is higher."""
    best = max(constrained, key=lambda f: f.logpl, default=None)
    if best is None or best.logpl <= full.logpl:
        return full
    logger.info("constrained optimum exceeds unrestricted one; refitting")
    lik = _likelihood(data, sites, full.spec, full.config, full.thresholds)
    refit = _fit(lik, best.params, full.spec.param_names, settings)
    return refit if refit.logpl >= full.logpl else full
