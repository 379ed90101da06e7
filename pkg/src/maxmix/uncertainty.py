"""
Monte-Carlo sensitivity/variability matrices, Godambe information and CLIC.

Scaling convention: ``H`` and ``J`` are expressed per simulated draw of
``rows_per_draw`` replicates. For an estimate based on ``n_obs`` observed
replicates the covariance of the estimator on the transformed scale is
``Ginv * rows_per_draw / n_obs``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .inference import FitResult, PairwiseLikelihood, from_theta, jacobian_diag, to_theta
from .models import MixtureParams
from .simulation import SiteSet, simulate_model

logger = logging.getLogger(__name__)

MIN_DRAWS = 50
COND_LIMIT = 1e12


def fd_steps(theta, rel_step: float = 1e-4) -> np.ndarray:
    """Per-coordinate steps ``rel_step * max(|theta|, 1)``."""
    theta = np.asarray(theta, dtype=float)
    return rel_step * np.maximum(np.abs(theta), 1.0)


def fd_gradient(fun: Callable, theta, rel_step: float = 1e-4):
    """Central finite-difference gradient; shape ``out + (d,)``."""
    theta = np.asarray(theta, dtype=float)
    h = fd_steps(theta, rel_step)
    E = np.eye(theta.size) * h
    cols = [(np.asarray(fun(theta + E[i]), dtype=float) - np.asarray(fun(theta - E[i]), dtype=float))
            / (2 * h[i]) for i in range(theta.size)]
    return np.stack(cols, axis=-1)


def fd_score_hessian(fun: Callable, theta, rel_step: float = 1e-4):
    """Central finite-difference gradient and Hessian of ``fun`` at ``theta``.

    ``fun`` may return a scalar or an array; derivatives are taken
    elementwise, so the results have shapes ``out + (d,)`` and
    ``out + (d, d)``.
    """
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    h = fd_steps(theta, rel_step)
    E = np.eye(d) * h
    f0 = np.asarray(fun(theta), dtype=float)
    fp = [np.asarray(fun(theta + E[i]), dtype=float) for i in range(d)]
    fm = [np.asarray(fun(theta - E[i]), dtype=float) for i in range(d)]
    grad = np.stack([(fp[i] - fm[i]) / (2 * h[i]) for i in range(d)], axis=-1)
    hess = np.empty(f0.shape + (d, d))
    for i in range(d):
        hess[..., i, i] = (fp[i] - 2 * f0 + fm[i]) / h[i] ** 2
        for j in range(i + 1, d):
            fpp = fun(theta + E[i] + E[j])
            fpm = fun(theta + E[i] - E[j])
            fmp = fun(theta - E[i] + E[j])
            fmm = fun(theta - E[i] - E[j])
            v = (np.asarray(fpp) - fpm - fmp + fmm) / (4 * h[i] * h[j])
            hess[..., i, j] = v
            hess[..., j, i] = v
    return grad, hess


def numerical_score_and_hessian(lik: PairwiseLikelihood, params: MixtureParams,
                                rel_step: float = 1e-4):
    """Gradient and Hessian of the pairwise log-likelihood on the transformed scale."""
    spec = lik.spec

    def total(theta):
        return lik.loglik(from_theta(spec, theta, params), on_nonfinite="raise")

    grad, hess = fd_score_hessian(total, to_theta(spec, params), rel_step)
    bad = ~np.isfinite(grad)
    if np.any(bad):
        raise FloatingPointError(f"non-finite score for {np.array(spec.param_names)[bad].tolist()}")
    if not np.all(np.isfinite(hess)):
        raise FloatingPointError("non-finite Hessian entries")
    return grad, 0.5 * (hess + hess.T)


def _inverse(A: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        warnings.warn(f"{what} is ill-conditioned (cond={cond:.3g}); using pseudo-inverse",
                      RuntimeWarning, stacklevel=3)
        return np.linalg.pinv(A)
    return np.linalg.inv(A)


@dataclass
class GodambeEstimate:
    """Sensitivity ``H``, variability ``J`` and inverse Godambe ``Ginv = H^-1 J H^-1``."""

    names: tuple
    H: np.ndarray
    J: np.ndarray
    Ginv: np.ndarray
    Hinv: np.ndarray
    M: int
    rows_per_draw: int
    n_obs: int
    params: Optional[MixtureParams] = None
    jacobian: Optional[np.ndarray] = None
    mean_score_norm: float = 0.0
    n_dropped: int = 0
    sensitivity: str = "mc"

    @property
    def cov_theta(self) -> np.ndarray:
        """Estimator covariance on the transformed scale."""
        return self.Ginv * self.rows_per_draw / self.n_obs

    @property
    def se(self) -> np.ndarray:
        """Standard errors on the natural scale (delta method)."""
        jac = np.ones(len(self.names)) if self.jacobian is None else self.jacobian
        return np.abs(jac) * np.sqrt(np.maximum(np.diag(self.cov_theta), 0.0))

    def index(self, name: str) -> int:
        return self.names.index(name)

    def var_natural(self, name: str) -> float:
        i = self.index(name)
        return float(self.se[i] ** 2)


def _positive_definite(H: np.ndarray, what: str) -> np.ndarray:
    """Return ``H`` or, if it is not positive definite, its eigenvalue-clipped version."""
    w, V = np.linalg.eigh(H)
    if not np.any(w != 0):
        raise FloatingPointError(f"{what} vanishes: the log-likelihood is flat at the fit "
                                 "and the parameters are not identified")
    floor = 1e-8 * max(float(np.max(np.abs(w))), 1e-300)
    if np.all(w > floor):
        return H
    warnings.warn(f"{what} is not positive definite (min eigenvalue {w.min():.3g}); "
                  "clipping eigenvalues", RuntimeWarning, stacklevel=3)
    return (V * np.maximum(w, floor)) @ V.T


def godambe_from_draws(row_fun: Callable, theta, n_obs: int, names: Sequence[str],
                       rows_per_draw: int = 1, rel_step: float = 1e-4,
                       center: bool = True, H: Optional[np.ndarray] = None) -> GodambeEstimate:
    """Sandwich matrices from per-draw log-likelihoods.

    ``row_fun(theta)`` returns the log-likelihood of each of M simulated
    draws. ``J`` is the mean outer product of the (centred) scores. ``H`` is
    minus the mean Hessian over draws unless supplied (per-draw scale).
    Draws with non-finite values are dropped.
    """
    if H is None:
        grad, hess = fd_score_hessian(row_fun, theta, rel_step)
        ok = np.all(np.isfinite(grad), axis=1) & np.all(np.isfinite(hess), axis=(1, 2))
    else:
        grad = fd_gradient(row_fun, theta, rel_step)
        ok = np.all(np.isfinite(grad), axis=1)
    n_dropped = int((~ok).sum())
    grad = grad[ok]
    M = grad.shape[0]
    if M < MIN_DRAWS:
        raise ValueError(f"only {M} usable Monte-Carlo draws; at least {MIN_DRAWS} required")
    if H is None:
        H = -hess[ok].mean(axis=0)
    H = np.asarray(H, dtype=float)
    H = _positive_definite(0.5 * (H + H.T), "sensitivity matrix")
    mean_score = grad.mean(axis=0)
    dev = grad - mean_score if center else grad
    J = dev.T @ dev / M
    J = 0.5 * (J + J.T)
    Hinv = _inverse(H, "sensitivity matrix")
    Ginv = Hinv @ J @ Hinv
    Ginv = 0.5 * (Ginv + Ginv.T)
    return GodambeEstimate(names=tuple(names), H=H, J=J, Ginv=Ginv, Hinv=Hinv, M=M,
                           rows_per_draw=rows_per_draw, n_obs=n_obs,
                           mean_score_norm=float(np.linalg.norm(mean_score)), n_dropped=n_dropped)


def estimate_godambe_mc(fitted: FitResult, sites: SiteSet, M: int = 1500, seed=None,
                        data=None, sensitivity: str = "observed", rows_per_draw: int = 1,
                        params: Optional[MixtureParams] = None,
                        rel_step: float = 1e-4) -> GodambeEstimate:
    """Monte-Carlo Godambe information at the fitted parameters.

    Simulates ``M`` draws of ``rows_per_draw`` replicates from the fitted
    model and differentiates the per-draw censored pairwise log-likelihood
    (thresholds of the original fit) to obtain the variability ``J``.

    The sensitivity ``H`` is, with ``sensitivity="observed"`` (default),
    minus the Hessian of the observed-data log-likelihood ``data`` rescaled
    to one draw; with ``"mc"`` it is minus the mean Hessian over the
    simulated draws. The Monte-Carlo Hessian is much noisier than the score
    covariance and is frequently indefinite at moderate ``M``.
    """
    if M < MIN_DRAWS:
        raise ValueError(f"M={M} is too small; at least {MIN_DRAWS} draws are required")
    if sensitivity not in ("observed", "mc"):
        raise ValueError(f"unknown sensitivity estimator {sensitivity!r}")
    spec = fitted.spec
    params = fitted.params if params is None else params
    H = None
    if sensitivity == "observed":
        if data is None:
            raise ValueError("observed sensitivity needs the observed data")
        obs = data if isinstance(data, PairwiseLikelihood) else PairwiseLikelihood(
            getattr(data, "values", data), sites, spec, fitted.config, thresholds=fitted.thresholds)
        _, hess = numerical_score_and_hessian(obs, params, rel_step)
        H = -hess * rows_per_draw / obs.n_rows
    sim = simulate_model(spec, params, sites, M * rows_per_draw, seed)
    lik = PairwiseLikelihood(sim.values, sites, spec, fitted.config, thresholds=fitted.thresholds)

    def row_fun(theta):
        rows = lik.row_loglik(from_theta(spec, theta, params))
        return rows.reshape(M, rows_per_draw).sum(axis=1)

    est = godambe_from_draws(row_fun, to_theta(spec, params), fitted.n_obs, spec.param_names,
                             rows_per_draw, rel_step, H=H)
    est.params = params
    est.jacobian = jacobian_diag(spec, params)
    est.sensitivity = sensitivity
    if est.n_dropped:
        logger.warning("dropped %d Monte-Carlo draws with non-finite likelihood", est.n_dropped)
    return est


def inverse_block(A_inv: np.ndarray, index: int) -> float:
    return float(A_inv[index, index])


def submatrix_a(estimate: GodambeEstimate, index_of_a: Optional[int] = None):
    """``(G^aa, H^aa)``: the entries of ``Ginv`` and ``H^-1`` pertaining to ``a``."""
    i = estimate.index("a") if index_of_a is None else index_of_a
    return inverse_block(estimate.Ginv, i), inverse_block(estimate.Hinv, i)


def clic(logpl: float, H, J) -> float:
    """Composite likelihood information criterion ``-2 [logpl - tr(J H^-1)]``.

    ``H`` and ``J`` may be per-draw matrices: the trace is scale free.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    J = np.atleast_2d(np.asarray(J, dtype=float))
    penalty = float(np.trace(J @ np.linalg.inv(H)))
    return -2.0 * (logpl - penalty)


def write_godambe(prefix, estimate: GodambeEstimate, logpl: Optional[float] = None) -> dict:
    """Write ``<prefix>_H.csv``, ``_J.csv``, ``_Ginv.csv`` and a ``_summary.txt`` key-value file."""
    from .simulation import fmt, write_kv

    paths = {}
    for key in ("H", "J", "Ginv"):
        path = f"{prefix}_{key}.csv"
        with open(path, "w") as fh:
            fh.write("," + ",".join(estimate.names) + "\n")
            for name, row in zip(estimate.names, getattr(estimate, key)):
                fh.write(name + "," + ",".join(fmt(v) for v in row) + "\n")
        paths[key] = path
    summary = {"M": estimate.M, "rows_per_draw": estimate.rows_per_draw, "n_obs": estimate.n_obs,
               "sensitivity": estimate.sensitivity, "n_dropped": estimate.n_dropped,
               "variance_scaling": "cov = Ginv * rows_per_draw / n_obs"}
    for name, se in zip(estimate.names, estimate.se):
        summary[f"se_{name}"] = float(se)
    if logpl is not None:
        summary["clic"] = clic(logpl, estimate.H, estimate.J)
    paths["summary"] = f"{prefix}_summary.txt"
    write_kv(paths["summary"], summary)
    return paths
