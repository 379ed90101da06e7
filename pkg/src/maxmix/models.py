"""
Bivariate laws of max-stable, inverted max-stable and max-mixture processes.

All functions are vectorised over numpy arrays and broadcast their arguments.
Fréchet-scale arguments are expected to be strictly positive.

Conventions
-----------
For a max-stable pair with exponent measure ``V``::

    G(z1, z2) = exp(-V(z1, z2))
    g(z1, z2) = (V1 * V2 - V12) * exp(-V)

where ``V1``, ``V2`` and ``V12`` are the partial derivatives of ``V``.
The inverted process ``Y = omega(X)`` uses the decreasing involution
``omega(z) = -1 / log(1 - exp(-1/z))``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.special import log_ndtr, ndtr

ArrayLike = Union[float, np.ndarray]

_SQRT2PI = np.sqrt(2.0 * np.pi)
_LOG_SQRT2PI = 0.5 * np.log(2.0 * np.pi)
# below this mixing weight (or above one minus it) a component is dropped
A_EPS = 1e-10


class ParameterDomainError(ValueError):
    """A model parameter lies outside its admissible domain."""


class ConsistencyError(ArithmeticError):
    """A computed quantity violates a mathematical invariant."""


def _norm_pdf(x):
    with np.errstate(over="ignore"):
        return np.exp(-0.5 * np.square(x)) / _SQRT2PI


def _positive(name, value):
    arr = np.asarray(value, dtype=float)
    if np.any(~(arr > 0)):
        raise ParameterDomainError(f"{name} must be strictly positive, got {value!r}")
    return arr


# ---------------------------------------------------------------------------
# correlation, disk overlap
# ---------------------------------------------------------------------------

def exp_correlation(h: ArrayLike, phi: float) -> ArrayLike:
    """Exponential correlation ``exp(-h/phi)``."""
    _positive("phi", phi)
    return np.exp(-np.asarray(h, dtype=float) / phi)


def alpha_disk(h: ArrayLike, r: float) -> ArrayLike:
    """Overlap fraction ``(1 - h/2r)`` on ``[0, 2r]``, zero beyond."""
    _positive("r", r)
    h = np.asarray(h, dtype=float)
    return np.where(h <= 2.0 * r, 1.0 - h / (2.0 * r), 0.0)


# ---------------------------------------------------------------------------
# exponent measures
# ---------------------------------------------------------------------------

def smith_V(z1, z2, gamma):
    """Exponent measure of the isotropic Smith (Gaussian storm) model.

    ``gamma`` is the Mahalanobis lag; ``gamma == 0`` is complete dependence.
    """
    return smith_partials(z1, z2, gamma)[0]


def smith_partials(z1, z2, gamma):
    """Return ``(V, V1, V2, V12)`` for the Smith model.

    Uses the identity ``phi(w1)/z1 == phi(w2)/z2`` which collapses the first
    derivatives to ``V1 = -Phi(w1)/z1**2``.
    """
    z1, z2, gamma = np.broadcast_arrays(
        np.asarray(z1, dtype=float), np.asarray(z2, dtype=float),
        np.asarray(gamma, dtype=float))
    if np.any(z1 <= 0) or np.any(z2 <= 0):
        raise ParameterDomainError("Fréchet arguments must be positive")
    dep = gamma <= 0
    g = np.where(dep, 1.0, gamma)
    lr = np.log(z2 / z1)
    with np.errstate(over="ignore"):
        w1 = g / 2.0 + lr / g
    w2 = g - w1
    P1, P2 = ndtr(w1), ndtr(w2)
    V = P1 / z1 + P2 / z2
    V1 = -P1 / z1**2
    V2 = -P2 / z2**2
    with np.errstate(over="ignore"):
        V12 = -_norm_pdf(w1) / (z1**2 * z2 * g)
    if np.any(dep):
        # complete dependence: V = 1/min(z1, z2), no density
        zmin = np.minimum(z1, z2)
        V = np.where(dep, 1.0 / zmin, V)
        V1 = np.where(dep, np.where(z1 <= z2, -1.0 / z1**2, 0.0), V1)
        V2 = np.where(dep, np.where(z2 < z1, -1.0 / z2**2, 0.0), V2)
        V12 = np.where(dep, 0.0, V12)
    return V, V1, V2, V12


def teg_V(z1, z2, rho, alpha):
    """Exponent measure of the truncated extremal Gaussian model."""
    return teg_partials(z1, z2, rho, alpha)[0]


def teg_partials(z1, z2, rho, alpha):
    """Return ``(V, V1, V2, V12)`` for the truncated extremal Gaussian model.

    Written as ``V = (1 - alpha/2)(1/z1 + 1/z2) + (alpha/2) D / (z1 z2)``
    with ``D = sqrt(z1**2 - 2 rho z1 z2 + z2**2)``, which is algebraically the
    same as the radical form and has closed-form derivatives::

        V1  = -(1 - alpha/2)/z1**2 + (alpha/2)(rho z1 - z2)/(D z1**2)
        V12 = -(alpha/2)(1 - rho**2)/D**3
    """
    z1, z2, rho, alpha = np.broadcast_arrays(
        np.asarray(z1, dtype=float), np.asarray(z2, dtype=float),
        np.asarray(rho, dtype=float), np.asarray(alpha, dtype=float))
    if np.any(z1 <= 0) or np.any(z2 <= 0):
        raise ParameterDomainError("Fréchet arguments must be positive")
    D2 = z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2
    if np.any(D2 < -1e-12 * (z1 * z1 + z2 * z2)):
        raise ConsistencyError("negative radicand in TEG exponent measure")
    D = np.sqrt(np.maximum(D2, 0.0))
    half = alpha / 2.0
    V = (1.0 - half) * (1.0 / z1 + 1.0 / z2) + half * D / (z1 * z2)
    with np.errstate(divide="ignore", invalid="ignore"):
        V1 = -(1.0 - half) / z1**2 + half * (rho * z1 - z2) / (D * z1**2)
        V2 = -(1.0 - half) / z2**2 + half * (rho * z2 - z1) / (D * z2**2)
        V12 = -half * (1.0 - rho * rho) / D**3
    if np.any(D == 0):
        # rho == 1 and z1 == z2 sits on the kink; take the mean of both one-sided limits
        flat = D == 0
        V1 = np.where(flat, -(1.0 - half) / z1**2, V1)
        V2 = np.where(flat, -(1.0 - half) / z2**2, V2)
        V12 = np.where(flat, 0.0, V12)
    # alpha == 0 gives independence whatever D
    V1 = np.where(alpha == 0, -1.0 / z1**2, V1)
    V2 = np.where(alpha == 0, -1.0 / z2**2, V2)
    V12 = np.where(alpha == 0, 0.0, V12)
    return V, V1, V2, V12


# ---------------------------------------------------------------------------
# laws (dependence structure at given lags)
# ---------------------------------------------------------------------------

def smith_log_density(z1, z2, gamma):
    """Log of the Smith bivariate density, stable when it underflows.

    The density is ``G * (Phi(w1) Phi(w2) / (z1 z2)**2 + phi(w1) / (gamma z1**2 z2))``,
    a sum of positive terms, so it is evaluated with ``logaddexp``.
    """
    z1, z2, gamma = np.broadcast_arrays(
        np.asarray(z1, dtype=float), np.asarray(z2, dtype=float),
        np.asarray(gamma, dtype=float))
    if np.any(z1 <= 0) or np.any(z2 <= 0):
        raise ParameterDomainError("Fréchet arguments must be positive")
    dep = gamma <= 0
    g = np.where(dep, 1.0, gamma)
    l1, l2 = np.log(z1), np.log(z2)
    with np.errstate(over="ignore"):
        w1 = g / 2.0 + (l2 - l1) / g
    w2 = g - w1
    V = ndtr(w1) / z1 + ndtr(w2) / z2
    t1 = log_ndtr(w1) + log_ndtr(w2) - 2.0 * (l1 + l2)
    t2 = -0.5 * w1**2 - _LOG_SQRT2PI - np.log(g) - 2.0 * l1 - l2
    return np.where(dep, np.nan, -V + np.logaddexp(t1, t2))


class SmithLaw(NamedTuple):
    """Smith model at lag(s) with Mahalanobis distance ``gamma``."""

    gamma: np.ndarray

    def partials(self, z1, z2):
        return smith_partials(z1, z2, self.gamma)

    def V(self, z1, z2):
        return smith_V(z1, z2, self.gamma)

    def theta(self):
        return 2.0 * ndtr(np.asarray(self.gamma) / 2.0)

    def take(self, idx):
        return SmithLaw(np.asarray(self.gamma)[idx])


class TEGLaw(NamedTuple):
    """Truncated extremal Gaussian model at lag(s)."""

    rho: np.ndarray
    alpha: np.ndarray

    def partials(self, z1, z2):
        return teg_partials(z1, z2, self.rho, self.alpha)

    def V(self, z1, z2):
        return teg_V(z1, z2, self.rho, self.alpha)

    def theta(self):
        rho, alpha = np.asarray(self.rho), np.asarray(self.alpha)
        return 2.0 - alpha * (1.0 - np.sqrt(np.maximum(1.0 - rho, 0.0) / 2.0))

    def take(self, idx):
        return TEGLaw(np.asarray(self.rho)[idx], np.asarray(self.alpha)[idx])


Law = Union[SmithLaw, TEGLaw]


def smith_law(h, phi: float) -> SmithLaw:
    """Isotropic Smith law with ``Sigma = phi**2 I`` so that ``gamma = h/phi``."""
    _positive("phi", phi)
    return SmithLaw(np.asarray(h, dtype=float) / phi)


def teg_law(h, phi: float, r: float) -> TEGLaw:
    """TEG law with exponential correlation and disks of radius ``r``."""
    return TEGLaw(exp_correlation(h, phi), alpha_disk(h, r))


def theta(law: Law):
    """Pairwise extremal coefficient of a max-stable law."""
    return law.theta()


def chi_from_theta(theta_value):
    """Tail-dependence coefficient ``chi = 2 - theta``."""
    return 2.0 - np.asarray(theta_value, dtype=float)


@dataclass(frozen=True)
class DependenceSummary:
    theta: float
    chi: float
    chibar: float


def summarize(law: Law) -> DependenceSummary:
    """Dependence summary of a max-stable pair (asymptotically dependent: chibar = 1)."""
    th = float(np.asarray(law.theta()))
    chi = float(chi_from_theta(th))
    return DependenceSummary(theta=th, chi=chi, chibar=1.0 if chi > 0 else 0.0)


# ---------------------------------------------------------------------------
# max-stable bivariate law
# ---------------------------------------------------------------------------

def ms_bivariate_cdf(z1, z2, law: Law):
    return np.exp(-law.V(z1, z2))


def ms_pieces(z1, z2, law: Law):
    """``(G, dG/dz1, dG/dz2, g)`` of a max-stable pair."""
    V, V1, V2, V12 = law.partials(z1, z2)
    G = np.exp(-V)
    return G, -V1 * G, -V2 * G, (V1 * V2 - V12) * G


def ms_bivariate_density(z1, z2, law: Law):
    g = ms_pieces(z1, z2, law)[3]
    if np.any(g < -1e-10):
        raise ConsistencyError("negative max-stable density")
    return np.maximum(g, 0.0)


# ---------------------------------------------------------------------------
# inverted max-stable law
# ---------------------------------------------------------------------------

def _log1mexp(x):
    """``log(1 - exp(-x))`` for ``x > 0``."""
    x = np.asarray(x, dtype=float)
    small = x < np.log(2.0)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(small, np.log(-np.expm1(-np.where(small, x, 1.0))),
                        np.log1p(-np.exp(-np.where(small, 1.0, x))))


def omega(z):
    """Inversion map ``-1 / log(1 - exp(-1/z))``.

    A decreasing involution of ``(0, inf)`` with fixed point ``1/log 2``;
    ``omega(z) ~ exp(1/z)`` as ``z -> 0`` and ``omega(z) ~ 1/log z`` as
    ``z -> inf``.
    """
    z = _positive("z", z)
    with np.errstate(divide="ignore"):
        return -1.0 / _log1mexp(1.0 / z)


def omega_prime(z, w=None):
    """Derivative of :func:`omega`: ``-omega(z)**2 / (z**2 expm1(1/z))``."""
    z = np.asarray(z, dtype=float)
    if w is None:
        w = omega(z)
    with np.errstate(over="ignore", invalid="ignore"):
        return -(w * w) / (z * z * np.expm1(1.0 / z))


def ims_bivariate_cdf(z1, z2, law: Law):
    """Joint CDF of the inverted max-stable pair, clamped to ``[0, 1]``."""
    G = ims_pieces(z1, z2, law)[0]
    return np.clip(G, 0.0, 1.0)


def ims_pieces(z1, z2, law: Law):
    """``(G, dG/dz1, dG/dz2, g)`` for the inverted max-stable pair."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    w1, w2 = omega(z1), omega(z2)
    V, V1, V2, V12 = law.partials(w1, w2)
    e = np.exp(-V)
    f1, f2 = np.exp(-1.0 / z1), np.exp(-1.0 / z2)
    G = f1 + f2 + np.expm1(-V)
    d1, d2 = omega_prime(z1, w1), omega_prime(z2, w2)
    # differences of nearly equal terms in the joint upper tail: clamp rounding below zero
    G1 = np.maximum(f1 / z1**2 - V1 * e * d1, 0.0)
    G2 = np.maximum(f2 / z2**2 - V2 * e * d2, 0.0)
    g = (V1 * V2 - V12) * e * d1 * d2
    return G, G1, G2, g


def ims_bivariate_density(z1, z2, law: Law):
    g = ims_pieces(z1, z2, law)[3]
    if np.any(g < -1e-10):
        raise ConsistencyError("negative inverted max-stable density")
    return np.maximum(g, 0.0)


# ---------------------------------------------------------------------------
# max-mixture law
# ---------------------------------------------------------------------------

def mm_pieces(z1, z2, a: float, law_x: Optional[Law], law_y: Optional[Law]):
    """``(G, dG/dz1, dG/dz2, g)`` of ``max(a X, (1-a) Y)``.

    ``X`` is max-stable with law ``law_x``; ``Y`` is the inverted process
    built from ``law_y``. For ``a`` within ``A_EPS`` of a boundary the
    corresponding pure component is returned.
    """
    if not 0.0 <= a <= 1.0:
        raise ParameterDomainError(f"mixing coefficient must lie in [0, 1], got {a}")
    if a > 1.0 - A_EPS:
        return ms_pieces(z1, z2, law_x)
    if a < A_EPS:
        return ims_pieces(z1, z2, law_y)
    b = 1.0 - a
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    Gx, Gx1, Gx2, gx = ms_pieces(z1 / a, z2 / a, law_x)
    Gy, Gy1, Gy2, gy = ims_pieces(z1 / b, z2 / b, law_y)
    Gx1, Gx2, gx = Gx1 / a, Gx2 / a, gx / (a * a)
    Gy1, Gy2, gy = Gy1 / b, Gy2 / b, gy / (b * b)
    G = Gx * Gy
    G1 = Gx1 * Gy + Gx * Gy1
    G2 = Gx2 * Gy + Gx * Gy2
    g = gx * Gy + Gx1 * Gy2 + Gx2 * Gy1 + Gx * gy
    return G, G1, G2, g


def mm_bivariate_cdf(z1, z2, a: float, law_x: Optional[Law], law_y: Optional[Law]):
    return mm_pieces(z1, z2, a, law_x, law_y)[0]


def mm_partials_and_density(z1, z2, a, law_x, law_y):
    """Return ``(dG/dz1, dG/dz2, g)`` for the max-mixture pair."""
    _, G1, G2, g = mm_pieces(z1, z2, a, law_x, law_y)
    return G1, G2, g


# ---------------------------------------------------------------------------
# model menu
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureParams:
    """Dependence parameters; ``None`` marks a field unused by the model."""

    a: Optional[float] = None
    phi_x: Optional[float] = None
    r_x: Optional[float] = None
    phi_y: Optional[float] = None
    r_y: Optional[float] = None

    def __post_init__(self):
        if self.a is not None and not 0.0 <= self.a <= 1.0:
            raise ParameterDomainError(f"a must lie in [0, 1], got {self.a}")
        for f in ("phi_x", "r_x", "phi_y", "r_y"):
            v = getattr(self, f)
            if v is not None and not v > 0:
                raise ParameterDomainError(f"{f} must be strictly positive, got {v}")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) is not None}

    def with_(self, **kw) -> "MixtureParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class ModelSpec:
    """One entry of the model menu.

    ``x_kind`` is the max-stable component ("teg" or "smith"), ``y_kind`` the
    max-stable process whose inversion gives the AI component. Pure models
    leave the other kind as ``None``.
    """

    name: str
    x_kind: Optional[str]
    y_kind: Optional[str]
    description: str = ""

    @property
    def is_mixture(self) -> bool:
        return self.x_kind is not None and self.y_kind is not None

    @property
    def param_names(self) -> tuple:
        names = []
        if self.is_mixture:
            names.append("a")
        if self.x_kind is not None:
            names.append("phi_x")
            if self.x_kind == "teg":
                names.append("r_x")
        if self.y_kind is not None:
            names.append("phi_y")
            if self.y_kind == "teg":
                names.append("r_y")
        return tuple(names)

    def mixing(self, params: MixtureParams) -> float:
        if self.is_mixture:
            return float(params.a)
        return 1.0 if self.x_kind is not None else 0.0

    def check(self, params: MixtureParams) -> None:
        have = set(params.as_dict())
        need = set(self.param_names)
        if need - have:
            raise ParameterDomainError(f"{self.name} needs parameters {sorted(need - have)}")
        if have - need:
            raise ParameterDomainError(f"{self.name} does not use parameters {sorted(have - need)}")

    def laws(self, params: MixtureParams, h):
        """Return ``(a, law_x, law_y)`` at lags ``h``."""
        law_x = law_y = None
        if self.x_kind == "teg":
            law_x = teg_law(h, params.phi_x, params.r_x)
        elif self.x_kind == "smith":
            law_x = smith_law(h, params.phi_x)
        if self.y_kind == "teg":
            law_y = teg_law(h, params.phi_y, params.r_y)
        elif self.y_kind == "smith":
            law_y = smith_law(h, params.phi_y)
        return self.mixing(params), law_x, law_y

    def pieces(self, z1, z2, params: MixtureParams, h):
        a, law_x, law_y = self.laws(params, h)
        return mm_pieces(z1, z2, a, law_x, law_y)

    def log_density(self, z1, z2, params: MixtureParams, h, g=None):
        """Log bivariate density; ``g`` is the density if already computed."""
        if self.x_kind == "smith" and self.y_kind is None:
            return smith_log_density(z1, z2, smith_law(h, params.phi_x).gamma)
        if g is None:
            g = self.pieces(z1, z2, params, h)[3]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(g > 0, np.log(np.where(g > 0, g, 1.0)), np.nan)


MODELS = {
    "M1": ModelSpec("M1", "teg", "teg", "max-mixture of TEG and inverted TEG"),
    "M2": ModelSpec("M2", "teg", "smith", "max-mixture of TEG and inverted Smith"),
    "M3": ModelSpec("M3", "teg", None, "max-stable TEG"),
    "M4": ModelSpec("M4", "smith", None, "max-stable Smith"),
    "M5": ModelSpec("M5", None, "smith", "inverted Smith"),
    # pure inverted TEG, used to generate asymptotically independent data
    "ITEG": ModelSpec("ITEG", None, "teg", "inverted TEG"),
}


def get_model(name: Union[str, ModelSpec]) -> ModelSpec:
    if isinstance(name, ModelSpec):
        return name
    try:
        return MODELS[name.upper()]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
