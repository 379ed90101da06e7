"""
Acceptance suite. Each criterion is marked ``acceptance(n, title)``; the
terminal summary prints one PASS/FAIL line per criterion.
"""

import csv
import filecmp
import math

import numpy as np
import pytest
from scipy.stats import kstest, norm, spearmanr

from maxmix.cli import main
from maxmix.hypothesis_tests import lr_pvalue, normal_two_sided_p, two_sample_z, z_test
from maxmix.inference import PairwiseLikelihood
from maxmix.models import (MixtureParams, ModelSpec, SmithLaw, TEGLaw, ims_pieces, mm_pieces, ms_pieces,
                           smith_law, teg_law)
from maxmix.simulation import SiteSet, child_seed, sample_sites_uniform, simulate_smith, simulate_teg
from maxmix.study import StudyConfig, read_rows, replicate_path, run_power_study
from maxmix.uncertainty import clic

from conftest import mixed_diff

ALPHA = 0.05


def acceptance(number, title):
    return pytest.mark.acceptance(number, title)


# ---------------------------------------------------------------------------
# 1. p-value reconstruction
# ---------------------------------------------------------------------------

@acceptance(1, "p-value reconstruction")
def test_p_values(record_property):
    p_lr = lr_pvalue(7.72, 14.07)
    p_z = z_test(0.73, 0.0, 1.0).p_value
    p_c = two_sample_z(0.17, 1.0, 0.0, 0.0).p_value
    record_property("detail", f"p_LR={p_lr:.4f} p_Z={p_z:.4f} p_ZC={p_c:.4f}")
    assert 0.455 <= p_lr <= 0.462
    assert 0.46 <= p_z <= 0.47
    assert 0.86 <= p_c <= 0.87
    assert normal_two_sided_p(0.17) == p_c


# ---------------------------------------------------------------------------
# 2. density / CDF consistency
# ---------------------------------------------------------------------------

def _random_law(rng):
    if rng.random() < 0.5:
        return SmithLaw(np.float64(rng.uniform(0.1, 3.0)))
    return TEGLaw(np.float64(rng.uniform(0.0, 0.95)), np.float64(rng.uniform(0.05, 1.0)))


def _probe(kind, rng):
    if kind == "ms":
        law = _random_law(rng)
        return lambda x, y: ms_pieces(x, y, law)
    if kind == "ims":
        law = _random_law(rng)
        return lambda x, y: ims_pieces(x, y, law)
    a = rng.uniform(0.05, 0.95)
    lx, ly = _random_law(rng), _random_law(rng)
    return lambda x, y: mm_pieces(x, y, a, lx, ly)


def _richardson(D, h):
    """Fourth-order extrapolation of a second-order difference quotient ``D``."""
    return (4.0 * D(h / 2) - D(h)) / 3.0


# a finite-difference reference resolves a quantity only well above its rounding floor
RESOLUTION = 1e4 * np.finfo(float).eps


@acceptance(2, "density/CDF consistency")
def test_density_cdf_consistency(record_property):
    rng = np.random.default_rng(child_seed(2, 0))
    worst = {"density": 0.0, "partial": 0.0}
    n_valid = n_unresolved = 0
    kinds = ("ms", "ims", "mm")
    while n_valid < 1000:
        pieces = _probe(kinds[n_valid % 3], rng)
        z1, z2 = np.exp(rng.uniform(math.log(0.3), math.log(20.0), 2))
        G = lambda x, y: float(pieces(x, y)[0])
        G0, G1, G2, g = (float(v) for v in pieces(z1, z2))
        h = 2e-3
        fd_g = _richardson(lambda t: mixed_diff(G, z1, z2, t * z1, t * z2), h)
        fd_1 = _richardson(lambda t: (G(z1 * (1 + t), z2) - G(z1 * (1 - t), z2)) / (2 * t * z1), h)
        fd_2 = _richardson(lambda t: (G(z1, z2 * (1 + t)) - G(z1, z2 * (1 - t))) / (2 * t * z2), h)
        floor = RESOLUTION * G0 / (h * h / 4)
        if min(g * z1 * z2, G1 * z1 * h, G2 * z2 * h) < floor:
            n_unresolved += 1
            continue
        worst["density"] = max(worst["density"], abs(fd_g - g) / g)
        worst["partial"] = max(worst["partial"], abs(fd_1 - G1) / G1, abs(fd_2 - G2) / G2)
        n_valid += 1
    record_property("detail", f"{n_valid} probes ({n_unresolved} below FD resolution skipped), max rel "
                              f"err density {worst['density']:.2e}, partials {worst['partial']:.2e}")
    assert worst["density"] < 1e-4
    assert worst["partial"] < 1e-4
    assert n_unresolved < 0.1 * n_valid


# ---------------------------------------------------------------------------
# 3. simulation fidelity
# ---------------------------------------------------------------------------

LAGS = (0.05, 0.15, 0.3)


@pytest.fixture(scope="module")
def fidelity_sites():
    """16 uniform sites plus a transect giving three exact lags from its first site."""
    base = sample_sites_uniform(16, 1.0, child_seed(3, 0)).coords
    transect = np.array([[0.3 + h, 0.5] for h in (0.0,) + LAGS])
    return SiteSet(np.vstack([transect, base]))


@acceptance(3, "simulation fidelity")
@pytest.mark.parametrize("model", ["TEG", "Smith"])
def test_simulation_fidelity(model, fidelity_sites, record_property):
    n = 5000
    if model == "TEG":
        z = simulate_teg(fidelity_sites, 0.10, 0.25, n, child_seed(3, 1)).values
        law = teg_law(np.array(LAGS), 0.10, 0.25)
    else:
        z = simulate_smith(fidelity_sites, 0.13, n, child_seed(3, 2)).values
        law = smith_law(np.array(LAGS), 0.13)
    ks = [kstest(z[:, k], lambda v: np.exp(-1.0 / v)).statistic for k in range(z.shape[1])]
    theta_hat = [1.0 / np.mean(1.0 / np.maximum(z[:, 0], z[:, k])) for k in (1, 2, 3)]
    err = np.abs(np.array(theta_hat) - law.theta())
    record_property("detail", f"{model}: max KS {max(ks):.4f}, max |theta error| {err.max():.3f}")
    assert len(ks) == 20
    assert max(ks) < 0.02
    assert np.all(err < 0.1)


# ---------------------------------------------------------------------------
# 4 and 5. estimator recovery, level and power
# ---------------------------------------------------------------------------

POWER = StudyConfig(model="M1", a=0.5, phi_x=0.10, r_x=0.25, phi_y=0.75, r_y=1.2, K=25, N=500,
                    J=20, M=300, a0_grid=(0.1, 0.5), seed=1)


@pytest.fixture(scope="module")
def power_study(tmp_path_factory):
    out = tmp_path_factory.mktemp("power")
    rows = run_power_study(POWER, out)
    reps = [read_rows(replicate_path(out, j)) for j in range(POWER.J)]
    return rows, reps


@acceptance(4, "estimator recovery")
@pytest.mark.slow
def test_estimator_recovery(power_study, record_property):
    _, reps = power_study
    a_hat = np.array([float(r[0]["a_hat"]) for r in reps if r[0]["status"] == "ok"])
    median = float(np.median(a_hat))
    close = float(np.mean(np.abs(a_hat - 0.5) < 0.15))
    record_property("detail", f"{a_hat.size} replicates, median a_hat {median:.3f}, "
                              f"share within 0.15 {close:.2f}")
    assert a_hat.size == POWER.J
    assert 0.35 <= median <= 0.65
    assert close >= 0.8


@acceptance(5, "test level and power")
@pytest.mark.slow
def test_level_and_power(power_study, record_property):
    rows, _ = power_study
    rate = {r["a0"]: r for r in rows if r["alpha"] == ALPHA and r["statistic"] == "LR"}
    record_property("detail", f"LR rejection at a0=0.5: {rate[0.5]['rate']:.3f}, "
                              f"at a0=0.1: {rate[0.1]['rate']:.3f} over {rate[0.5]['n_replicates']} replicates")
    assert rate[0.5]["n_replicates"] >= 20 and rate[0.1]["n_replicates"] >= 20
    assert rate[0.5]["rate"] <= 0.15
    assert rate[0.1]["rate"] >= 0.8


# ---------------------------------------------------------------------------
# 6. boundary behaviour
# ---------------------------------------------------------------------------

BOUNDARY_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
BOUNDARY_CASES = {
    # pure max-stable data: acceptance should grow towards a0 = 1
    "MS": (StudyConfig(model="M3", fit_model="M1", phi_x=0.10, r_x=0.25, K=15, N=300, M=100, J=10,
                       side=1.0, a0_grid=BOUNDARY_GRID, seed=1), +1),
    # pure inverted max-stable data: acceptance should grow towards a0 = 0
    "IMS": (StudyConfig(model="ITEG", fit_model="M1", phi_y=0.75, r_y=1.2, K=15, N=300, M=100, J=10,
                        side=2.0, a0_grid=BOUNDARY_GRID, seed=1), -1),
}


@acceptance(6, "boundary behaviour")
@pytest.mark.slow
@pytest.mark.parametrize("case", list(BOUNDARY_CASES))
def test_boundary_trend(case, tmp_path, record_property):
    cfg, direction = BOUNDARY_CASES[case]
    run_power_study(cfg, tmp_path)
    a0, accept = [], []
    for j in range(cfg.J):
        for r in read_rows(replicate_path(tmp_path, j)):
            if r["status"] == "ok":
                a0.append(float(r["a0"]))
                accept.append(float(r["p_LR"]) >= ALPHA)
    a0, accept = np.array(a0), np.array(accept, dtype=float)
    by_bin = [accept[a0 == v].mean() for v in BOUNDARY_GRID]
    rho, p_two = spearmanr(a0, accept)
    p_one = p_two / 2 if np.sign(rho) == direction else 1 - p_two / 2
    record_property("detail", f"{case}: acceptance by a0 bin {np.round(by_bin, 2).tolist()}, "
                              f"Spearman {rho:.2f} (one-sided p {p_one:.3g})")
    assert p_one < 0.05
    ends = (by_bin[0], by_bin[-1]) if direction > 0 else (by_bin[-1], by_bin[0])
    assert ends[1] > ends[0]


# ---------------------------------------------------------------------------
# 7. oracle equivalence
# ---------------------------------------------------------------------------

def _omega(z):
    return -1.0 / math.log(1.0 - math.exp(-1.0 / z))


def _omega_prime(z):
    L = math.log(1.0 - math.exp(-1.0 / z))
    dL = -math.exp(-1.0 / z) / z**2 / (1.0 - math.exp(-1.0 / z))
    return dL / L**2


def _smith_terms(z1, z2, a):
    """V and its derivatives for the Smith model, differentiated without simplification."""
    P, d = norm.cdf, norm.pdf
    w = a / 2 + math.log(z2 / z1) / a
    v = a - w
    V = P(w) / z1 + P(v) / z2
    V1 = -P(w) / z1**2 - d(w) / (a * z1**2) + d(v) / (a * z1 * z2)
    V2 = -P(v) / z2**2 - d(v) / (a * z2**2) + d(w) / (a * z1 * z2)
    V12 = (-d(w) / (a * z1**2 * z2) + w * d(w) / (a**2 * z1**2 * z2)
           + v * d(v) / (a**2 * z1 * z2**2) - d(v) / (a * z1 * z2**2))
    return V, V1, V2, V12


def _ms(z1, z2, a):
    V, V1, V2, V12 = _smith_terms(z1, z2, a)
    G = math.exp(-V)
    return G, -V1 * G, -V2 * G, (V1 * V2 - V12) * G


def _ims(z1, z2, a):
    w1, w2 = _omega(z1), _omega(z2)
    d1, d2 = _omega_prime(z1), _omega_prime(z2)
    Gx, Gx1, Gx2, gx = _ms(w1, w2, a)
    G = math.exp(-1 / z1) + math.exp(-1 / z2) - 1 + Gx
    G1 = math.exp(-1 / z1) / z1**2 + Gx1 * d1
    G2 = math.exp(-1 / z2) / z2**2 + Gx2 * d2
    return G, G1, G2, gx * d1 * d2


def _mixture(z1, z2, a, gamma_x, gamma_y):
    b = 1 - a
    A, A1, A2, A12 = _ms(z1 / a, z2 / a, gamma_x)
    A1, A2, A12 = A1 / a, A2 / a, A12 / a**2
    B, B1, B2, B12 = _ims(z1 / b, z2 / b, gamma_y)
    B1, B2, B12 = B1 / b, B2 / b, B12 / b**2
    return A * B, A12 * B + A1 * B2 + A2 * B1 + A * B12


def brute_force(values, coords, u, a, phi_x, phi_y):
    total = 0.0
    for row in values:
        for i in range(len(coords)):
            for j in range(i + 1, len(coords)):
                h = math.dist(coords[i], coords[j])
                if row[i] <= u[i] and row[j] <= u[j]:
                    total += math.log(_mixture(u[i], u[j], a, h / phi_x, h / phi_y)[0])
                else:
                    total += math.log(_mixture(row[i], row[j], a, h / phi_x, h / phi_y)[1])
    return total


@acceptance(7, "oracle equivalence")
def test_brute_force_oracle(record_property):
    sites = SiteSet(np.array([[0.0, 0.0], [0.1, 0.0], [0.1, 0.25]]))
    values = np.array([[0.5, 3.1, 0.8], [2.4, 2.2, 5.0]])
    u = np.array([1.1, 2.3, 1.7])
    spec = ModelSpec("SS", "smith", "smith")
    p = MixtureParams(a=0.4, phi_x=0.13, phi_y=0.3)
    ours = PairwiseLikelihood(values, sites, spec, thresholds=u).loglik(p)
    oracle = brute_force(values, sites.coords, u, 0.4, 0.13, 0.3)
    record_property("detail", f"|difference| {abs(ours - oracle):.1e}")
    assert ours == pytest.approx(oracle, abs=1e-10)


@acceptance(7, "oracle equivalence")
def test_clic_identity():
    H = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])
    logpl = -1234.5
    assert clic(logpl, H, H) == pytest.approx(-2 * logpl + 2 * 3, rel=0, abs=1e-12)
    assert clic(logpl, np.eye(3), np.eye(3)) == -2 * logpl + 2 * 3


# ---------------------------------------------------------------------------
# 8. reproducibility
# ---------------------------------------------------------------------------

def _cli(*argv):
    assert main([str(a) for a in argv]) == 0


def _same_tree(a, b):
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert names == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for name in names:
        assert filecmp.cmp(a / name, b / name, shallow=False), name
    return len(names)


@acceptance(8, "reproducibility")
@pytest.mark.filterwarnings("ignore:sensitivity matrix is not positive definite")
def test_commands_byte_identical(tmp_path, record_property):
    cfg = tmp_path / "power.cfg"
    cfg.write_text("K = 6\nN = 80\nM = 50\nJ = 3\na0_grid = 0.2,0.5\n")
    n_files = 0
    for run, workers in (("r1", 1), ("r2", 2)):
        out = tmp_path / run
        sim = out / "sim"
        _cli("simulate", "--out", sim, "--seed", 11, "--K", 7, "--N", 100, "--side", 1,
             "--workers", workers)
        _cli("fit", "--out", out / "fit", "--data", sim / "data.csv", "--sites", sim / "sites.csv",
             "--model", "M3", "--M", 60, "--seed", 11, "--workers", workers)
        _cli("test", "--out", out / "test", "--data", sim / "data.csv", "--sites", sim / "sites.csv",
             "--model", "M1", "--M", 60, "--a0", "0.2,0.8", "--seed", 11, "--workers", workers)
        _cli("power", "--out", out / "power", "--config", cfg, "--seed", 11, "--workers", workers)
    n_files = _same_tree(tmp_path / "r1", tmp_path / "r2")
    record_property("detail", f"{n_files} output files identical across --workers 1 and 2")
    power_rows = list(csv.DictReader(open(tmp_path / "r1" / "power" / "power.csv")))
    assert len(power_rows) == 2 * 3 * 2
