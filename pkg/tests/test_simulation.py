import math

import numpy as np
import pytest
from scipy.stats import kstest, norm

from maxmix.diagnostics import empirical_chi
from maxmix.models import (MixtureParams, ModelSpec, ParameterDomainError, SmithLaw, get_model,
                           mm_bivariate_cdf, omega, smith_law, teg_law)
from maxmix.simulation import (DataMatrix, SiteSet, child_seed, haversine_km, invert_ms,
                               read_data_matrix, read_sites, sample_sites_uniform,
                               simulate_gaussian_copula_ai, simulate_gaussian_field, simulate_mm,
                               simulate_model, simulate_smith, simulate_teg, write_data_matrix,
                               write_sites)


def frechet_ks(x):
    return kstest(x, lambda z: np.exp(-1.0 / z)).statistic


def theta_hat(x, y):
    """1/max(Z1, Z2) is exponential with rate theta for a max-stable pair."""
    return 1.0 / np.mean(1.0 / np.maximum(x, y))


@pytest.fixture(scope="module")
def transect():
    """Sites on a horizontal line at lags 0.05, 0.15, 0.3, 0.6 from the origin."""
    xs = np.array([0.0, 0.05, 0.15, 0.3, 0.6])
    return SiteSet(np.column_stack([xs, np.zeros_like(xs)]))


@pytest.fixture(scope="module")
def teg_sample(transect):
    return simulate_teg(transect, 0.10, 0.25, 3000, child_seed(3, 1))


@pytest.fixture(scope="module")
def smith_sample(transect):
    return simulate_smith(transect, 0.13, 3000, child_seed(3, 2))


class TestSites:
    def test_uniform_sites(self):
        s = sample_sites_uniform(50, 2.0, 5)
        assert s.coords.shape == (50, 2)
        assert np.all((s.coords >= 0) & (s.coords <= 2))
        np.testing.assert_array_equal(s.coords, sample_sites_uniform(50, 2.0, 5).coords)
        assert np.all(np.abs(s.coords.mean(axis=0) - 1.0) < 4 * 2 / math.sqrt(12 * 50))

    def test_distance_matrix(self, rng):
        s = sample_sites_uniform(12, 1.0, 1)
        D = s.distance_matrix
        np.testing.assert_array_equal(D, D.T)
        assert np.all(np.diag(D) == 0)
        for _ in range(50):
            i, j, k = rng.choice(12, 3, replace=False)
            assert D[i, k] <= D[i, j] + D[j, k] + 1e-12

    def test_haversine_degree(self):
        assert haversine_km(5.0, 45.0, 5.0, 46.0) == pytest.approx(111.19, abs=1.0)
        s = SiteSet(np.array([[5.0, 45.0], [5.0, 46.0]]), crs="geographic")
        assert s.distance_matrix[0, 1] == pytest.approx(111.19, abs=1.0)

    def test_planar_projection_keeps_distances(self):
        s = SiteSet(np.array([[5.0, 45.0], [5.3, 45.2], [4.9, 45.4]]), crs="geographic")
        np.testing.assert_allclose(s.to_planar().distance_matrix, s.distance_matrix, rtol=2e-3)

    def test_validation(self):
        with pytest.raises(ValueError):
            SiteSet(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            sample_sites_uniform(1)


class TestGaussianField:
    def test_correlation_and_variance(self):
        h = 0.75 * math.log(2)  # rho = 0.5
        s = SiteSet(np.array([[0.0, 0.0], [h, 0.0]]))
        n = 20000
        x = simulate_gaussian_field(s, 0.75, n, 4).values
        assert np.corrcoef(x.T)[0, 1] == pytest.approx(0.5, abs=3 / math.sqrt(n))
        assert np.var(x[:, 0]) == pytest.approx(1.0, abs=0.05)

    def test_empty(self, small_sites):
        assert simulate_gaussian_field(small_sites, 0.3, 0, 1).shape == (0, 6)

    def test_perfect_correlation_is_comonotone(self, small_sites):
        y = simulate_gaussian_copula_ai(small_sites, lambda d: np.ones_like(d), 200, 2).values
        order = np.argsort(y[:, 0])
        assert np.all(np.diff(y[order], axis=0) >= -1e-6)


class TestTEG:
    def test_margins(self, teg_sample):
        for k in range(teg_sample.shape[1]):
            assert frechet_ks(teg_sample.values[:, k]) < 0.03

    def test_extremal_coefficient(self, teg_sample, transect):
        law = teg_law(transect.distance_matrix[0], 0.10, 0.25)
        for k in (1, 2, 3):
            th = theta_hat(teg_sample.values[:, 0], teg_sample.values[:, k])
            assert th == pytest.approx(float(law.theta()[k]), abs=0.1)

    def test_independent_beyond_diameter(self, teg_sample):
        # lag 0.6 > 2r
        assert empirical_chi(teg_sample.values[:, 0], teg_sample.values[:, 4], 0.95) < 0.05

    def test_reproducible(self, transect):
        a = simulate_teg(transect, 0.1, 0.25, 50, 9).values
        np.testing.assert_array_equal(a, simulate_teg(transect, 0.1, 0.25, 50, 9).values)

    def test_domain(self, transect):
        with pytest.raises(ParameterDomainError):
            simulate_teg(transect, 0.1, 0.0, 10, 1)
        with pytest.raises(ParameterDomainError):
            simulate_teg(transect, -0.1, 0.2, 10, 1)


class TestSmith:
    def test_margins(self, smith_sample):
        for k in range(smith_sample.shape[1]):
            assert frechet_ks(smith_sample.values[:, k]) < 0.03

    def test_extremal_coefficient(self, smith_sample, transect):
        h = transect.distance_matrix[0]
        for k in (1, 2, 3):
            expected = 2 * norm.cdf(h[k] / 0.13 / 2)
            assert theta_hat(smith_sample.values[:, 0], smith_sample.values[:, k]) == pytest.approx(expected, abs=0.1)

    def test_cdf_against_closed_form(self, smith_sample, transect):
        # P(Z1 <= 1, Z2 <= 2) at lag 0.15
        x, y = smith_sample.values[:, 0], smith_sample.values[:, 2]
        p = float(np.exp(-smith_law(0.15, 0.13).V(1.0, 2.0)))
        emp = np.mean((x <= 1.0) & (y <= 2.0))
        assert emp == pytest.approx(p, abs=3 * math.sqrt(p * (1 - p) / len(x)))


class TestInversion:
    def test_fixed_point_and_involution(self):
        z0 = 1 / math.log(2)
        assert invert_ms(np.array([z0]))[0] == pytest.approx(z0)
        z = np.geomspace(0.05, 1e4, 100)
        np.testing.assert_allclose(invert_ms(invert_ms(z)), z, rtol=1e-8)

    def test_margins(self, teg_sample):
        inv = invert_ms(teg_sample)
        assert isinstance(inv, DataMatrix)
        assert frechet_ks(inv.values[:, 0]) < 0.03


class TestGaussianCopula:
    def test_margins_and_asymptotic_independence(self):
        s = SiteSet(np.array([[0.0, 0.0], [0.2, 0.0]]))
        y = simulate_gaussian_copula_ai(s, 0.5, 20000, 8).values
        assert frechet_ks(y[:, 0]) < 0.02
        assert empirical_chi(y[:, 0], y[:, 1], 0.99) < empirical_chi(y[:, 0], y[:, 1], 0.9)


class TestMaxMixture:
    params = MixtureParams(a=0.5, phi_x=0.10, r_x=0.25, phi_y=0.75, r_y=1.2)

    def test_boundaries_equal_components(self, transect):
        p1 = self.params.with_(a=1.0)
        x = simulate_mm(transect, p1, "M1", 30, 4).values
        pure = simulate_model("M3", MixtureParams(phi_x=0.1, r_x=0.25), transect, 30, 4).values
        np.testing.assert_array_equal(x, pure)
        p0 = self.params.with_(a=0.0)
        y = simulate_mm(transect, p0, "M1", 30, 4).values
        pure = simulate_model("ITEG", MixtureParams(phi_y=0.75, r_y=1.2), transect, 30, 4).values
        np.testing.assert_array_equal(y, pure)

    def test_rejects_pure_model(self, transect):
        with pytest.raises(ValueError, match="not a max-mixture"):
            simulate_mm(transect, MixtureParams(phi_x=0.1, r_x=0.2), "M3", 5, 1)

    def test_joint_cdf_against_closed_form(self):
        # Smith / inverted-Smith mixture: no disk geometry involved
        spec = ModelSpec("SS", "smith", "smith")
        p = MixtureParams(a=0.5, phi_x=0.13, phi_y=0.4)
        s = SiteSet(np.array([[0.0, 0.0], [0.2, 0.0]]))
        n = 4000
        z = simulate_model(spec, p, s, n, child_seed(5, 0)).values
        a, lx, ly = spec.laws(p, 0.2)
        for q1, q2 in [(1.0, 1.0), (0.7, 2.5), (3.0, 3.0)]:
            G = float(mm_bivariate_cdf(q1, q2, a, lx, ly))
            emp = np.mean((z[:, 0] <= q1) & (z[:, 1] <= q2))
            assert emp == pytest.approx(G, abs=2 * math.sqrt(G * (1 - G) / n))

    def test_chi_matches_model(self, transect):
        z = simulate_mm(transect, self.params, "M1", 4000, child_seed(5, 1)).values
        spec = get_model("M1")
        u = 0.95
        zu = -1 / math.log(u)
        for k in (1, 2):
            h = transect.distance_matrix[0, k]
            G = float(spec.pieces(zu, zu, self.params, h)[0])
            chi_model = (1 - 2 * u + G) / (1 - u)
            assert empirical_chi(z[:, 0], z[:, k], u) == pytest.approx(chi_model, abs=0.1)


class TestIO:
    def test_round_trip(self, tmp_path, small_sites):
        d = simulate_mm(small_sites, MixtureParams(0.5, 0.1, 0.25, 0.75, 1.2), "M1", 20, 3)
        d.meta = {"model": "M1", "seed": 3}
        write_data_matrix(tmp_path / "d.csv", d)
        write_sites(tmp_path / "s.csv", small_sites)
        back = read_data_matrix(tmp_path / "d.csv")
        np.testing.assert_array_equal(back.values, d.values)
        assert back.scale == "frechet"
        assert back.site_ids == d.site_ids
        s = read_sites(tmp_path / "s.csv")
        np.testing.assert_array_equal(s.coords, small_sites.coords)

    def test_frechet_must_be_positive(self):
        with pytest.raises(ValueError):
            DataMatrix(np.array([[1.0, -2.0]]), "frechet")
