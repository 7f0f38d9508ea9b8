import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from sfsi.geometry import (ConfigurationError, GeometryError, bounding_functions, build_geometry, check_collar,
                           coverage, cutoff_chi, cutoff_profile, domain_indicator, extended_viscosity,
                           band_indicator, holder_bound, min_height, mollify_lateral, tube_indicator, tube_width)
from sfsi.params import SchemeParams
from sfsi.spectral import Grid

# C_α(s = 1.75, α = 0.5, dim = 2), cross-checked by two independent routes below
HOLDER_REFERENCE = 0.41842


def holder_by_optimisation(s, alpha_dom):
    """Series with an integral tail, maximised by a bounded scalar search in log r."""
    k = np.arange(1, 400_001, dtype=float)
    w = (1 + (2 * np.pi * k) ** 2) ** (-s)
    K = k[-1]
    tail = 2 * 4 * (2 * np.pi) ** (-2 * s) * K ** (1 - 2 * s) / (2 * s - 1)

    def neg(logr):
        r = np.exp(logr)
        m = np.minimum(2.0, 2 * np.pi * k * r)
        return -np.sqrt((2 * np.sum(m ** 2 * w) + tail) / r)

    res = optimize.minimize_scalar(neg, bounds=(np.log(1e-4), np.log(5.0)), method="bounded",
                                   options={"xatol": 1e-10})
    return -res.fun / alpha_dom


class TestHolderBound:
    def test_reference_value(self):
        assert holder_bound(1.75, 0.5, 2) == pytest.approx(HOLDER_REFERENCE, abs=5e-5)

    def test_independent_optimisation(self):
        assert holder_bound(1.75, 0.5, 2) == pytest.approx(holder_by_optimisation(1.75, 0.5), rel=1e-3)

    def test_dominates_brute_force_quotients(self):
        rng = np.random.default_rng(7)
        s, alpha = 1.75, 0.5
        n = 256
        x = (np.arange(n) + 0.5) / n
        kmax = 40
        k = np.arange(1, kmax + 1)
        weight = (1 + (2 * np.pi * k) ** 2) ** (s / 2)
        dist = np.abs(x[:, None] - x[None, :])
        dist = np.minimum(dist, 1 - dist)
        np.fill_diagonal(dist, np.inf)
        worst = 0.0
        for _ in range(1000):
            a, b = rng.normal(size=(2, kmax)) / weight ** rng.uniform(0.5, 1.5)
            c0 = rng.normal()
            norm = np.sqrt(c0 ** 2 + np.sum(weight ** 2 * (a ** 2 + b ** 2)))
            a, b, c0 = a / norm / alpha, b / norm / alpha, c0 / norm / alpha  # H^s norm exactly 1/α
            eta = c0 + np.sqrt(2) * (np.cos(2 * np.pi * np.outer(x, k)) @ a + np.sin(2 * np.pi * np.outer(x, k)) @ b)
            q = np.abs(eta[:, None] - eta[None, :]) / np.sqrt(dist)
            worst = max(worst, q.max())
        C = holder_bound(s, alpha, 2)
        assert worst <= C
        assert worst >= 0.2 * C  # the bound is not vacuous

    def test_constant_displacement_has_zero_quotient(self):
        eta = np.full(64, 0.3)
        assert np.ptp(eta) == 0.0 <= holder_bound(1.75, 0.5)

    def test_scaling_in_alpha(self):
        assert holder_bound(1.75, 1.0) == pytest.approx(holder_bound(1.75, 0.5) / 2, rel=1e-14)

    def test_rejects_s_out_of_range(self):
        with pytest.raises(ConfigurationError):
            holder_bound(2.0, 0.5)


class TestBoundingFunctions:
    grid = Grid(2, 512, 8, 4.0)

    def test_constant_field(self):
        a, b = bounding_functions(np.zeros(self.grid.n_lat), 0.01, 1.0, self.grid)
        assert np.allclose(a, 1.2, atol=1e-13) and np.allclose(b, 0.8, atol=1e-13)

    def test_vanishing_width_limit(self):
        eta = 0.1 * np.cos(2 * np.pi * self.grid.lateral_points[:, 0])
        errs = []
        for kappa in (1e-2, 1e-3, 1e-4):
            a, _ = bounding_functions(eta, kappa, 1.0, self.grid)
            errs.append(np.abs(a - 1 - eta).max())
        assert errs[0] > errs[1] > errs[2] and errs[2] < 0.03

    def test_strict_envelope_on_grid(self):
        eta = 0.1 * np.cos(2 * np.pi * self.grid.lateral_points[:, 0])
        a, b = bounding_functions(eta, 0.04, holder_bound(1.75, 0.5), self.grid)
        assert np.all(a > 1 + eta) and np.all(1 + eta > b)

    def test_rough_field_violation_raises(self):
        eta = np.where(np.arange(self.grid.n_lat) % 2 == 0, 1.0, -1.0)
        with pytest.raises(GeometryError):
            bounding_functions(eta, 0.04, 0.01, self.grid)

    def test_non_positive_kappa(self):
        with pytest.raises(ConfigurationError):
            bounding_functions(np.zeros(self.grid.n_lat), 0.0, 1.0, self.grid)

    @given(st.floats(-0.5, 0.5))
    def test_mollifier_preserves_constants(self, c):
        assert np.allclose(mollify_lateral(np.full(self.grid.n_lat, c), 0.05, self.grid), c, atol=1e-14)


class TestCutoff:
    grid = Grid(2, 16, 400, 4.0)

    def test_plateau_and_far_field(self):
        kappa = 0.1
        a = np.full(self.grid.n_lat, 1.5)
        chi = cutoff_chi(a, kappa, self.grid)
        z = self.grid.z
        assert np.all(chi[:, z <= 1.5 - kappa] == 1.0)
        assert np.all(np.isclose(chi[:, z >= 1.5 + np.sqrt(kappa)], kappa))

    def test_profile_values(self):
        assert cutoff_profile(1.0, 0.2) == pytest.approx(0.2)
        assert cutoff_profile(-0.1, 0.2) == 1.0
        assert 0.2 < cutoff_profile(0.5, 0.2) < 1.0

    def test_monotone_along_column(self):
        chi = cutoff_chi(np.full(self.grid.n_lat, 1.5), 0.1, self.grid)[0]
        assert np.all(np.diff(chi) <= 0)
        assert np.any((chi > 0.1) & (chi < 1.0))


class TestExtendedViscosity:
    @pytest.fixture(scope="class")
    @classmethod
    def geometry(cls):
        p = SchemeParams()
        grid = p.grid()
        eta = 0.05 * np.cos(2 * np.pi * grid.lateral_points[:, 0])
        return p, build_geometry(eta, grid, C_alpha=p.C_alpha, delta=p.delta, beta=p.beta, nu0=p.nu0)

    def test_constant_near_fluid(self, geometry):
        p, g = geometry
        near = g.domain_mask | g.tube_mask
        assert np.all(g.mu_ext[near] == p.mu) and np.all(g.lambda_ext[near] == p.lambda_visc)

    def test_far_field_plateau(self, geometry):
        p, g = geometry
        assert np.allclose(g.mu_ext[..., -1], p.delta ** p.nu0 * p.mu)

    def test_lower_bound(self, geometry):
        p, g = geometry
        assert g.mu_ext.min() >= p.delta ** p.nu0 * p.mu * (1 - 1e-14)

    def test_tube_and_domain_disjoint(self, geometry):
        _, g = geometry
        assert not np.any(g.tube_mask & g.domain_mask)

    def test_tube_weight_has_exact_thickness(self, geometry):
        p, g = geometry
        grid = p.grid()
        assert np.allclose(g.tube_weight.sum(axis=-1) * grid.dz, p.tube_width, atol=1e-12)

    def test_collar_violation_raises(self):
        with pytest.raises(ConfigurationError, match="collar"):
            check_collar(0.5, 5.0, 0.089, 0.0)
        grid = Grid(2, 64, 8, 4.0)
        with pytest.raises(ConfigurationError):
            extended_viscosity(np.zeros(64), 0.5, 0.089, 1.0, 1.0, 0.0, grid, beta=5.0)


class TestIndicators:
    def test_tube_point(self):
        assert tube_indicator(0.0, 1e-3, 5.0, 1 + 0.5 * 1e-3 ** 0.3)

    def test_interface_belongs_to_domain(self):
        assert not tube_indicator(0.0, 1e-3, 5.0, 1.0)
        assert domain_indicator(0.0, 1.0)

    def test_band(self):
        assert band_indicator(0.0, 0.25, 0.5)
        assert not band_indicator(0.0, 0.25, 0.1)

    def test_tube_width_formula(self):
        assert tube_width(1e-3, 5.0) == pytest.approx(1e-3 ** 0.3)

    @given(st.floats(0.0, 4.0), st.floats(0.0, 4.0))
    def test_coverage_counts_length(self, lo, hi):
        grid = Grid(2, 4, 40, 4.0)
        cov = coverage(np.full(4, lo), np.full(4, hi), grid)
        assert np.allclose(cov.sum(axis=-1) * grid.dz, max(hi - lo, 0.0), atol=1e-12)


class TestMinHeight:
    def test_flat_limit(self):
        assert min_height(np.zeros(4), 1.0, 1e-12) == pytest.approx(1.0, abs=1e-5)

    def test_refinement(self):
        C = holder_bound(1.75, 0.5)

        def mh(n):
            x = (np.arange(n) + 0.5) / n
            return min_height(-0.4 * np.cos(2 * np.pi * x), C, 1 / n)

        coarse, fine = mh(512), mh(4096)
        assert coarse <= fine <= 0.6
        assert 0.6 - coarse < 0.02

    @given(st.floats(1e-4, 0.1), st.floats(1e-4, 0.1))
    def test_margin_monotone_in_spacing(self, h1, h2):
        eta = np.zeros(8)
        lo, hi = sorted((h1, h2))
        assert min_height(eta, 0.4, hi) <= min_height(eta, 0.4, lo)
