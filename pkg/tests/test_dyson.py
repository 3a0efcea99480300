import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tct.dyson import (
    DysonSolution,
    atom_at_zero,
    density,
    dyson_derivative,
    dyson_residual,
    equal_thirds_closed_form,
    has_point_mass,
    inner_edge,
    moment,
    solve_dyson,
    spectral_bound,
    stieltjes,
    support_edge,
)
from tct.errors import ConfigurationError
from tct.limit_laws import pi_from_g

THIRDS = np.ones(3) / 3


def random_ratios(rng, d=None):
    d = d or int(rng.integers(3, 6))
    c = rng.uniform(0.05, 1.0, size=d)
    return c / c.sum()


class TestSolve:
    def test_closed_form_points(self):
        g = solve_dyson(THIRDS, 1j)
        np.testing.assert_allclose(g, 0.228713 * 1j * np.ones(3), atol=1e-6)
        assert abs(g.sum() - 0.686140j) < 1e-6
        assert abs(stieltjes(THIRDS, 2j) - 0.436492j) < 1e-6

    def test_closed_form_grid(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(-5, 5, 100) + 1j * rng.uniform(0.01, 5, 100)
        t0 = time.perf_counter()
        g = solve_dyson(THIRDS, z)
        elapsed = time.perf_counter() - t0
        assert np.max(np.abs(g.sum(-1) - equal_thirds_closed_form(z))) <= 1e-8
        assert elapsed < 1.0

    def test_large_z(self):
        z = 1e4j
        assert abs(stieltjes(THIRDS, z) + 1 / z) <= 1e-7

    def test_real_axis_outside_support(self):
        z = np.array([2.5, 3.0, -2.2]) + 0j
        np.testing.assert_allclose(solve_dyson(THIRDS, z).sum(-1), equal_thirds_closed_form(z), atol=1e-10)

    def test_bad_tol(self):
        with pytest.raises(ConfigurationError):
            solve_dyson(THIRDS, 1j, tol=1e-3)

    def test_residual_and_imag(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            c = random_ratios(rng)
            z = rng.uniform(-5, 5, 100) + 1j * rng.uniform(0.05, 5, 100)
            g = solve_dyson(c, z)
            assert np.max(dyson_residual(c, z, g)) <= 1e-10
            assert np.all(g.imag > 0)

    def test_conjugation(self):
        rng = np.random.default_rng(2)
        c = random_ratios(rng, 4)
        z = rng.uniform(-4, 4, 30) + 1j * rng.uniform(0.05, 3, 30)
        g = solve_dyson(c, z)
        np.testing.assert_allclose(solve_dyson(c, -np.conj(z)), -np.conj(g), atol=1e-10)
        np.testing.assert_allclose(solve_dyson(c, np.conj(z)), np.conj(g), atol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6))
    def test_stability_operator_invertible(self, seed):
        rng = np.random.default_rng(seed)
        c = random_ratios(rng)
        z = complex(rng.uniform(-4, 4), rng.uniform(0.1, 3))
        g = solve_dyson(c, z)
        assert np.isfinite(np.linalg.cond(pi_from_g(c, g, g)))

    def test_derivative(self):
        c = np.array([0.2, 0.3, 0.5])
        z = 0.7 + 0.4j
        h = 1e-6
        fd = (solve_dyson(c, z + h) - solve_dyson(c, z - h)) / (2 * h)
        np.testing.assert_allclose(dyson_derivative(c, z), fd, atol=1e-7)


class TestDensity:
    def test_center(self):
        assert density(THIRDS, 0.0, 1e-6) == pytest.approx(3 / (4 * math.pi) * math.sqrt(8 / 3), abs=1e-4)

    def test_outside(self):
        assert density(THIRDS, 2.0, 1e-6) <= 1e-4

    @pytest.mark.parametrize("c", [THIRDS, [0.2, 0.3, 0.5], [0.1, 0.2, 0.3, 0.4]])
    def test_total_mass(self, c):
        # x = +-t^2 absorbs the |x|^(-1/2) singularity at 0 when max c = 1/2
        h = math.sqrt(support_edge(c) + 0.1)
        x, w = np.polynomial.legendre.leggauss(400)
        t = 0.5 * h * (x + 1)
        mass = np.sum(0.5 * h * w * 2 * t * (density(c, t**2, 1e-6) + density(c, -t**2, 1e-6)))
        assert mass == pytest.approx(1, abs=1e-3)

    def test_eta_positive(self):
        with pytest.raises(ConfigurationError):
            density(THIRDS, 0.0, 0.0)


class TestEdge:
    def test_equal_thirds(self):
        assert support_edge(THIRDS) == pytest.approx(math.sqrt(8 / 3), abs=1e-3)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10**6))
    def test_bounded(self, seed):
        c = random_ratios(np.random.default_rng(seed), 3)
        assert support_edge(c) <= 2 * math.sqrt(2)

    def test_grid_scan_oracle(self):
        c = [0.2, 0.3, 0.5]
        E = np.arange(1.0, 2.5, 2e-4)
        dens = density(c, E, 1e-7)
        scan = E[np.nonzero(dens > 1e-5)[0][-1]]
        assert support_edge(c) == pytest.approx(scan, abs=1e-3)


class TestBound:
    @pytest.mark.parametrize("c, expected", [
        (THIRDS, 4 * math.sqrt(3)),
        ([0.25, 0.25, 0.5], 4 * (1 + math.sqrt(0.5))),
        ([0.25] * 4, 12.0),
    ])
    def test_values(self, c, expected):
        assert spectral_bound(c) == pytest.approx(expected, rel=1e-12)


class TestPointMass:
    @pytest.mark.parametrize("c, expected", [
        (THIRDS, False), ([0.5, 0.25, 0.25], True), ([0.6, 0.2, 0.2], True),
    ])
    def test_predicate(self, c, expected):
        assert has_point_mass(c) is expected

    def test_atom_mass(self):
        assert atom_at_zero([0.6, 0.2, 0.2]) == pytest.approx(0.2)
        assert atom_at_zero([0.5, 0.25, 0.25]) == 0
        assert atom_at_zero(THIRDS) == 0

    def test_atom_from_stieltjes(self):
        c = [0.7, 0.15, 0.15]
        eta = 1e-6
        mass = -1j * eta * stieltjes(c, 1j * eta)
        assert mass.real == pytest.approx(atom_at_zero(c), abs=1e-4)

    def test_inner_edge(self):
        assert inner_edge(THIRDS) == 0
        a = inner_edge([0.6, 0.2, 0.2])
        assert 0.05 < a < 0.12
        assert density([0.6, 0.2, 0.2], 0.5 * a, 1e-9) < 1e-3


class TestMoments:
    def test_second_moment(self):
        assert moment(THIRDS, 2) == pytest.approx(2 / 3, abs=1e-4)

    @pytest.mark.parametrize("c", [THIRDS, [0.2, 0.3, 0.5], [0.6, 0.2, 0.2], [0.8, 0.1, 0.1],
                                   [0.1, 0.2, 0.3, 0.4]])
    def test_mass_and_second(self, c):
        c = np.asarray(c)
        assert moment(c, 0) == pytest.approx(1, abs=1e-6)
        # the second moment equals 1 - sum c^2 for every d
        assert moment(c, 2) == pytest.approx(1 - np.sum(c * c), abs=1e-6)

    def test_threshold_ratio(self):
        c = [0.5, 0.25, 0.25]
        assert moment(c, 2) == pytest.approx(1 - 0.375, abs=1e-5)

    def test_odd(self):
        assert moment(THIRDS, 3) == 0

    def test_fourth_moment_closed_form(self):
        # (3/4 pi) sqrt(8/3 - x^2) is a semicircle of variance 2/3, fourth moment 2 (2/3)^2
        assert moment(THIRDS, 4) == pytest.approx(2 * (2 / 3) ** 2, abs=1e-6)


class TestSolution:
    def test_caches(self):
        sol = DysonSolution(THIRDS)
        assert sol.edge == sol.edge
        assert sol.bound == pytest.approx(4 * math.sqrt(3))
        assert not sol.has_point_mass
        assert sol.moment(2) == pytest.approx(2 / 3, abs=1e-6)
        assert sol.residual(0.3 + 0.2j) <= 1e-12

    def test_bad_ratios(self):
        with pytest.raises(ConfigurationError):
            DysonSolution([0.5, -0.1, 0.6])
