import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nehari_radial import (
    DomainError,
    Field,
    ModelGeometry,
    ProblemSpec,
    RadialCoefficient,
    build_grid,
    energy,
    estimate_coercivity,
    estimate_companion_constant,
    estimate_sobolev_constant,
    grad_energy,
    nehari_residual,
    nehari_second,
    quad_form,
    thresholds,
    unit_sphere_area,
)
from nehari_radial.functional import (
    compute_theta,
    directional_derivative,
    energy_from_parts,
    energy_parts,
    quad_inner,
    threshold_lambda0,
    threshold_lambda2,
    threshold_xi,
)
from nehari_radial.testfn import integral_I

from conftest import smooth_random_field


class TestProblemSpec:
    def test_exponent_validation(self, ball8, grid8_small):
        with pytest.raises(DomainError):
            ProblemSpec(geom=ball8, grid=grid8_small, q=2.5)
        with pytest.raises(DomainError):
            ProblemSpec(geom=ball8, grid=grid8_small, sigma=2.5)
        with pytest.raises(DomainError):
            ProblemSpec(geom=ball8, grid=grid8_small, mu=4.5)
        with pytest.raises(DomainError):
            ProblemSpec(geom=ball8, grid=grid8_small, lam=-0.1)

    def test_f_positivity_guard(self, ball8, grid8_small):
        with pytest.raises(DomainError):
            ProblemSpec(geom=ball8, grid=grid8_small,
                        f=RadialCoefficient(center=1.0, lap_center=-40.0))
        with pytest.raises(DomainError):
            ProblemSpec(geom=ball8, grid=grid8_small,
                        f=RadialCoefficient(center=1.0, lap_center=1.0))

    def test_critical_exponent(self, spec8_small):
        assert spec8_small.N == 4.0


class TestQuadForm:
    def test_zero(self, spec8_small):
        u = Field(np.zeros(spec8_small.grid.m), spec8_small.grid)
        assert quad_form(spec8_small, u) == 0.0

    def test_rho_fourth_free_closure(self, ball8):
        # closed-form polynomial oracle: with a = b = 0 the form reduces to
        # integral (Delta rho^4)^2 dv = omega_7 (4n+8)^2/(n+4), n = 8, R = 1
        grid = build_grid(ball8, 2048)
        spec = ProblemSpec(geom=ball8, grid=grid, bc="free")
        val = quad_form(spec, Field(grid.nodes**4, grid))
        np.testing.assert_allclose(val, unit_sphere_area(8) * 1600.0 / 12.0, rtol=1e-5)

    @settings(max_examples=20, deadline=None)
    @given(t=st.floats(-8.0, 8.0, allow_nan=False))
    def test_quadratic_homogeneity(self, spec8_small, t):
        rng = np.random.default_rng(11)
        u = smooth_random_field(spec8_small, rng)
        base = quad_form(spec8_small, u)
        np.testing.assert_allclose(
            quad_form(spec8_small, t * u), t * t * base, rtol=1e-11, atol=1e-280
        )

    def test_polarization(self, spec8_small):
        rng = np.random.default_rng(12)
        u = smooth_random_field(spec8_small, rng)
        v = smooth_random_field(spec8_small, rng)
        upv = quad_form(spec8_small, u + v)
        umv = quad_form(spec8_small, u - v)
        np.testing.assert_allclose(
            (upv - umv) / 4.0, quad_inner(spec8_small, u, v), rtol=1e-9
        )
        np.testing.assert_allclose(
            quad_inner(spec8_small, u, v), quad_inner(spec8_small, v, u), rtol=1e-12
        )


class TestEnergy:
    def test_zero(self, spec8_small):
        u = Field(np.zeros(spec8_small.grid.m), spec8_small.grid)
        assert energy(spec8_small, u) == 0.0
        assert nehari_residual(spec8_small, u) == 0.0
        assert nehari_second(spec8_small, u) == 0.0

    def test_synthetic_decomposition(self):
        # arithmetic from the definition with ||u||^2 = ||u||_q^q = int f|u|^N = 1
        J = energy_from_parts(1.0, 1.0, 1.0, lam=0.1, q=1.5, N=4.0)
        assert J == pytest.approx(0.5 - 0.1 / 1.5 - 0.25, abs=1e-15)
        assert J == pytest.approx(0.18333333333, abs=1e-9)
        # Phi = 1 - 0.1 - 1 and the second form 2 - 0.15 - 4
        assert 1.0 - 0.1 * 1.0 - 1.0 == pytest.approx(-0.1)
        assert 2.0 - 0.1 * 1.5 * 1.0 - 4.0 * 1.0 == pytest.approx(-2.15)

    def test_ray_polynomial(self, spec8_mid_lam):
        # J(t u) = t^2/2 ||u||^2 - (lam/q) t^q ||u||_q^q - t^N/N int f|u|^N
        spec = spec8_mid_lam
        rng = np.random.default_rng(13)
        u = smooth_random_field(spec, rng)
        S, Q, F = energy_parts(spec, u)
        t = 2.0
        direct = energy(spec, t * u)
        formula = 0.5 * t**2 * S - spec.lam / spec.q * t**spec.q * Q - t**spec.N / spec.N * F
        np.testing.assert_allclose(direct, formula, rtol=1e-12)


class TestGradient:
    def test_zero_field(self, spec8_mid_lam):
        u = Field(np.zeros(spec8_mid_lam.grid.m), spec8_mid_lam.grid)
        g = grad_energy(spec8_mid_lam, u)
        np.testing.assert_array_equal(g.values, 0.0)

    @pytest.mark.parametrize("which", ["plain", "weighted"])
    def test_finite_difference(self, spec8_mid_lam, weighted_spec, which):
        spec = spec8_mid_lam if which == "plain" else weighted_spec
        rng = np.random.default_rng(17)
        h = 1e-6
        for _ in range(5):
            u = smooth_random_field(spec, rng)
            v = smooth_random_field(spec, rng)
            fd = (energy(spec, u + h * v) - energy(spec, u - h * v)) / (2.0 * h)
            np.testing.assert_allclose(directional_derivative(spec, u, v), fd, rtol=1e-5)

    def test_riesz_identity_phi(self, spec8_mid_lam):
        # <g, u>_H = Phi(u): identity between two code paths
        spec = spec8_mid_lam
        rng = np.random.default_rng(19)
        from nehari_radial.functional import _disc

        H = _disc(spec).H
        for _ in range(5):
            u = smooth_random_field(spec, rng)
            g = grad_energy(spec, u)
            lhs = float(g.values @ (H @ u.values))
            np.testing.assert_allclose(lhs, nehari_residual(spec, u), rtol=1e-10)


class TestCoercivity:
    def test_dense_oracle_agreement(self, ball8):
        # sparse shift-invert path vs the dense eigensolve oracle
        from nehari_radial.functional import _dense_smallest, _disc

        grid = build_grid(ball8, 1024)
        spec = ProblemSpec(geom=ball8, grid=grid)
        lam_sparse = estimate_coercivity(spec)
        d = _disc(spec)
        lam_dense = _dense_smallest(d.M_quad.tocsc(), d.H)
        np.testing.assert_allclose(lam_sparse, lam_dense, rtol=1e-8)

    def test_in_unit_interval(self, spec8_small):
        # a = b = 0: the (Delta u)^2 energy is one of three nonnegative
        # summands of the H^2_2 norm, so the quotient sits in (0, 1)
        lam = estimate_coercivity(spec8_small)
        assert 0.0 < lam < 1.0

    def test_form_monotonicity(self, ball8, grid8_small, spec8_small):
        # adding b >= 0 and a <= 0 adds pointwise nonnegative terms
        lam0 = estimate_coercivity(spec8_small)
        richer = ProblemSpec(
            geom=ball8, grid=grid8_small,
            a=RadialCoefficient.constant(-0.5),
            b=RadialCoefficient.constant(1.0),
        )
        assert estimate_coercivity(richer) >= lam0 - 1e-12


class TestSobolevConstants:
    @pytest.mark.parametrize("n", [6, 8])
    def test_k0_beta_oracle(self, n):
        # independent oracle: the same Rayleigh quotient in closed Beta form
        omega = unit_sphere_area(n)
        i_num = (n - 4.0) ** 2 / 2.0 * (
            n * n * integral_I(n, n / 2 - 1)
            + 4 * n * integral_I(n, n / 2)
            + 4 * integral_I(n, n / 2 + 1)
        )
        i_den = 0.5 * integral_I(n, n / 2 - 1)
        k0_exact = (omega * i_den) ** ((n - 4.0) / n) / (omega * i_num)
        np.testing.assert_allclose(estimate_sobolev_constant(n), k0_exact, rtol=1e-9)

    def test_companion_floor(self, spec8_mid, constants_mid):
        # at least the closed-manifold constant-field ratio V^{2/N-1}
        A = constants_mid.A_eps
        V = constants_mid.volume
        assert A >= V ** (2.0 / 4.0 - 1.0) - 1e-12


class TestThresholds:
    def test_worked_arithmetic(self):
        # N = 4 (n = 8), q = 1.5, Lambda = V = max(K0, A_eps) = 1
        lam0 = threshold_lambda0(4.0, 1.5, 1.0, 1.0, 1.0)
        assert lam0 == pytest.approx(0.6, abs=1e-15)
        xi = threshold_xi(4.0, 1.5, 1.0, 1.0, 1.0)
        assert xi == pytest.approx(math.sqrt(0.2), rel=1e-12)
        assert xi == pytest.approx(0.4472, abs=5e-5)
        lam2 = threshold_lambda2(4.0, 1.5, 1.0, 1.0, 1.0, xi)
        assert lam2 == pytest.approx(0.08, rel=1e-12)

    def test_homogeneity_in_coercivity(self):
        # doubling Lambda scales lambda0 by 2^{q/2}
        q = 1.5
        lam_a = threshold_lambda0(4.0, q, 1.0, 2.0, 0.7)
        lam_b = threshold_lambda0(4.0, q, 2.0, 2.0, 0.7)
        np.testing.assert_allclose(lam_b / lam_a, 2.0 ** (q / 2.0), rtol=1e-14)

    def test_positive_inputs_required(self, spec8_small):
        with pytest.raises(DomainError):
            thresholds(spec8_small, -1.0, 1.0, 1.0)

    def test_report_fields(self, constants_mid):
        rep = constants_mid
        assert rep.coercive
        for value in (rep.Lambda, rep.K0, rep.A_eps, rep.lambda0, rep.lambda2, rep.xi):
            assert value > 0.0
        assert rep.theta == 1.0  # a = b = 0

    def test_energy_floor_on_constraint_set(self, spec8_mid, constants_mid):
        # sampled form of the boundedness lemma: for lam < lambda0 every
        # projected point satisfies J >= -lam (N-q)/(Nq) Lambda^{-q/2}
        #                                  V^{1-q/N} max(K0, A_eps)^{q/2}
        from nehari_radial import NMINUS, NPLUS, project

        rep = constants_mid
        lam = 0.5 * rep.lambda0
        spec = spec8_mid.with_lam(lam)
        N, q = spec.N, spec.q
        floor = (
            -lam * (N - q) / (N * q)
            * rep.Lambda ** (-q / 2.0)
            * rep.volume ** (1.0 - q / N)
            * max(rep.K0, rep.A_eps) ** (q / 2.0)
        )
        rng = np.random.default_rng(23)
        for _ in range(20):
            u = smooth_random_field(spec, rng)
            for branch in (NPLUS, NMINUS):
                w = project(spec, u, branch)
                assert energy(spec, w) >= floor


class TestTheta:
    def test_trivial(self, spec8_mid):
        assert compute_theta(spec8_mid) == 1.0

    def test_divergence_guard(self, ball8, grid8_small):
        spec = ProblemSpec(
            geom=ball8, grid=grid8_small,
            b=RadialCoefficient.constant(1.0), mu=3.0, s=4.0,
        )
        with pytest.raises(DomainError):
            compute_theta(spec)

    def test_weighted_norms_enter(self, ball8, grid8_small):
        spec = ProblemSpec(
            geom=ball8, grid=grid8_small,
            a=RadialCoefficient.constant(0.5), sigma=1.5, r=4.0,
        )
        assert compute_theta(spec) > 1.0
