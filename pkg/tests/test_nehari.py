import numpy as np
import pytest

from nehari_radial import (
    NMINUS,
    NPLUS,
    NZERO,
    ContractError,
    DomainError,
    Field,
    ProjectionError,
    SolverOptions,
    classify,
    energy,
    fibering,
    fibering_scalars,
    minimize_branch,
    nehari_second,
    probe_nzero_band,
    project,
    solve_both,
)
from nehari_radial.functional import energy_parts
from nehari_radial.nehari import _project_t

from conftest import smooth_random_field


def bisect_root(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) * flo > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestFiberingScalars:
    def test_worked_example(self):
        # ||u||^2 = int f|u|^N = 1, q = 1.5, N = 4, level = 0.3
        fib = fibering_scalars(1.0, 1.0, 1.0, lam=0.3, q=1.5, N=4.0)
        assert fib.t0 == pytest.approx((0.5 / 2.5) ** 0.5, rel=1e-14)
        assert fib.t0 == pytest.approx(0.44721, abs=1e-5)
        assert fib.E_t0 == pytest.approx(0.44721**0.5 - 0.44721**2.5, abs=1e-5)
        assert fib.E_t0 == pytest.approx(0.53499, abs=1e-5)
        # independent bisection oracle on t^{1/2} - t^{5/2} = 0.3
        g = lambda t: t**0.5 - t**2.5 - 0.3
        t_plus_oracle = bisect_root(g, 1e-8, fib.t0)
        t_minus_oracle = bisect_root(g, fib.t0, 3.0)
        assert fib.t_plus == pytest.approx(t_plus_oracle, rel=1e-10)
        assert fib.t_minus == pytest.approx(t_minus_oracle, rel=1e-10)
        assert fib.t_plus == pytest.approx(0.0916, abs=1e-3)
        assert fib.t_minus == pytest.approx(0.8175, abs=1e-3)
        assert fib.t_plus < fib.t0 < fib.t_minus

    def test_lambda_zero(self):
        fib = fibering_scalars(1.0, 1.0, 1.0, lam=0.0, q=1.5, N=4.0)
        assert fib.t_plus is None
        assert fib.t_minus == pytest.approx(1.0, rel=1e-14)  # E(1) = 1 - 1 = 0
        assert fib.feasible

    def test_tangency_infeasible(self):
        fib0 = fibering_scalars(1.0, 1.0, 1.0, lam=0.3, q=1.5, N=4.0)
        fib = fibering_scalars(1.0, 1.0, 1.0, lam=fib0.E_t0, q=1.5, N=4.0)
        assert not fib.feasible
        assert fib.t_plus is None and fib.t_minus is None

    def test_domain_guards(self):
        with pytest.raises(DomainError):
            fibering_scalars(0.0, 1.0, 1.0, 0.1, 1.5, 4.0)
        with pytest.raises(DomainError):
            fibering_scalars(1.0, 1.0, 0.0, 0.1, 1.5, 4.0)

    def test_stationarity_and_shape(self):
        # E'(t0) = 0; E increases on (0, t0), decreases beyond
        S, F, q, N = 2.3, 0.7, 1.5, 4.0
        fib = fibering_scalars(S, 1.0, F, lam=0.05, q=q, N=N)
        dE = lambda t: (2 - q) * t ** (1 - q) * S - (N - q) * t ** (N - q - 1) * F
        assert abs(dE(fib.t0)) <= 1e-10 * max(1.0, S)
        E = lambda t: t ** (2 - q) * S - t ** (N - q) * F
        ts = np.linspace(1e-3, fib.t0, 30)
        assert np.all(np.diff([E(t) for t in ts]) > 0.0)
        ts = np.linspace(fib.t0, 2 * fib.t_minus, 30)
        assert np.all(np.diff([E(t) for t in ts]) < 0.0)


class TestFiberingFields:
    def test_random_fields(self, spec8_mid_lam):
        spec = spec8_mid_lam
        rng = np.random.default_rng(29)
        for _ in range(25):
            u = smooth_random_field(spec, rng)
            fib = fibering(spec, u)
            assert fib.feasible
            assert 0.0 < fib.t_plus < fib.t0 < fib.t_minus
            S, Q, F = energy_parts(spec, u)
            E = lambda t: t ** (2 - spec.q) * S - t ** (spec.N - spec.q) * F
            np.testing.assert_allclose(E(fib.t_plus), spec.lam * Q, rtol=1e-11)
            np.testing.assert_allclose(E(fib.t_minus), spec.lam * Q, rtol=1e-11)

    def test_zero_field_rejected(self, spec8_mid_lam):
        with pytest.raises(DomainError):
            fibering(spec8_mid_lam, Field(np.zeros(spec8_mid_lam.grid.m), spec8_mid_lam.grid))


class TestProjectClassify:
    def test_branch_tags(self, spec8_mid_lam):
        # the sign structure of the two projections of one ray
        spec = spec8_mid_lam
        rng = np.random.default_rng(31)
        u = smooth_random_field(spec, rng)
        wp = project(spec, u, NPLUS)
        wm = project(spec, u, NMINUS)
        assert classify(spec, wp).tag == NPLUS
        assert classify(spec, wm).tag == NMINUS
        assert nehari_second(spec, wp) > 0.0
        assert nehari_second(spec, wm) < 0.0

    def test_projection_phi_residual(self, spec8_mid_lam):
        spec = spec8_mid_lam
        rng = np.random.default_rng(37)
        for _ in range(10):
            u = smooth_random_field(spec, rng)
            S, _, _ = energy_parts(spec, u)
            for branch in (NPLUS, NMINUS):
                w = project(spec, u, branch)
                Sw, Qw, Fw = energy_parts(spec, w)
                phi = Sw - spec.lam * Qw - Fw
                assert abs(phi) < 1e-10 * abs(S)

    def test_fixed_point(self, spec8_mid_lam):
        spec = spec8_mid_lam
        rng = np.random.default_rng(41)
        u = smooth_random_field(spec, rng)
        w = project(spec, u, NMINUS)
        _, t, _ = _project_t(spec, w, NMINUS)
        assert t == pytest.approx(1.0, abs=1e-10)

    def test_scale_invariance(self, spec8_mid_lam):
        # the projected point depends only on the ray, not the representative
        spec = spec8_mid_lam
        rng = np.random.default_rng(43)
        u = smooth_random_field(spec, rng)
        for branch in (NPLUS, NMINUS):
            w1 = project(spec, u, branch)
            w2 = project(spec, 7.3 * u, branch)
            np.testing.assert_allclose(w1.values, w2.values, rtol=5e-12, atol=1e-300)

    def test_lambda_zero_branches(self, spec8_mid):
        spec = spec8_mid  # lam = 0
        rng = np.random.default_rng(47)
        u = smooth_random_field(spec, rng)
        with pytest.raises(ProjectionError):
            project(spec, u, NPLUS)
        w = project(spec, u, NMINUS)
        S, Q, F = energy_parts(spec, u)
        t_closed = (S / F) ** (1.0 / (spec.N - 2.0))
        np.testing.assert_allclose(w.values, t_closed * u.values, rtol=1e-12)

    def test_infeasible_projection_error(self, spec8_mid, constants_mid):
        spec = spec8_mid.with_lam(50.0 * constants_mid.lambda0)
        rng = np.random.default_rng(53)
        u = smooth_random_field(spec, rng)
        with pytest.raises(ProjectionError) as err:
            project(spec, u, NMINUS)
        assert err.value.margin is not None and err.value.margin < 0.0

    def test_classify_contract(self, spec8_mid_lam):
        spec = spec8_mid_lam
        rng = np.random.default_rng(59)
        u = smooth_random_field(spec, rng)
        with pytest.raises(ContractError):
            classify(spec, u)  # not projected

    def test_classify_band(self, spec8_mid_lam):
        # with an enormous tolerance the band swallows the projected point
        spec = spec8_mid_lam
        rng = np.random.default_rng(61)
        w = project(spec, smooth_random_field(spec, rng), NMINUS)
        assert classify(spec, w, tol=1e9).tag == NZERO

    def test_second_form_identity(self, spec8_mid_lam):
        # <grad Phi(t u), t u> = t^{1+q} E'(t) at the projections
        spec = spec8_mid_lam
        rng = np.random.default_rng(67)
        u = smooth_random_field(spec, rng)
        S, Q, F = energy_parts(spec, u)
        q, N = spec.q, spec.N
        dE = lambda t: (2 - q) * t ** (1 - q) * S - (N - q) * t ** (N - q - 1) * F
        fib = fibering(spec, u)
        for t in (fib.t_plus, fib.t_minus):
            w = Field(t * u.values, spec.grid)
            np.testing.assert_allclose(
                nehari_second(spec, w), t ** (1 + q) * dE(t), rtol=1e-8
            )


class TestMinimizeBranch:
    def test_both_branches_coarse(self, spec8_small, ball8):
        from nehari_radial import constants_report

        rep = constants_report(spec8_small)
        spec = spec8_small.with_lam(0.1 * rep.lambda0)
        rm = minimize_branch(spec, NMINUS, None or _bubble_init(spec))
        rp = minimize_branch(spec, NPLUS, _bump_init(spec))
        assert rm.converged and rp.converged
        assert rp.J_value < 0.0 < rm.J_value
        assert abs(rm.phi_residual) < 1e-8
        # accepted iterations never increase the energy
        js = [row[2] for row in rm.step_trace]
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(js, js[1:]))

    def test_lambda_zero_positive_branch_rejected(self, spec8_small):
        with pytest.raises(ProjectionError):
            minimize_branch(spec8_small, NPLUS, _bump_init(spec8_small))

    def test_iteration_cap_flagged(self, spec8_small):
        from nehari_radial import constants_report

        rep = constants_report(spec8_small)
        spec = spec8_small.with_lam(0.1 * rep.lambda0)
        r = minimize_branch(
            spec, NMINUS, _bubble_init(spec), SolverOptions(max_iters=2, stall_factor=1.0)
        )
        assert not r.converged
        assert "cap" in r.message


def _bubble_init(spec):
    from nehari_radial import build_bubble

    return build_bubble(spec, eps=spec.geom.radius / 8.0)


def _bump_init(spec):
    rho = spec.grid.nodes
    R = spec.geom.radius
    return Field(0.1 * (1.0 - (rho / R) ** 2) ** 4, spec.grid)


class TestSolveBoth:
    def test_two_solutions_coarse(self, spec8_small):
        from nehari_radial import constants_report, h22_norm

        rep = constants_report(spec8_small)
        spec = spec8_small.with_lam(0.1 * rep.lambda0)
        rp, rm = solve_both(spec)
        assert rp.converged and rm.converged
        assert rp.J_value < 0.0 < rm.J_value
        diff = Field(rp.u.values - rm.u.values, spec.grid)
        assert h22_norm(diff, spec.geom) > 1e-3
        # not a scalar multiple: directions differ measurably
        from nehari_radial.functional import _disc

        H = _disc(spec).H
        num = float(rp.u.values @ (H @ rm.u.values))
        den = float(np.sqrt((rp.u.values @ (H @ rp.u.values)) * (rm.u.values @ (H @ rm.u.values))))
        assert abs(num) / den < 1.0 - 1e-6

    def test_lambda_sweep_monotone_trace(self, spec8_small):
        # J(u^-) approaches the lam = 0 ground-state level from below as lam -> 0+
        from nehari_radial import constants_report

        rep = constants_report(spec8_small)
        levels = []
        for frac in (0.3, 0.1, 0.03, 0.0):
            spec = spec8_small.with_lam(frac * rep.lambda0)
            r = minimize_branch(spec, NMINUS, _bubble_init(spec))
            assert r.converged
            levels.append(r.J_value)
        assert all(a <= b + 1e-9 * abs(b) for a, b in zip(levels, levels[1:]))
        assert levels[-2] == pytest.approx(levels[-1], rel=0.05)


class TestNzeroProbe:
    def test_no_band_landings_coarse(self, spec8_small):
        from nehari_radial import constants_report

        rep = constants_report(spec8_small)
        lam = 0.5 * min(rep.lambda0, rep.lambda2)
        spec = spec8_small.with_lam(lam)
        feasible, landings, min_rel = probe_nzero_band(spec, count=200, tol=1e-8, seed=5)
        assert feasible == 400
        assert landings == 0
        assert min_rel > 1e-8
