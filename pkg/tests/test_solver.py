import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drot import DrotConfig, Status, TransportProblem, drot_step, init_state, lp_exact, solve
from drot.core import kkt_violations
from drot.errors import InvalidInitialPlan, MarginalNotSimplex, NonPositiveRho, ShapeMismatch
from drot.reference import dr_reference_init, dr_reference_step
from drot.solver import current_plan, current_y, ergodic_objective, recover_duals, state_identity_errors

from conftest import random_problem, small_problems

TIGHT = DrotConfig(tol_primal=1e-7, tol_dual=1e-7, tol_gap=1e-7, max_iters=100_000)


class TestConfig:
    def test_default_rho(self):
        assert DrotConfig().rho(3, 5) == pytest.approx(2.0 / 8)

    def test_override(self):
        assert DrotConfig(rho_override=0.5).rho(3, 5) == 0.5

    def test_log_rule_preset(self):
        assert DrotConfig.log_rule(100).rho0 == pytest.approx(1 / math.log(100))

    @pytest.mark.parametrize("kwargs", [dict(rho0=0.0), dict(rho0=-1.0), dict(rho_override=0.0)])
    def test_rejects_nonpositive_rho(self, kwargs):
        with pytest.raises(NonPositiveRho):
            DrotConfig(**kwargs)

    @pytest.mark.parametrize("kwargs", [dict(precision="f16"), dict(max_iters=0), dict(tol_gap=-1.0),
                                        dict(engine="gpu"), dict(engine="reference", skip_cost=True)])
    def test_rejects_bad_fields(self, kwargs):
        with pytest.raises(ValueError):
            DrotConfig(**kwargs)


class TestInitState:
    def test_product_coupling(self, swap2):
        st_ = init_state(swap2, DrotConfig())
        np.testing.assert_array_equal(st_.xy, np.outer(swap2.p, swap2.q))
        # zero up to the rounding of the products p_i q_j
        assert np.abs(st_.a).max() <= 1e-16 and np.abs(st_.b).max() <= 1e-16 and abs(st_.alpha) <= 1e-16
        assert not st_.phi.any() and not st_.varphi.any()

    def test_zero_start(self, swap2):
        st_ = init_state(swap2, DrotConfig(), x0=np.zeros((2, 2)))
        np.testing.assert_array_equal(st_.a, -swap2.p)
        np.testing.assert_array_equal(st_.b, -swap2.q)
        assert st_.alpha == pytest.approx(-1.0 / 4, abs=1e-16)

    def test_negative_entry(self, swap2):
        with pytest.raises(InvalidInitialPlan):
            init_state(swap2, DrotConfig(), x0=np.array([[-1.0, 0.0], [0.0, 1.0]]))

    def test_wrong_shape(self, swap2):
        with pytest.raises(ShapeMismatch):
            init_state(swap2, DrotConfig(), x0=np.zeros((3, 2)))


class TestStep:
    def test_two_by_two_matches_three_matrix_step(self, sym2):
        cfg = DrotConfig(rho_override=0.5)
        st_ = drot_step(init_state(sym2, cfg), sym2, cfg)
        ref = dr_reference_step(dr_reference_init(sym2), sym2, 0.5)
        np.testing.assert_allclose(current_plan(st_, sym2, 0.5), ref.x, atol=1e-12, rtol=0)
        np.testing.assert_allclose(current_y(st_, sym2, 0.5), ref.y, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("engine", ["fused", "reference"])
    def test_zero_cost_fixed_point(self, engine):
        p, q = np.array([0.2, 0.8]), np.array([0.1, 0.6, 0.3])
        prob = TransportProblem(np.zeros((2, 3)), p, q)
        cfg = DrotConfig(engine=engine)
        st_ = init_state(prob, cfg)
        for _ in range(5):
            drot_step(st_, prob, cfg)
        np.testing.assert_allclose(current_plan(st_, prob, cfg.rho(2, 3)), np.outer(p, q), atol=1e-14, rtol=0)
        assert np.abs(st_.phi).max() <= 1e-14 and np.abs(st_.varphi).max() <= 1e-14

    def test_one_by_one(self):
        prob = TransportProblem([[0.7]], [1.0], [1.0])
        res = solve(prob, TIGHT)
        assert res.status is Status.CONVERGED
        assert res.plan.x[0, 0] == pytest.approx(1.0, abs=1e-7)
        assert res.cert.mu[0] + res.cert.nu[0] == pytest.approx(0.7, abs=1e-6)
        assert res.report.objective == pytest.approx(lp_exact(prob).objective, abs=1e-7)

    @settings(max_examples=15)
    @given(small_problems(max_m=12, max_n=12))
    def test_iterates_match_reference_dr(self, prob):
        cfg = DrotConfig()
        rho = cfg.rho(*prob.shape)
        st_ = init_state(prob, cfg)
        ref = dr_reference_init(prob)
        for _ in range(200):
            drot_step(st_, prob, cfg)
            dr_reference_step(ref, prob, rho)
            assert np.abs(current_plan(st_, prob, rho) - ref.x).max() <= 1e-10

    @settings(max_examples=15)
    @given(small_problems(max_m=10, max_n=10), st.sampled_from(["fused", "reference"]))
    def test_state_identities(self, prob, engine):
        cfg = DrotConfig(engine=engine)
        rho = cfg.rho(*prob.shape)
        st_ = init_state(prob, cfg)
        for _ in range(60):
            drot_step(st_, prob, cfg)
            errs = state_identity_errors(st_, prob, rho)
            assert max(errs.values()) <= 1e-9

    def test_reference_and_fused_engines_agree(self):
        prob = random_problem(9, 7, seed=11)
        fused = init_state(prob, DrotConfig())
        ref = init_state(prob, DrotConfig(engine="reference"))
        for _ in range(100):
            drot_step(fused, prob, DrotConfig())
            drot_step(ref, prob, DrotConfig(engine="reference"))
        rho = DrotConfig().rho(9, 7)
        np.testing.assert_allclose(current_plan(fused, prob, rho), current_plan(ref, prob, rho), atol=1e-13)


class TestSolve:
    def test_swap_instance(self, swap2):
        res = solve(swap2, TIGHT)
        assert res.status is Status.CONVERGED
        assert res.report.objective == pytest.approx(0.3, abs=1e-6)
        np.testing.assert_allclose(res.plan.x, [[0.4, 0.3], [0.0, 0.3]], atol=1e-6)
        assert res.cert.dual_objective(swap2) == pytest.approx(0.3, abs=1e-5)

    def test_zero_cost_converges_immediately(self):
        prob = TransportProblem(np.zeros((3, 4)), np.full(3, 1 / 3), np.full(4, 0.25))
        res = solve(prob, TIGHT)
        assert res.status is Status.CONVERGED and res.iterations <= 1
        assert res.report.objective == 0.0

    def test_infeasible_marginals_rejected(self):
        with pytest.raises(MarginalNotSimplex):
            solve(TransportProblem(np.ones((2, 2)), [0.5, 0.5 + 1e-9], [0.5, 0.5]), TIGHT)

    @settings(max_examples=20)
    @given(small_problems(max_m=8, max_n=8, min_dim=2))
    def test_converged_certificate(self, prob):
        res = solve(prob, TIGHT)
        if res.status is not Status.CONVERGED:
            return  # near-degenerate draws may need more iterations; covered by the acceptance suite
        rep = res.report
        assert rep.r_primal <= 1e-7 and rep.r_dual <= 1e-7 and rep.gap <= 1e-7
        viol = kkt_violations(prob, res.plan.x, res.cert.mu, res.cert.nu)
        assert viol["dual"] <= 1e-6 and viol["slackness"] <= 1e-6
        assert rep.objective == pytest.approx(lp_exact(prob).objective, abs=1e-5)

    def test_max_iters_status(self):
        res = solve(random_problem(8, 8, 3), DrotConfig(max_iters=5))
        assert res.status is Status.MAX_ITERS and res.iterations == 5
        assert len(res.trace) == 5 and res.trace.termination == "max_iters"

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_numerical_failure(self):
        prob = random_problem(3, 3, 0)
        x0 = np.full((3, 3), 1e308)
        res = solve(prob, DrotConfig(max_iters=10), x0=x0)
        assert res.status is Status.NUMERICAL_FAILURE
        assert res.cert is None and math.isnan(res.report.objective)
        assert "non-finite" in res.reason

    def test_relative_mode_stops_no_later(self):
        prob = random_problem(10, 10, 5)
        a = solve(prob, DrotConfig(tol_primal=1e-6, tol_dual=1e-6, tol_gap=1e-6))
        b = solve(prob, DrotConfig(tol_primal=1e-6, tol_dual=1e-6, tol_gap=1e-6, relative=True))
        assert b.iterations <= a.iterations

    def test_f32_precision(self):
        prob = random_problem(12, 9, 2)
        res = solve(prob, DrotConfig(precision="f32", tol_primal=1e-4, tol_dual=1e-4, tol_gap=1e-4))
        assert res.status is Status.CONVERGED
        assert res.report.objective == pytest.approx(lp_exact(prob).objective, abs=1e-3)

    def test_check_every(self):
        prob = random_problem(10, 10, 1)
        res = solve(prob, DrotConfig(check_every=7))
        assert res.status is Status.CONVERGED and res.iterations % 7 == 0

    def test_callback_sees_every_iteration(self):
        seen = []
        solve(random_problem(4, 4, 0), DrotConfig(max_iters=12), callback=lambda s: seen.append(s.k))
        assert seen == list(range(1, 13))

    def test_deterministic_repeat_and_workers(self):
        prob = random_problem(40, 70, 9)
        a = solve(prob, DrotConfig(max_iters=300, bs=8, ws=2, workers=1))
        b = solve(prob, DrotConfig(max_iters=300, bs=8, ws=2, workers=3))
        c = solve(prob, DrotConfig(max_iters=300, bs=16, ws=1, workers=2))
        # same tiles on more workers: bitwise; other tiles: a different summation tree
        assert np.array_equal(a.plan.x, b.plan.x)
        assert a.trace.r_primal == b.trace.r_primal
        np.testing.assert_allclose(a.plan.x, c.plan.x, atol=1e-12, rtol=0)

    def test_skip_cost_same_iterates(self):
        prob = random_problem(11, 13, 4)
        a = solve(prob, DrotConfig(max_iters=301, tol_primal=0.0))
        b = solve(prob, DrotConfig(max_iters=301, tol_primal=0.0, skip_cost=True))
        assert np.array_equal(a.plan.x, b.plan.x)
        # objectives of non-reading iterations are back-filled from the next pass
        np.testing.assert_allclose(b.trace.objective, a.trace.objective, rtol=1e-12, atol=1e-15)
        fpr = np.array(b.trace.fixed_point_residual)
        assert np.isnan(fpr[1::2]).all() and not np.isnan(fpr[0::2]).any()

    def test_skip_cost_converges(self):
        prob = random_problem(6, 6, 2)
        res = solve(prob, DrotConfig(skip_cost=True, tol_primal=1e-8, tol_dual=1e-8, tol_gap=1e-8,
                                     max_iters=50_000))
        assert res.status is Status.CONVERGED
        assert res.report.objective == pytest.approx(lp_exact(prob).objective, abs=1e-6)


class TestTrace:
    def test_fixed_point_residual_matches_reference_y(self):
        prob = random_problem(6, 5, 8)
        cfg = DrotConfig(max_iters=80, tol_primal=0.0)
        res = solve(prob, cfg)
        ref = dr_reference_init(prob)
        for k in range(80):
            y_old = ref.y.copy()
            dr_reference_step(ref, prob, cfg.rho(6, 5))
            assert res.trace.fixed_point_residual[k] == pytest.approx(np.linalg.norm(ref.y - y_old),
                                                                      rel=1e-8, abs=1e-13)

    def test_trace_columns_match_exact_report(self):
        prob = random_problem(7, 6, 1)
        cfg = DrotConfig(max_iters=40, tol_primal=0.0)
        res = solve(prob, cfg)
        st_ = init_state(prob, cfg)
        rho = cfg.rho(7, 6)
        from drot import residual_report

        for k in range(40):
            drot_step(st_, prob, cfg)
            rep = residual_report(prob, current_plan(st_, prob, rho), recover_duals(st_, rho))
            assert res.trace.iteration[k] == k + 1
            assert res.trace.r_primal[k] == pytest.approx(rep.r_primal, rel=1e-9, abs=1e-15)
            assert res.trace.r_dual[k] == pytest.approx(rep.r_dual, rel=1e-9, abs=1e-15)
            assert res.trace.objective[k] == pytest.approx(rep.objective, rel=1e-12)
            assert res.trace.gap[k] == pytest.approx(rep.gap, rel=1e-8, abs=1e-14)

    def test_ergodic_column(self):
        res = solve(random_problem(5, 5, 0), DrotConfig(max_iters=50, tol_primal=0.0))
        obj = np.array(res.trace.objective)
        np.testing.assert_allclose(res.trace.ergodic_objective, np.cumsum(obj) / np.arange(1, 51), rtol=1e-12)

    def test_reference_engine_trace(self):
        res = solve(random_problem(5, 4, 0), DrotConfig(engine="reference", max_iters=30, tol_primal=0.0))
        assert res.trace.iteration == list(range(1, 31))
        assert all(math.isfinite(v) for v in res.trace.fixed_point_residual)


class TestDuals:
    def test_zero(self, swap2):
        cert = recover_duals(init_state(swap2, DrotConfig()), 0.5)
        assert not cert.mu.any() and not cert.nu.any()

    def test_rho_scaling(self, swap2):
        cfg = DrotConfig()
        st_ = init_state(swap2, cfg)
        for _ in range(3):
            drot_step(st_, swap2, cfg)
        a, b = recover_duals(st_, 0.5), recover_duals(st_, 1.0)
        np.testing.assert_array_equal(b.mu, a.mu / 2)
        np.testing.assert_array_equal(b.nu, a.nu / 2)


class TestErgodic:
    def test_constant(self):
        avg = math.nan
        for k in range(1, 20):
            avg = ergodic_objective(avg, 0.25, k)
            assert avg == 0.25

    def test_one_two_three(self):
        avg = math.nan
        for k, v in enumerate([1.0, 2.0, 3.0], start=1):
            avg = ergodic_objective(avg, v, k)
        assert avg == 2.0

    def test_matches_direct_mean(self):
        vals = np.random.default_rng(0).random(100)
        avg = math.nan
        for k, v in enumerate(vals, start=1):
            avg = ergodic_objective(avg, v, k)
        assert abs(avg - vals.mean()) <= 1e-13
