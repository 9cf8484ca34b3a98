import numpy as np
import pytest
from hypothesis import given, strategies as st

from missnet import _kernels
from missnet.diffusion import (DiffusionConfig, DivergenceError, NetworkState,
                               atc_standard_iteration, matc_iteration, network_step, run_batch,
                               run_experiment, run_reference, update_noise_estimators)
from missnet.scenario import load_scenario, spec_from_mapping
from missnet.theory import predict, step_size_bound

BACKENDS = ["numpy"] + (["numba"] if _kernels._HAVE_NUMBA else [])


def cfg1(mu=0.1, p_hat=0.3, alphas=(0.1, 0.1, 0.1), m=1, n=1, sel=None, **kw):
    sel = np.ones((n, m)) if sel is None else sel
    return DiffusionConfig(mu=np.full(n, mu), p_hat=np.full(n, p_hat), alphas=alphas, sel=sel, **kw)


def single(w, rhat=None, se=0.0, sx=0.0):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    rhat = np.zeros_like(w) if rhat is None else np.atleast_2d(rhat)
    return NetworkState(w, rhat, np.array([se]), np.array([sx]))


class TestSingleSteps:
    def test_zero_step_size(self):
        s = single([[0.3, -1.0]])
        out = atc_standard_iteration(s, np.array([[1.0, 2.0]]), np.array([5.0]), np.eye(1),
                                     cfg1(mu=0.0, m=2))
        np.testing.assert_array_equal(out.w, s.w)

    def test_atc_hand_arithmetic(self):
        out = atc_standard_iteration(single([0.0]), np.array([[2.0]]), np.array([2.0]),
                                     np.eye(1), cfg1(mu=0.1))
        assert out.w[0, 0] == pytest.approx(0.4)

    def test_matc_hand_arithmetic(self):
        out = matc_iteration(single([1.0], sx=0.1), np.array([[0.0]]), np.array([0.0]),
                             np.eye(1), cfg1(mu=0.1, p_hat=0.3))
        assert out.w[0, 0] == pytest.approx(1.003)

    def test_matc_reduces_to_atc(self):
        rng = np.random.default_rng(0)
        a = np.array([[0.7, 0.4], [0.3, 0.6]])
        s = NetworkState(rng.standard_normal((2, 3)), np.ones((2, 3)), np.ones(2), np.zeros(2))
        ub, d = rng.standard_normal((2, 3)), rng.standard_normal(2)
        c = cfg1(n=2, m=3)
        np.testing.assert_array_equal(matc_iteration(s, ub, d, a, c).w,
                                      atc_standard_iteration(s, ub, d, a, c).w)

    def test_synchronous_combination_trace(self):
        a = np.array([[0.7, 0.4], [0.3, 0.6]])
        c = cfg1(mu=0.5, n=2, m=1)
        s = NetworkState(np.array([[1.0], [2.0]]), np.zeros((2, 1)), np.zeros(2), np.zeros(2))
        ub = np.array([[1.0], [-1.0]])
        d = np.array([0.0, 1.0])
        # phi_1 = 1 + 0.5*1*(0-1) = 0.5, phi_2 = 2 + 0.5*(-1)*(1+2) = 0.5
        out = atc_standard_iteration(s, ub, d, a, c)
        np.testing.assert_allclose(out.w[:, 0], [0.7 * 0.5 + 0.3 * 0.5, 0.4 * 0.5 + 0.6 * 0.5])
        ub2 = np.array([[2.0], [0.0]])
        d2 = np.array([3.0, 0.0])
        # phi_1 = 0.5 + 0.5*2*(3-1) = 2.5, phi_2 = 0.5
        out2 = atc_standard_iteration(out, ub2, d2, a, c)
        np.testing.assert_allclose(out2.w[:, 0], [0.7 * 2.5 + 0.3 * 0.5, 0.4 * 2.5 + 0.6 * 0.5])

    def test_non_finite_aborts(self):
        with pytest.raises(DivergenceError):
            atc_standard_iteration(single([np.inf]), np.array([[1.0]]), np.array([0.0]),
                                   np.eye(1), cfg1())


class TestEstimators:
    def test_frozen_filters(self):
        s = single([[1.0, 2.0]], rhat=[[0.3, 0.4]], se=0.2, sx=0.05)
        out = update_noise_estimators(s, np.array([[3.0, 1.0]]), np.array([0.5]),
                                      cfg1(alphas=(0.0, 0.0, 0.0), m=2, feasibility_clamp=False),
                                      s.w)
        np.testing.assert_array_equal(out.r_ubar_hat, s.r_ubar_hat)
        np.testing.assert_array_equal(out.sigma_e_hat, s.sigma_e_hat)
        np.testing.assert_array_equal(out.sigma_xi2_hat, s.sigma_xi2_hat)

    def test_negative_numerator_decays(self):
        # e = 0 and a large R_hat make the numerator negative, so g = 0
        s = single([1.0], rhat=[5.0], se=0.0, sx=0.2)
        c = cfg1(alphas=(0.1, 0.1, 0.25))
        for k in range(1, 5):
            s = update_noise_estimators(s, np.array([[1.0]]), np.array([1.0]), c, s.w)
            assert s.sigma_xi2_hat[0] == pytest.approx(0.2 * 0.75 ** k)

    def test_formula(self):
        s = single([[2.0, 1.0]], rhat=[[1.0, 1.0]], se=1.0, sx=0.0)
        c = cfg1(alphas=(0.5, 0.5, 0.5), p_hat=0.2, m=2, feasibility_clamp=False)
        ub, d = np.array([[1.0, 3.0]]), np.array([7.0])
        out = update_noise_estimators(s, ub, d, c, s.w)
        rhat = 0.5 * np.array([1.0, 1.0]) + 0.5 * ub[0] ** 2
        e = 7.0 - (2 + 3)
        se = 0.5 + 0.5 * e * e
        g = (0.8 * se - 0.2 * np.sum(rhat * [4.0, 1.0])) / (0.2 * 0.6 * 5.0)
        assert out.sigma_xi2_hat[0] == pytest.approx(0.5 * max(g, 0.0))

    def test_guard_skips_update(self):
        s = single([[0.0, 0.0]], sx=0.3)
        out = update_noise_estimators(s, np.array([[1.0, 1.0]]), np.array([5.0]),
                                      cfg1(m=2, feasibility_clamp=False), s.w)
        assert out.sigma_xi2_hat[0] == 0.3
        assert out.sigma_e_hat[0] > 0          # the moment trackers still run

    def test_feasibility_cap(self):
        s = single([[1e-3]], rhat=[[1.0]], se=100.0, sx=0.0)
        out = update_noise_estimators(s, np.array([[1.0]]), np.array([10.0]),
                                      cfg1(alphas=(0.5, 0.5, 1.0 - 1e-12)), s.w)
        assert out.sigma_xi2_hat[0] == pytest.approx(out.r_ubar_hat[0, 0] / 0.3)

    @given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=40),
           st.floats(0.01, 0.49), st.floats(0.0, 0.99))
    def test_clamp_nonnegative(self, stream, p_hat, a3):
        s = single([[0.5]])
        c = cfg1(alphas=(0.2, 0.2, a3), p_hat=p_hat)
        for i, (u, d) in enumerate(stream):
            s = network_step(s, np.array([[u]]), np.array([d]), np.eye(1), c, i)
            assert s.sigma_xi2_hat[0] >= 0.0
            assert np.all(s.r_ubar_hat >= 0)

    def test_smoothing_filter_mean(self):
        # frozen w: E[R_hat(i)] = (1 - (1 - a)^i) R_ubar from a zero start
        runs, steps, a = 10_000, 40, 0.05
        rng = np.random.default_rng(5)
        r_ubar = 0.706
        rhat = np.zeros(runs)
        for _ in range(steps):
            u = np.where(rng.random(runs) < 0.3, rng.standard_normal(runs) * np.sqrt(0.02),
                         rng.standard_normal(runs))
            rhat = (1 - a) * rhat + a * u * u
        expect = (1 - (1 - a) ** steps) * r_ubar
        assert abs(rhat.mean() - expect) < 3 * rhat.std() / np.sqrt(runs)


class TestKernel:
    @pytest.mark.parametrize("name", ["generic", "household", "mental_health"])
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_matches_reference(self, name, backend):
        spec = load_scenario(name)
        T = 120
        sq, sx, state = run_reference(spec, np.random.default_rng(9), horizon=T)
        rec = run_batch(spec, [np.random.default_rng(9)], horizon=T, backend=backend)
        np.testing.assert_allclose(rec.sqerr[0], sq, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(rec.sigma_xi2_hat[0], sx, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(rec.w_final[0], state.w, rtol=1e-10, atol=1e-14)

    @pytest.mark.skipif(not _kernels._HAVE_NUMBA, reason="numba missing")
    def test_backends_agree(self, generic):
        a = run_batch(generic, [np.random.default_rng(i) for i in range(4)], horizon=3000,
                      backend="numpy")
        b = run_batch(generic, [np.random.default_rng(i) for i in range(4)], horizon=3000,
                      backend="numba")
        np.testing.assert_allclose(a.sqerr, b.sqerr, rtol=1e-9)
        np.testing.assert_allclose(a.sigma_xi2_hat, b.sigma_xi2_hat, rtol=1e-9, atol=1e-15)

    def test_batch_composition_irrelevant(self, generic):
        alone = run_batch(generic, [np.random.default_rng(2)], horizon=500)
        mixed = run_batch(generic, [np.random.default_rng(i) for i in (1, 2, 3)], horizon=500)
        np.testing.assert_array_equal(alone.sqerr[0], mixed.sqerr[1])

    def test_chunking_irrelevant(self, generic):
        a = run_batch(generic, [np.random.default_rng(4)], horizon=700, chunk=700)
        b = run_batch(generic, [np.random.default_rng(4)], horizon=700, chunk=700)
        np.testing.assert_array_equal(a.sqerr, b.sqerr)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_reduction_bit_identical(self, generic, backend):
        frozen = generic.replace(alphas=(0.01, 0.01, 0.0))          # sigma_xi2_hat stays 0
        plain = generic.replace(correction_enabled=False)
        rngs = lambda: [np.random.default_rng(i) for i in range(3)]
        a = run_batch(frozen, rngs(), backend=backend)
        b = run_batch(plain, rngs(), backend=backend)
        assert np.array_equal(a.sqerr, b.sqerr) and np.array_equal(a.w_final, b.w_final)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_divergence_flagged(self, backend):
        spec = load_scenario("generic").replace(step_sizes=(3.0,) * 7)
        rec = run_batch(spec, [np.random.default_rng(0), np.random.default_rng(1)],
                        horizon=400, backend=backend)
        assert rec.diverged.all()
        assert np.isnan(rec.sqerr[:, -1]).all() and np.isnan(rec.w_final).all()

    def test_empty_horizon(self, generic):
        rec = run_experiment(generic, None, np.random.default_rng(0), horizon=0)
        assert rec.sqerr.shape == (1, 0, 7) and not rec.diverged.any()


def test_uncensored_lms_floor():
    spec = spec_from_mapping(dict(n_agents=1, w_true=[1.0], r_u_diag=[2.0], sigma_v2=0.01,
                                  p=0.0, p_hat=0.3, xi_kind="gaussian", xi_params=[0.1],
                                  topology="isolated", mu=0.01, alpha=0.01, horizon=10_000))
    rec = run_batch(spec, [np.random.default_rng(i) for i in range(100)])
    sim = np.mean(rec.sqerr[:, 5000:])
    th = predict(spec).msd_network
    assert th == pytest.approx(0.01 * 0.01 / 2, rel=1e-12)
    assert sim == pytest.approx(th, rel=0.1)


def test_p_zero_network_reaches_theory_floor(generic):
    spec = generic.replace(p=0.0)
    rec = run_batch(spec, [np.random.default_rng(i) for i in range(100)])
    sim = 10 * np.log10(np.mean(rec.sqerr[:, -200:]))
    assert abs(sim - predict(spec).msd_network_db) < 1.0


def test_matc_beats_biased_atc_generic(generic):
    # learning-curve ordering: with correction the steady state sits below plain ATC
    rngs = lambda: [np.random.default_rng(i) for i in range(100)]
    m = run_batch(generic, rngs())
    a = run_batch(generic.replace(correction_enabled=False), rngs())
    assert np.mean(m.sqerr[:, -200:]) < np.mean(a.sqerr[:, -200:])
    # before the warm start ends both are identical
    np.testing.assert_array_equal(m.sqerr[:, :50], a.sqerr[:, :50])


def test_step_size_example():
    assert step_size_bound([1, 1.6, 0.8, 0.95, 1.2], 0.3) == pytest.approx(2 / (0.7 * 1.6))
