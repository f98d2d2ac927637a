"""Objective evaluation, gradients, particle descent, and parameter rules."""
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from gmblasso import (
    DiscreteMeasure,
    DomainBox,
    GroundTruthMixture,
    KernelContext,
    Location,
    ObjectiveContext,
    SolverConfig,
    acceptance_check,
    cpgd_solve,
    initial_measure,
    objective,
    objective_gradient,
    prune_merge,
    recommended_parameters,
    reparametrize,
    sample,
    semi_distance,
    weight_function,
)
from gmblasso.solver import objective_core

from conftest import random_locations, rel_error


@pytest.fixture()
def small_octx(ctx1):
    rng = np.random.default_rng(50)
    samples = rng.normal(0.0, 1.2, size=60)
    return ObjectiveContext(samples, 0.05, ctx1)


def _measure(rng, m, box):
    pts = random_locations(rng, m, box, margin=0.1)
    return DiscreteMeasure.from_arrays(0.05 + 0.4 * rng.random(m), pts)


class TestObjectiveContext:
    def test_promotes_1d_samples(self, ctx1):
        octx = ObjectiveContext(np.array([0.0, 1.0, 2.0]), 0.1, ctx1)
        assert octx.samples.shape == (3, 1)
        assert octx.n == 3

    @pytest.mark.parametrize("samples,kappa", [
        (np.zeros((0, 1)), 0.1),
        (np.array([[0.0, 1.0]]), 0.1),        # wrong dimension for d=1
        (np.array([math.nan]), 0.1),
        (np.array([0.0]), 0.0),
        (np.array([0.0]), -1.0),
    ])
    def test_rejects_invalid(self, ctx1, samples, kappa):
        with pytest.raises(ValueError):
            ObjectiveContext(samples, kappa, ctx1)

    def test_fidelity_constant_bruteforce(self, ctx1):
        from gmblasso import lambda_pair
        rng = np.random.default_rng(51)
        X = rng.normal(size=30)
        octx = ObjectiveContext(X, 0.1, ctx1)
        brute = np.mean([lambda_pair(np.array([a - b]), ctx1)
                         for a in X for b in X])
        assert octx.fidelity_constant == pytest.approx(brute, rel=1e-12)

    def test_fidelity_constant_blocked_sum_large(self, ctx1):
        # exceed one 2048 block to exercise the off-diagonal path
        rng = np.random.default_rng(52)
        X = rng.normal(size=3000)
        octx = ObjectiveContext(X, 0.1, ctx1)
        from gmblasso import lambda_pair
        lam = lambda_pair(X[:, None, None] - X[None, :, None], ctx1)
        assert octx.fidelity_constant == pytest.approx(float(lam.mean()),
                                                       rel=1e-12)


class TestObjective:
    def test_empty_measure_value(self):
        # single sample, tau = 1: J(0) = C/2 = lambda(0)/2 = (2 pi)^(-1/2)/2
        box = DomainBox((-5.0,), (5.0,), 1.0, 1.0)
        ctx = KernelContext(1, 1.0, box)
        octx = ObjectiveContext(np.array([0.0]), 0.1, ctx)
        assert objective(DiscreteMeasure.empty(), octx) == pytest.approx(
            0.5 * (2 * math.pi) ** -0.5, rel=1e-14)

    def test_kappa_linearity(self, ctx1):
        rng = np.random.default_rng(53)
        X = rng.normal(size=40)
        mu = _measure(rng, 4, ctx1.box)
        j1 = objective(mu, ObjectiveContext(X, 0.02, ctx1))
        j2 = objective(mu, ObjectiveContext(X, 0.11, ctx1))
        tv = float(np.sum(mu.weights))
        assert j2 - j1 == pytest.approx((0.11 - 0.02) * tv, rel=1e-10)

    def test_matches_quadrature(self, ctx1):
        # J = 1/2 int (smoothed empirical - fitted density)^2 + kappa |mu|
        rng = np.random.default_rng(54)
        X = rng.normal(0.0, 1.0, size=15)
        kappa = 0.07
        octx = ObjectiveContext(X, kappa, ctx1)
        mu = _measure(rng, 3, ctx1.box)
        tau = ctx1.tau

        w = mu.weights
        pts = mu.locations_array()
        amp = w / weight_function(pts, tau)

        def emp(z):
            v = tau**2 / 2
            return np.mean(np.exp(-((z - X) ** 2) / (2 * v))) \
                / math.sqrt(2 * math.pi * v)

        def fit(z):
            v = pts[:, 1] ** 2 + tau**2 / 2
            return float(np.sum(
                amp * np.exp(-((z - pts[:, 0]) ** 2) / (2 * v))
                / np.sqrt(2 * math.pi * v)))

        val, _ = quad(lambda z: (emp(z) - fit(z)) ** 2, -40, 40,
                      limit=400, epsabs=1e-13, epsrel=1e-11)
        expected = 0.5 * val + kappa * float(np.sum(w))
        assert objective(mu, octx) == pytest.approx(expected, rel=1e-6)

    def test_core_plus_constant(self, small_octx):
        rng = np.random.default_rng(55)
        mu = _measure(rng, 5, small_octx.ctx.box)
        assert objective(mu, small_octx) == pytest.approx(
            objective_core(mu, small_octx)
            + 0.5 * small_octx.fidelity_constant, rel=1e-14)


class TestGradient:
    def test_matches_fd(self, small_octx):
        rng = np.random.default_rng(56)
        mu = _measure(rng, 4, small_octx.ctx.box)
        gw, gx = objective_gradient(mu, small_octx)
        w0 = mu.weights
        p0 = mu.locations_array()
        h = 1e-6

        for j in range(mu.s):
            wp, wm = w0.copy(), w0.copy()
            wp[j] += h
            wm[j] -= h
            fd = (objective_core(DiscreteMeasure.from_arrays(wp, p0), small_octx)
                  - objective_core(DiscreteMeasure.from_arrays(wm, p0),
                                   small_octx)) / (2 * h)
            assert gw[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)

        for j in range(mu.s):
            for c in range(2):
                pp, pm = p0.copy(), p0.copy()
                pp[j, c] += h
                pm[j, c] -= h
                fd = (objective_core(DiscreteMeasure.from_arrays(w0, pp),
                                     small_octx)
                      - objective_core(DiscreteMeasure.from_arrays(w0, pm),
                                       small_octx)) / (2 * h)
                assert gx[j, c] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_zero_weights(self, small_octx):
        # at w = 0 the weight gradient reduces to kappa - witness and the
        # position gradient vanishes (conic scaling by omega_j)
        from gmblasso import data_witness
        rng = np.random.default_rng(57)
        pts = random_locations(rng, 3, small_octx.ctx.box)
        mu = DiscreteMeasure.from_arrays(np.zeros(3), pts)
        gw, gx = objective_gradient(mu, small_octx)
        wit = data_witness(pts, small_octx.samples, small_octx.ctx)
        np.testing.assert_allclose(gw, small_octx.kappa - wit, rtol=1e-12)
        np.testing.assert_allclose(gx, 0.0, atol=1e-15)

    def test_identical_atoms_identical_rows(self, small_octx):
        pts = np.array([[0.5, 1.0], [0.5, 1.0]])
        mu = DiscreteMeasure.from_arrays(np.array([0.2, 0.2]), pts)
        gw, gx = objective_gradient(mu, small_octx)
        assert gw[0] == pytest.approx(gw[1], rel=1e-14)
        np.testing.assert_allclose(gx[0], gx[1], rtol=1e-14)

    def test_empty_measure(self, small_octx):
        gw, gx = objective_gradient(DiscreteMeasure.empty(), small_octx)
        assert gw.shape == (0,) and gx.shape == (0, 0)


class TestPruneMerge:
    def test_drops_dust(self, ctx1):
        cfg = SolverConfig(prune_threshold=0.01, merge_radius=0.05)
        mu = DiscreteMeasure.from_arrays(
            np.array([0.5, 1e-4]), np.array([[0.0, 1.0], [2.0, 1.0]]))
        out = prune_merge(mu, cfg, ctx1)
        assert out.s == 1
        assert out.weights[0] == pytest.approx(0.5)

    def test_merges_close_atoms(self, ctx1):
        cfg = SolverConfig(prune_threshold=1e-9, merge_radius=0.3)
        mu = DiscreteMeasure.from_arrays(
            np.array([0.3, 0.1]), np.array([[0.0, 1.0], [0.05, 1.0]]))
        out = prune_merge(mu, cfg, ctx1)
        assert out.s == 1
        assert out.weights[0] == pytest.approx(0.4, rel=1e-12)
        # merged mean is the weight-shared average of the t coordinates
        assert out.locations[0].t[0] == pytest.approx(0.0125, abs=1e-10)

    def test_keeps_separated_atoms(self, ctx1):
        cfg = SolverConfig(prune_threshold=1e-9, merge_radius=0.3)
        mu = DiscreteMeasure.from_arrays(
            np.array([0.3, 0.1]), np.array([[-2.0, 1.0], [2.0, 1.0]]))
        assert prune_merge(mu, cfg, ctx1).s == 2

    def test_empty_passthrough(self, ctx1):
        cfg = SolverConfig()
        mu = DiscreteMeasure.empty()
        assert prune_merge(mu, cfg, ctx1).s == 0


class TestInitialMeasure:
    def test_in_box_positive_weights(self, small_octx):
        cfg = SolverConfig(max_particles=8)
        mu = initial_measure(small_octx, cfg)
        assert mu.s == 8
        assert np.all(mu.weights > 0)
        for loc in mu.locations:
            assert small_octx.ctx.box.contains(loc)
        # u starts at the geometric mid-scale of the box
        u0 = math.sqrt(small_octx.ctx.box.u_min * small_octx.ctx.box.u_max)
        for loc in mu.locations:
            assert loc.u[0] == pytest.approx(u0)

    def test_covers_both_clusters(self, sep_mixture, sep_ctx):
        # farthest-first subset selection must place atoms in every mode
        for seed in range(10):
            rng = np.random.default_rng(seed)
            X = sample(sep_mixture, 400, rng)
            octx = ObjectiveContext(X, 0.05, sep_ctx)
            mu = initial_measure(octx, SolverConfig(max_particles=8), rng)
            t = mu.locations_array()[:, 0]
            assert np.any(t < 0) and np.any(t > 0)

    def test_more_particles_than_samples(self, ctx1):
        octx = ObjectiveContext(np.array([0.0, 1.0]), 0.05, ctx1)
        mu = initial_measure(octx, SolverConfig(max_particles=8))
        assert mu.s == 8

    def test_deterministic_given_seed(self, small_octx):
        cfg = SolverConfig(max_particles=6, seed=123)
        a = initial_measure(small_octx, cfg)
        b = initial_measure(small_octx, cfg)
        np.testing.assert_array_equal(a.locations_array(), b.locations_array())


class TestDescent:
    def test_monotone_trace(self, small_octx):
        cfg = SolverConfig(iterations=60, record_trace=True)
        res = cpgd_solve(initial_measure(small_octx, cfg), small_octx, cfg)
        vals = [row.objective for row in res.trace]
        assert len(vals) > 0
        assert np.all(np.diff(vals) <= 1e-12)
        assert not res.aborted

    def test_rejects_out_of_box_init(self, small_octx):
        mu = DiscreteMeasure.from_arrays(np.array([0.1]), np.array([[9.0, 1.0]]))
        with pytest.raises(ValueError):
            cpgd_solve(mu, small_octx, SolverConfig())

    def test_aborts_on_non_finite(self, small_octx, monkeypatch):
        def bad_witness(x, samples, ctx, with_gradient=False):
            P = np.atleast_2d(np.asarray(x, float))
            val = np.full(P.shape[0], math.nan)
            if with_gradient:
                return val, np.full((P.shape[0], P.shape[1]), math.nan)
            return val

        monkeypatch.setattr("gmblasso.solver.data_witness", bad_witness)
        cfg = SolverConfig(iterations=10)
        mu = DiscreteMeasure.from_arrays(np.array([0.1]), np.array([[0.0, 1.0]]))
        res = cpgd_solve(mu, small_octx, cfg)
        assert res.aborted
        assert "non-finite" in res.abort_reason

    def test_single_component_recovery(self):
        box = DomainBox((-5.0,), (5.0,), 0.5, 2.0)
        ctx = KernelContext(1, 0.5, box)
        mu0 = DiscreteMeasure.from_arrays(np.array([1.0]), np.array([[0.3, 1.1]]))
        mix = GroundTruthMixture(mu0, ctx)
        rng = np.random.default_rng(60)
        X = sample(mix, 4000, rng)
        rec = recommended_parameters(4000, 1, ctx.tau, box)
        octx = ObjectiveContext(X, rec.kappa_agnostic, ctx)
        cfg = SolverConfig(iterations=400, step_w=4.0, step_x=8.0,
                           merge_radius=0.605, merge_period=10,
                           prune_threshold=rec.kappa_agnostic / 2,
                           record_trace=False)
        res = cpgd_solve(initial_measure(octx, cfg, rng), octx, cfg)
        assert not res.aborted
        assert res.measure.s == 1
        assert semi_distance(res.measure.locations[0],
                             mu0.locations[0], ctx) < 0.1
        amp = reparametrize(res.measure, ctx.tau, "from_omega")
        assert amp.weights[0] == pytest.approx(1.0, abs=0.1)
        assert acceptance_check(res.measure, mix.omega_measure(), octx)

    def test_max_particles_one_on_two_modes(self, sep_mixture, sep_ctx):
        rng = np.random.default_rng(61)
        X = sample(sep_mixture, 300, rng)
        octx = ObjectiveContext(X, 0.05, sep_ctx)
        cfg = SolverConfig(max_particles=1, iterations=40, record_trace=False)
        res = cpgd_solve(initial_measure(octx, cfg, rng), octx, cfg)
        assert not res.aborted
        assert res.measure.s <= 1

    def test_converges_flag_and_final_prune(self, small_octx):
        # prune at half the regularization scale so dust atoms cannot
        # treadmill below the convergence tolerance forever
        cfg = SolverConfig(iterations=2000, step_w=2.0, step_x=4.0,
                           prune_threshold=small_octx.kappa / 2,
                           merge_period=10, tolerance=1e-9,
                           record_trace=False)
        res = cpgd_solve(initial_measure(small_octx, cfg), small_octx, cfg)
        assert res.converged
        assert res.iterations_run < 2000
        assert np.all(res.measure.weights >= small_octx.kappa / 2)


class TestAcceptanceCheck:
    def test_accepts_optimized(self, small_octx):
        cfg = SolverConfig(iterations=150, record_trace=False)
        res = cpgd_solve(initial_measure(small_octx, cfg), small_octx, cfg)
        start = initial_measure(small_octx, cfg)
        assert acceptance_check(res.measure, start, small_octx)

    def test_rejects_worse_measure(self, small_octx):
        good = DiscreteMeasure.from_arrays(np.array([0.2]),
                                           np.array([[0.0, 1.0]]))
        bad = DiscreteMeasure.from_arrays(np.array([50.0]),
                                          np.array([[0.0, 1.0]]))
        assert not acceptance_check(bad, good, small_octx)


class TestRecommendedParameters:
    def test_reference_values(self):
        box = DomainBox((-5.0,), (5.0,), 1.0, 1.0)
        rec = recommended_parameters(100, 1, 1.0, box, s_hint=2)
        assert rec.rho_n == pytest.approx(0.126330, abs=1e-5)
        assert rec.kappa_agnostic == pytest.approx(0.089326, abs=1e-5)
        assert rec.kappa_s_dependent == pytest.approx(rec.rho_n / 2.0, rel=1e-12)
        assert rec.kappa_small_reg == pytest.approx(rec.rho_n**2, rel=1e-12)

    def test_rho_formula(self):
        box = DomainBox((-5.0, -5.0), (5.0, 5.0), 0.5, 2.0)
        rec = recommended_parameters(5000, 2, 0.5, box)
        expected = math.sqrt(4.0 / ((2 * math.pi) * 0.25 * 5000))
        assert rec.rho_n == pytest.approx(expected, rel=1e-14)
        assert rec.kappa_s_dependent is None

    def test_tau_prediction_rule(self):
        box = DomainBox((-5.0,), (5.0,), 0.7, 2.0)
        rec = recommended_parameters(1000, 1, 0.5, box)
        assert rec.tau_prediction == pytest.approx(
            math.sqrt(2.0) * 0.7 / math.sqrt(math.log(1000)), rel=1e-14)

    def test_rejects_tiny_n(self):
        box = DomainBox((-5.0,), (5.0,), 1.0, 1.0)
        with pytest.raises(ValueError):
            recommended_parameters(1, 1, 1.0, box)


class TestSolverConfig:
    def test_rejects_invalid(self):
        with pytest.raises(ValueError):
            SolverConfig(max_particles=0)
        with pytest.raises(ValueError):
            SolverConfig(step_w=0.0)
        with pytest.raises(ValueError):
            SolverConfig(step_x=-1.0)

    def test_default_merge_radius_scales_with_d(self):
        from gmblasso.solver import _resolved_merge_radius
        cfg = SolverConfig()
        assert _resolved_merge_radius(cfg, 1) == pytest.approx(0.05 * 0.3025)
        assert _resolved_merge_radius(cfg, 4) == pytest.approx(
            0.05 * 0.3025 / 2.0)
        assert _resolved_merge_radius(SolverConfig(merge_radius=0.7), 4) == 0.7
