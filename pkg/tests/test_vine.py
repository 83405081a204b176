"""Vine assembly, sampling correctness, schemes, and the family grid."""

import math

import numpy as np
import pytest
from scipy.stats import kstest, spearmanr

from ica_sens.copulas import Copula, spearman_of, spearman_to_parameter
from ica_sens.data import IdentifiableMoments
from ica_sens.errors import ValidationError
from ica_sens.rng import RngSeed
from ica_sens.samplers import mvn_sample
from ica_sens.stats import energy_two_sample
from ica_sens.vine import (
    FREE_SLOTS,
    RhoAssignment,
    VineSpec,
    build_vine,
    dvine_sample,
    grid_compare,
    sample_rho_assignment,
    slot_feasible,
    to_canonical,
)


def implied_correlation(r12, r23, r34, p13_2, p24_3, p14_23):
    """Joint correlation matrix of an all-gaussian vine in chain order.

    Built by inverting the partial-correlation recursion one tree at a
    time; independent of the sampling code under test.
    """
    r13 = p13_2 * math.sqrt((1 - r12**2) * (1 - r23**2)) + r12 * r23
    r24 = p24_3 * math.sqrt((1 - r23**2) * (1 - r34**2)) + r23 * r34
    r12_3 = (r12 - r13 * r23) / math.sqrt((1 - r13**2) * (1 - r23**2))
    r14_3 = p14_23 * math.sqrt((1 - r12_3**2) * (1 - p24_3**2)) + r12_3 * p24_3
    r14 = r14_3 * math.sqrt((1 - r13**2) * (1 - r34**2)) + r13 * r34
    corr = np.eye(4)
    for (i, j), value in {(0, 1): r12, (1, 2): r23, (2, 3): r34,
                          (0, 2): r13, (1, 3): r24, (0, 3): r14}.items():
        corr[i, j] = corr[j, i] = value
    return corr


def standard_margins_spec(**slots):
    base = {name: Copula("independence") for name in
            ("c_t0s0", "c_s0s1", "c_s1t1", "c_t0s1_s0", "c_s0t1_s1", "c_t0t1_s0s1")}
    base.update(slots)
    return VineSpec(margins=((0.0, 1.0),) * 4, **base)


class TestRhoAssignment:
    def test_validation(self):
        with pytest.raises(ValidationError):
            RhoAssignment("diagonal", (0.1, 0.1, 0.1, 0.1))
        with pytest.raises(ValidationError):
            RhoAssignment("unrestricted", (0.1, 0.1))
        with pytest.raises(ValidationError):
            RhoAssignment("unrestricted", (1.0, 0.0, 0.0, 0.0))

    def test_none_marks_independence_slot(self):
        rho = RhoAssignment("conditional_independence", (0.5, None, None, 0.5))
        assert rho.values[1] is None


class TestSampleRhoAssignment:
    def test_unrestricted_ranges(self, seed):
        g = seed.generator(50)
        for _ in range(200):
            rho = sample_rho_assignment("unrestricted", g)
            assert all(-0.999 <= v <= 0.999 for v in rho.values)

    def test_positive_restricted_default_bounds(self, seed):
        g = seed.generator(51)
        for _ in range(200):
            rho = sample_rho_assignment("positive_restricted", g)
            assert all(0.1 <= v <= 0.9 for v in rho.values)

    def test_conditional_independence_forces_slots(self, seed):
        rho = sample_rho_assignment("conditional_independence", seed.generator(52))
        assert rho.values[FREE_SLOTS.index("t0s1_s0")] is None
        assert rho.values[FREE_SLOTS.index("s0t1_s1")] is None
        for name in ("s0s1", "t0t1_s0s1"):
            v = rho.values[FREE_SLOTS.index(name)]
            assert 0.1 <= v <= 0.9

    def test_unrestricted_component_means_near_zero(self, seed):
        g = seed.generator(53)
        draws = np.array([sample_rho_assignment("unrestricted", g).values for _ in range(10_000)])
        assert np.all(np.abs(draws.mean(axis=0)) < 0.03)

    def test_custom_bounds_and_validation(self, seed):
        rho = sample_rho_assignment("positive_restricted", seed.generator(54), rho_lo=0.4, rho_hi=0.6)
        assert all(0.4 <= v <= 0.6 for v in rho.values)
        with pytest.raises(ValidationError):
            sample_rho_assignment("positive_restricted", seed.generator(55), rho_lo=0.5, rho_hi=0.2)
        with pytest.raises(ValidationError):
            sample_rho_assignment("something_else", seed.generator(56))

    def test_deterministic(self, seed):
        a = sample_rho_assignment("unrestricted", seed.generator(57))
        b = sample_rho_assignment("unrestricted", seed.generator(57))
        assert a == b


class TestSlotFeasible:
    def test_sign_restrictions(self):
        assert not slot_feasible("clayton", -0.2)
        assert not slot_feasible("gumbel", -1e-3)
        assert slot_feasible("clayton", 0.2)
        assert slot_feasible("frank", -0.2)
        assert slot_feasible("gaussian", -0.2)

    def test_independence_slots(self):
        for fam in ("gaussian", "clayton", "gumbel", "frank", "independence"):
            assert slot_feasible(fam, None)
            assert slot_feasible(fam, 0.0)
        assert not slot_feasible("independence", 0.3)

    def test_beyond_calibrated_range(self):
        assert not slot_feasible("frank", 0.9995)
        assert not slot_feasible("gaussian", -0.9995)


class TestBuildVine:
    def test_data_slots_are_gaussian_at_estimates(self, vision_moments):
        rho = RhoAssignment("unrestricted", (0.3, -0.2, 0.1, 0.4))
        spec = build_vine(vision_moments, ("frank",) * 4, rho)
        assert spec.c_t0s0 == Copula("gaussian", vision_moments.rho_t0s0)
        assert spec.c_s1t1 == Copula("gaussian", vision_moments.rho_t1s1)

    def test_free_slots_hit_spearman_targets(self, vision_moments):
        rho = RhoAssignment("unrestricted", (0.3, -0.2, 0.45, 0.6))
        spec = build_vine(vision_moments, ("clayton", "frank", "gumbel", "gaussian"), rho)
        for cop, target in zip(spec.free_copulas(), rho.values):
            assert spearman_of(cop) == pytest.approx(target, abs=1e-6)

    def test_margins_in_chain_order(self, vision_moments):
        spec = build_vine(vision_moments, ("gaussian",) * 4,
                          RhoAssignment("unrestricted", (0.0, 0.0, 0.0, 0.0)))
        im = vision_moments
        want = [(im.mu_t0, im.var_t0), (im.mu_s0, im.var_s0),
                (im.mu_s1, im.var_s1), (im.mu_t1, im.var_t1)]
        for (mu, sd), (w_mu, w_var) in zip(spec.margins, want):
            assert mu == w_mu and sd == pytest.approx(math.sqrt(w_var), rel=1e-15)

    def test_infeasible_combination_rejected(self, vision_moments):
        rho = RhoAssignment("unrestricted", (-0.4, 0.2, 0.2, 0.2))
        with pytest.raises(ValidationError):
            build_vine(vision_moments, ("clayton", "gaussian", "gaussian", "gaussian"), rho)

    def test_precalibrated_params_bypass_solver(self, vision_moments):
        rho = RhoAssignment("unrestricted", (0.5, 0.0, 0.0, 0.0))
        theta = spearman_to_parameter("gumbel", 0.5)
        spec = build_vine(vision_moments, ("gumbel", "gaussian", "gaussian", "gaussian"),
                          rho, params=(theta, None, None, None))
        assert spec.c_s0s1 == Copula("gumbel", theta)

    def test_independence_family_slot(self, vision_moments):
        rho = RhoAssignment("conditional_independence", (0.5, None, None, 0.5))
        spec = build_vine(vision_moments, ("gaussian", "clayton", "gumbel", "gaussian"), rho)
        assert spec.c_t0s1_s0 == Copula("independence")
        assert spec.c_s0t1_s1 == Copula("independence")


class TestDvineSample:
    def test_fully_independent_model(self, seed):
        im = IdentifiableMoments(mu_t0=0.0, mu_t1=0.0, mu_s0=0.0, mu_s1=0.0,
                                 var_t0=1.0, var_t1=1.0, var_s0=1.0, var_s1=1.0,
                                 rho_t0s0=0.0, rho_t1s1=0.0, n0=50, n1=50)
        spec = build_vine(im, ("gaussian",) * 4, RhoAssignment("unrestricted", (0.0,) * 4))
        x = dvine_sample(spec, 100_000, seed.generator(60))
        corr = np.corrcoef(x, rowvar=False)
        assert np.max(np.abs(corr - np.eye(4))) < 0.02

    def test_all_gaussian_matches_implied_correlation(self, vision_moments, seed):
        rho = RhoAssignment("unrestricted", (0.45, -0.3, 0.6, 0.2))
        spec = build_vine(vision_moments, ("gaussian",) * 4, rho)
        params = [c.param for c in spec.free_copulas()]
        want = implied_correlation(vision_moments.rho_t0s0, params[0], vision_moments.rho_t1s1,
                                   params[1], params[2], params[3])
        x = dvine_sample(spec, 100_000, seed.generator(61))
        got = np.corrcoef(x, rowvar=False)
        assert np.max(np.abs(got - want)) < 0.02
        # dual route: direct multivariate-normal sampler at the implied matrix
        sd = np.array([s for _, s in spec.margins])
        mu = np.array([m for m, _ in spec.margins])
        y = mvn_sample(mu, want * np.outer(sd, sd), 100_000, seed.generator(62))
        assert np.max(np.abs(np.corrcoef(y, rowvar=False) - got)) < 0.02

    def test_margins_are_the_estimated_normals(self, vision_moments, seed):
        rho = RhoAssignment("unrestricted", (0.7, 0.5, -0.6, 0.3))
        spec = build_vine(vision_moments, ("clayton", "frank", "frank", "gumbel"), rho)
        x = dvine_sample(spec, 20_000, seed.generator(63))
        for j, (mu, sd) in enumerate(spec.margins):
            p = kstest((x[:, j] - mu) / sd, "norm").pvalue
            assert p > 0.001

    def test_clayton_slot_thickens_lower_tail(self, seed):
        theta = 4.0
        rho_s = spearman_of(Copula("clayton", theta))
        spec_c = standard_margins_spec(c_t0s0=Copula("clayton", theta))
        spec_g = standard_margins_spec(c_t0s0=Copula("gaussian", spearman_to_parameter("gaussian", rho_s)))
        n = 1_000_000
        q = 0.05
        xc = dvine_sample(spec_c, n, seed.generator(64))
        xg = dvine_sample(spec_g, n, seed.generator(65))
        z_q = -1.6448536269514722  # standard normal 5% quantile
        tail_c = np.mean((xc[:, 0] <= z_q) & (xc[:, 1] <= z_q)) / q
        tail_g = np.mean((xg[:, 0] <= z_q) & (xg[:, 1] <= z_q)) / q
        assert tail_c > tail_g + 0.05

    def test_tree_one_pair_hits_its_spearman(self, seed):
        spec = standard_margins_spec(c_s0s1=Copula("gumbel", spearman_to_parameter("gumbel", 0.6)))
        x = dvine_sample(spec, 200_000, seed.generator(66))
        r = spearmanr(x[:, 1], x[:, 2]).statistic
        assert abs(r - 0.6) < 0.01

    def test_to_canonical_reorders_columns(self, seed):
        spec = VineSpec(
            margins=((1.0, 1.0), (2.0, 1.0), (3.0, 1.0), (4.0, 1.0)),
            c_t0s0=Copula("independence"), c_s0s1=Copula("independence"),
            c_s1t1=Copula("independence"), c_t0s1_s0=Copula("independence"),
            c_s0t1_s1=Copula("independence"), c_t0t1_s0s1=Copula("independence"),
        )
        x = dvine_sample(spec, 50_000, seed.generator(67))
        means = to_canonical(x).mean(axis=0)
        np.testing.assert_allclose(means, [1.0, 4.0, 2.0, 3.0], atol=0.05)

    def test_determinism_and_validation(self, vision_moments, seed):
        spec = build_vine(vision_moments, ("gaussian",) * 4,
                          RhoAssignment("unrestricted", (0.2, 0.2, 0.2, 0.2)))
        a = dvine_sample(spec, 100, seed.generator(68))
        b = dvine_sample(spec, 100, seed.generator(68))
        np.testing.assert_array_equal(a, b)
        with pytest.raises(ValidationError):
            dvine_sample(spec, 0, seed.generator(69))


class TestGridCompare:
    def test_all_gaussian_cell_is_its_own_pair(self, vision_moments):
        res = grid_compare(vision_moments, "positive_restricted", 1, 500, RngSeed(77, 0))
        assert len(res.rows) == 256
        gauss = [r for r in res.rows if r.families == ("gaussian",) * 4]
        assert len(gauss) == 1
        assert gauss[0].diff == 0.0
        assert gauss[0].feasible

    def test_infeasible_cells_marked_not_aborted(self, vision_moments):
        res = grid_compare(vision_moments, "unrestricted", 2, 500, RngSeed(78, 0))
        bad = [r for r in res.rows if not r.feasible]
        good = [r for r in res.rows if r.feasible]
        assert bad and good
        assert all(math.isnan(r.ica_c) for r in bad)
        assert all(math.isfinite(r.ica_n) for r in bad)
        assert all(0.0 <= r.ica_c < 1.0 for r in good)

    def test_deterministic_across_thread_counts(self, vision_moments):
        one = grid_compare(vision_moments, "unrestricted", 3, 300, RngSeed(79, 0), threads=1)
        two = grid_compare(vision_moments, "unrestricted", 3, 300, RngSeed(79, 0), threads=2)
        assert one.assignments == two.assignments
        assert [(r.rho_id, r.families, r.feasible) for r in one.rows] == [
            (r.rho_id, r.families, r.feasible) for r in two.rows
        ]
        np.testing.assert_array_equal([r.ica_c for r in one.rows], [r.ica_c for r in two.rows])
        np.testing.assert_array_equal([r.ica_n for r in one.rows], [r.ica_n for r in two.rows])

    def test_conditional_independence_diffs_small(self, vision_moments):
        res = grid_compare(vision_moments, "conditional_independence", 2, 2000, RngSeed(80, 0))
        diffs = [abs(r.diff) for r in res.rows if r.feasible]
        assert len(diffs) == 512
        assert float(np.median(diffs)) < 0.05

    def test_validation(self, vision_moments):
        with pytest.raises(ValidationError):
            grid_compare(vision_moments, "unrestricted", 0, 500, RngSeed(81, 0))
        with pytest.raises(ValidationError):
            grid_compare(vision_moments, "unrestricted", 1, 500, RngSeed(81, 0), threads=0)
        with pytest.raises(ValidationError):
            grid_compare(vision_moments, "unrestricted", 1, 500, np.random.default_rng(3))


class TestIndistinguishability:
    def test_observable_margins_match_all_gaussian_cell(self, vision_moments, seed):
        combos = [
            ("clayton", "frank", "gumbel", "gaussian"),
            ("gumbel", "gumbel", "clayton", "frank"),
            ("frank", "gaussian", "frank", "clayton"),
        ]
        rejections = 0
        tests = 0
        for i, combo in enumerate(combos):
            g = seed.generator(90, i)
            rho = sample_rho_assignment("positive_restricted", g)
            spec_c = build_vine(vision_moments, combo, rho)
            spec_g = build_vine(vision_moments, ("gaussian",) * 4, rho)
            xc = dvine_sample(spec_c, 10_000, seed.generator(91, i))
            xg = dvine_sample(spec_g, 10_000, seed.generator(92, i))
            for cols in ([0, 1], [2, 3]):  # (t0, s0) and (s1, t1) margins
                _, p = energy_two_sample(xc[:, cols], xg[:, cols], seed.generator(93, i, cols[0]))
                tests += 1
                rejections += p < 0.05
        assert tests == 6
        assert rejections <= 2
