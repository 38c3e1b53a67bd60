import math

import numpy as np
import pytest

from adjrobust.ar_core import (
    aipw_pseudo,
    ar_estimate_aipw,
    bias_correction,
    compute_nu,
    contrast_panel,
    normal_quantile,
    plugin_variance,
)
from adjrobust.data import AdjustmentSpec, Method
from adjrobust.errors import Infeasible, PropensityOutOfRange, SingularGram
from adjrobust.nuisance import crossfit
from adjrobust.simlab import gen_example, default_spec

from conftest import MILD_MEDIATOR_TARGET, mild_mediator, random_table


def expit(z):
    return 1 / (1 + np.exp(-z))


class TestAipwPseudo:
    def test_zero_residual(self):
        assert aipw_pseudo(2.0, 1, 0.5, 2.0, 0.3) == pytest.approx(1.5)

    def test_arithmetic(self):
        assert aipw_pseudo(3.0, 0, 1.0, 2.0, 0.5) == pytest.approx(-3.0)

    @pytest.mark.parametrize("e", [0.0, 1.0, -0.1])
    def test_propensity_range(self, e):
        with pytest.raises(PropensityOutOfRange):
            aipw_pseudo(1.0, 1, 0.0, 0.0, e)

    def test_oracle_nuisances_are_unbiased_on_two_confounders(self):
        # one draw has sd ~0.1 even with the propensity clipped, so average 100;
        # clipping is harmless here because the outcome means are exact
        means = []
        for seed in range(100):
            table, _ = gen_example("twoconf", 2000, seed)
            x1, x2 = table.x.T
            e = np.clip(expit(-(3 * x1 + 3 * x2)), 0.01, 0.99)
            psi = aipw_pseudo(table.y, table.a, 2 * x1 + 3 * x2, 1 + 3 * x1 + 3 * x2, e)
            means.append(psi.mean())
        assert np.mean(means) == pytest.approx(1.0, abs=0.03)


class TestNu:
    def test_orthogonal_right_hand_side(self):
        g = np.array([1.0, -1.0, 1.0, -1.0])
        tau = np.array([2.0, 2.0, 5.0, 5.0])  # tau - tau_r is orthogonal to g
        np.testing.assert_allclose(compute_nu(np.ones(4), g, tau, 3.5), [1.0, 0.0], atol=1e-15)

    def test_five_row_hand_example(self):
        w = [1.0, 2.0, 0.5, 1.0, 0.5]
        g = [1.0, -1.0, 2.0, 0.0, -2.0]
        tau = [3.0, 1.0, 2.0, 0.0, 4.0]
        tau_r = 2.0
        num = sum(wi * gi * (ti - tau_r) for wi, gi, ti in zip(w, g, tau))
        den = sum(wi * gi * gi for wi, gi in zip(w, g))
        nu = compute_nu(np.array(w), np.array(g), np.array(tau), tau_r)
        assert nu[1] == pytest.approx(num / den, abs=1e-14)
        assert nu.sum() == pytest.approx(1.0, abs=1e-15)

    def test_duplicated_rows(self):
        rng = np.random.default_rng(0)
        w, g, tau = rng.exponential(size=9), rng.standard_normal((9, 2)), rng.standard_normal(9)
        a = compute_nu(w, g, tau, 0.3)
        b = compute_nu(np.tile(w, 2), np.tile(g, (2, 1)), np.tile(tau, 2), 0.3)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_zero_contrast_column_gets_zero_weight(self):
        g = np.column_stack([np.zeros(6), np.arange(6.0) - 2.5])
        nu = compute_nu(np.ones(6), g, np.arange(6.0), 1.0)
        assert nu[1] == 0.0 and nu.sum() == pytest.approx(1.0)

    def test_collinear_columns_raise(self):
        g = np.arange(6.0) - 2.5
        with pytest.raises(SingularGram):
            compute_nu(np.ones(6), np.column_stack([g, g]), np.arange(6.0), 1.0)


class TestBiasCorrection:
    def test_zero_lambda(self):
        rng = np.random.default_rng(1)
        args = rng.standard_normal((5, 1)), rng.standard_normal((5, 1)), rng.standard_normal((5, 2))
        assert bias_correction(np.ones(5), np.zeros(1), *args, [0.5, 0.5], 0.2) == 0.0

    def test_exact_projection(self):
        g = np.random.default_rng(2).standard_normal((5, 1))
        assert bias_correction(np.ones(5), [0.7], g, g, np.ones((5, 2)), [0.5, 0.5], 0.0) == 0.0

    def test_four_unit_hand_example(self):
        w = [2.0, 2 / 3, 2 / 3, 2 / 3]
        lam = -0.5493
        g = [-1.0, 1.0, 1.0, 1.0]
        delta = [-0.5, 1.5, 0.7, 1.2]
        proj = [[0.2, 1.0], [1.1, 0.4], [0.9, -0.3], [1.4, 0.6]]
        nu = [0.4, 0.6]
        tau_r = 0.3
        direct = 0.0
        for wi, gi, di, (p1, p2) in zip(w, g, delta, proj):
            direct += wi * (di - gi) * (nu[0] * p1 + nu[1] * p2 - tau_r)
        direct = lam * direct / 4
        got = bias_correction(np.array(w), [lam], np.array(g), np.array(delta), np.array(proj), nu, tau_r)
        assert got == pytest.approx(direct, abs=1e-12)


class TestPluginVariance:
    def test_identical_scores(self):
        n = 7
        v = plugin_variance(np.ones(n), [0.0], np.zeros((n, 1)), np.full((n, 2), 3.0), np.zeros((n, 1)), np.zeros((n, 2)), [1.0, 0.0], 3.0)
        assert v == 0.0

    def test_no_tilt_reduces_to_aipw_variance(self):
        rng = np.random.default_rng(3)
        tau = rng.standard_normal((40, 2))
        v = plugin_variance(np.ones(40), [0.0], np.zeros((40, 1)), tau, rng.standard_normal((40, 1)), tau, [1.0, 0.0], tau[:, 0].mean())
        assert v == pytest.approx(tau[:, 0].var(), rel=1e-12)


def test_normal_quantile():
    assert normal_quantile(0.05) == pytest.approx(1.959963984540054, abs=1e-12)
    assert normal_quantile(0.1) == pytest.approx(1.6448536269514722, abs=1e-12)
    with pytest.raises(ValueError):
        normal_quantile(1.5)


class TestEstimate:
    def test_identical_sets_reduce_to_plain_aipw(self, table):
        spec = AdjustmentSpec.from_sets([[0, 1], [0, 1]])
        fits = crossfit(table, spec, seed=1)
        est = ar_estimate_aipw(table, spec, fits)
        plain = aipw_pseudo(table.y, table.a, fits.mu0[:, 0], fits.mu1[:, 0], fits.e[:, 0]).mean()
        assert est.estimate == pytest.approx(plain, abs=1e-6)
        np.testing.assert_array_equal(est.weights, 1.0)
        assert est.method is Method.AIPW_CROSSFIT
        assert est.bias_correction == 0.0

    def test_invariants_after_converged_tilt(self):
        table = mild_mediator(600, 5)
        spec = default_spec()
        fits = crossfit(table, spec, seed=2)
        panel = contrast_panel(table, fits)
        est = ar_estimate_aipw(table, spec, fits, panel=panel)
        assert est.tilt.converged
        assert est.ci_lo <= est.estimate <= est.ci_hi and est.variance >= 0
        assert est.nu.sum() == pytest.approx(1.0, abs=1e-10)
        reweighted_proj = (est.weights[:, None] * panel.proj_tau).mean(axis=0)
        assert abs(reweighted_proj[0] - reweighted_proj[1]) <= 1e-8
        # raw reweighted AIPW estimates agree only up to sampling noise
        assert abs(est.per_set_reweighted[0] - est.per_set_reweighted[1]) <= 3 / math.sqrt(table.n)

    def test_outcome_shift_and_scale(self):
        table = random_table(6, n=400)
        spec = default_spec()
        base = ar_estimate_aipw(table, spec, crossfit(table, spec, seed=3))
        shifted = table.with_outcome(table.y + 10.0)
        est = ar_estimate_aipw(shifted, spec, crossfit(shifted, spec, seed=3))
        assert est.estimate == pytest.approx(base.estimate, abs=1e-9)
        scaled = table.with_outcome(-2.5 * table.y)
        est = ar_estimate_aipw(scaled, spec, crossfit(scaled, spec, seed=3))
        assert est.estimate == pytest.approx(-2.5 * base.estimate, abs=1e-9)
        assert math.sqrt(est.variance) == pytest.approx(2.5 * math.sqrt(base.variance), abs=1e-9)

    def test_deterministic(self):
        table = random_table(7, n=300)
        spec = default_spec()
        a = ar_estimate_aipw(table, spec, crossfit(table, spec, seed=9))
        b = ar_estimate_aipw(table, spec, crossfit(table, spec, seed=9))
        assert (a.estimate, a.variance, a.ci) == (b.estimate, b.variance, b.ci)

    def test_two_confounders_is_infeasible(self):
        table, _ = gen_example("twoconf", 1000, 4)
        spec = default_spec()
        with pytest.raises(Infeasible) as info:
            ar_estimate_aipw(table, spec, crossfit(table, spec, seed=4))
        assert info.value.solution is not None


def exact_nuisances(table):
    """True outcome means, propensities and projections of the mild mediator design."""
    from scipy.stats import norm

    from adjrobust.nuisance import NuisanceFits

    x1, x2 = table.x.T
    n = table.n
    p1 = expit(0.5 * x1)
    l1 = p1 * norm.pdf(x2 - 0.2 - 0.5 * x1)
    l0 = (1 - p1) * norm.pdf(x2)
    mu0 = np.column_stack([np.zeros(n), x2])
    mu1 = np.column_stack([0.2 + 1.5 * x1, x1 + x2])
    e = np.column_stack([p1, l1 / (l1 + l0)])
    proj = np.column_stack([0.2 + 1.5 * x1, x1])
    return NuisanceFits(np.zeros(n, dtype=int), mu0, mu1, e, proj, (), 0, "exact")


def test_exact_nuisances_give_nominal_coverage():
    reps = 400
    hits, estimates, ses = 0, [], []
    for seed in range(reps):
        table = mild_mediator(2000, 10_000 + seed)
        est = ar_estimate_aipw(table, default_spec(), exact_nuisances(table))
        hits += est.ci_lo <= MILD_MEDIATOR_TARGET <= est.ci_hi
        estimates.append(est.estimate)
        ses.append(math.sqrt(est.variance / table.n))
    band = 3 * math.sqrt(0.05 * 0.95 / reps)
    assert abs(hits / reps - 0.95) <= band
    assert np.mean(ses) == pytest.approx(np.std(estimates), rel=0.15)
    assert np.mean(estimates) == pytest.approx(MILD_MEDIATOR_TARGET, abs=0.03)
