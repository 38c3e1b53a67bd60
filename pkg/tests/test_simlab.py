import numpy as np
import pytest

from adjrobust.errors import Infeasible
from adjrobust.simlab import (
    Example,
    format_table,
    gen_example,
    potential_outcomes,
    replicate,
    reweighted_target,
)
from adjrobust.streams import derive_seed, stream


def test_mediator_true_ate_by_counterfactuals():
    y0, y1 = potential_outcomes("mediator", 1_000_000, 1)
    assert np.mean(y1 - y0) == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("which", list(Example))
def test_observed_outcome_is_the_matching_potential_outcome(which):
    table, ate = gen_example(which, 500, 2)
    y0, y1 = potential_outcomes(which, 500, 2)
    np.testing.assert_array_equal(table.y, np.where(table.a == 1, y1, y0))
    assert ate == 1.0 and table.col_names == ("x1", "x2")


def test_mbias_collider_correlates_with_outcome_noise():
    n, seed = 100_000, 3
    table, _ = gen_example("mbias", n, seed)
    rng = stream(seed, 0, "data")
    rng.standard_normal(n)  # u1
    u2 = rng.standard_normal(n)
    # var(x2) = var(A x1) + 2 = 2.5, so corr(x2, u2) = 1 / sqrt(2.5)
    r = np.corrcoef(table.x[:, 1], u2)[0, 1]
    assert r > 0.4 and r == pytest.approx(1 / np.sqrt(2.5), abs=0.01)


def test_same_seed_same_table():
    a, _ = gen_example("twoconf", 100, 4)
    b, _ = gen_example("twoconf", 100, 4)
    c, _ = gen_example("twoconf", 100, 5)
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert a.y.tobytes() != c.y.tobytes()


def test_minimum_size():
    with pytest.raises(ValueError):
        gen_example("mediator", 9, 0)


def test_mediator_treated_share():
    table, _ = gen_example("mediator", 100_000, 6)
    assert table.a.mean() == pytest.approx(0.5, abs=0.01)


class TestReweightedTarget:
    def test_mediator(self):
        # g = 2 + x1 with x1 ~ N(0, 4): tilt exp(-x1/2) moves x1 to N(-2, 4), and 1 + 2 x1 averages -3
        assert reweighted_target("mediator", "aipw") == pytest.approx(-3.0, abs=1e-3)
        assert reweighted_target("mediator", "lm") == pytest.approx(-3.0, abs=0.02)

    def test_mbias(self):
        assert reweighted_target("mbias", "lm") == pytest.approx(-0.597, abs=0.01)
        with pytest.raises(ValueError):
            reweighted_target("mbias", "aipw")

    @pytest.mark.parametrize("path", ["lm", "aipw"])
    def test_two_confounders_has_no_reweighted_population(self, path):
        with pytest.raises(Infeasible):
            reweighted_target("twoconf", path)


class TestReplicate:
    def test_single_replication(self):
        rep = replicate("mediator", n=300, reps=1, bootstrap=100)
        for m in rep.methods.values():
            assert m.coverage in (0.0, 1.0) and m.replications == 1

    def test_seed_per_replication(self):
        rep = replicate("mbias", n=200, reps=3, methods=["ols_s1"], base_seed=9)
        table, _ = gen_example("mbias", 200, derive_seed(9, 2))
        from adjrobust.baselines import ols_ci

        assert rep.records[2]["ols_s1"] == ols_ci(table, (0,))

    def test_method_order_and_workers_do_not_matter(self):
        a = replicate("mbias", n=200, reps=4, methods=["ar_lm", "ols_s1"], bootstrap=100, base_seed=1)
        b = replicate("mbias", n=200, reps=4, methods=["ols_s1", "ar_lm"], bootstrap=100, base_seed=1, workers=2)
        for m in ("ar_lm", "ols_s1"):
            assert [r[m] for r in a.records] == [r[m] for r in b.records]
            assert a.methods[m] == b.methods[m]

    def test_baselines_scored_against_sample_ate(self):
        rep = replicate("mediator", n=200, reps=30, methods=["ols_s1"], base_seed=4)
        sates = [(y1 - y0).mean() for y0, y1 in (potential_outcomes("mediator", 200, derive_seed(4, r)) for r in range(30))]
        assert [r["sample_ate"] for r in rep.records] == pytest.approx(sates, abs=1e-12)
        hits = sum(lo <= s <= hi for (_, lo, hi), s in zip((r["ols_s1"] for r in rep.records), sates))
        pop = sum(lo <= 1.0 <= hi for _, lo, hi in (r["ols_s1"] for r in rep.records))
        s = rep.methods["ols_s1"]
        assert s.coverage == hits / 30 and s.coverage_ate == pop / 30
        assert s.scored_against == "sample_ate"
        assert rep.to_dict()["methods"]["ols_s1"]["scored_against"] == "sample_ate"

    def test_infeasible_replications_are_counted(self):
        rep = replicate("twoconf", n=300, reps=2, methods=["ar_lm"], bootstrap=100)
        s = rep.methods["ar_lm"]
        assert s.failures == 2 and s.coverage == 0.0 and s.mean_width is None

    def test_aipw_methods(self):
        rep = replicate("mediator", n=300, reps=2, methods=["aipw_s1", "aipw_s2", "naive_aipw", "ar_aipw"])
        assert set(rep.methods) == {"aipw_s1", "aipw_s2", "naive_aipw", "ar_aipw"}
        assert rep.methods["ar_aipw"].target == pytest.approx(-3.0, abs=1e-3)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            replicate("mediator", reps=0)
        with pytest.raises(ValueError):
            replicate("mediator", reps=1, methods=["forest"])

    def test_table_lists_every_method(self):
        rep = replicate("mediator", n=300, reps=2, bootstrap=100)
        text = format_table([rep])
        for label in ("Adjust {X1}", "Adjust {X1,X2}", "Naive", "AR (lm)"):
            assert label in text
        assert text.splitlines()[1].split()[0] == "mediator"
