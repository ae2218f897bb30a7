import numpy as np
import pandas as pd
import pytest
from scipy import stats as sps

from synth7t.stats import (
    PredictionResult,
    StatsError,
    bh_adjust,
    diagnostic_prediction,
    paired_t,
    paired_t_bh,
    rm_anova,
    tukey_posthoc,
)


def rank_table(seed=0, raters=4, queries=28, k=6, favored=None):
    """Random permutation ranks; if ``favored`` is set, that image type is
    always ranked 1."""
    rng = np.random.default_rng(seed)
    rows = []
    for r in range(raters):
        for q in range(queries):
            if favored is None:
                perm = rng.permutation(k) + 1
            else:
                rest = rng.permutation(k - 1) + 2
                perm = np.empty(k, dtype=int)
                perm[favored] = 1
                perm[[t for t in range(k) if t != favored]] = rest
            for t in range(k):
                rows.append({"rater": f"r{r}", "query": f"q{q}",
                             "image_type": f"t{t}", "rank": int(perm[t])})
    return pd.DataFrame(rows)


def anova_bruteforce(df):
    """Textbook sums-of-squares computation with explicit loops."""
    units = sorted(set(zip(df["rater"], df["query"])))
    conditions = sorted(df["image_type"].unique())
    x = np.empty((len(units), len(conditions)))
    for row in df.itertuples(index=False):
        x[units.index((row.rater, row.query)), conditions.index(row.image_type)] = row.rank
    n, k = x.shape
    grand = x.sum() / x.size
    ss_cond = sum(n * (x[:, j].mean() - grand) ** 2 for j in range(k))
    ss_units = sum(k * (x[i].mean() - grand) ** 2 for i in range(n))
    ss_total = sum((v - grand) ** 2 for v in x.ravel())
    ss_err = ss_total - ss_cond - ss_units
    df1, df2 = k - 1, (k - 1) * (n - 1)
    f = (ss_cond / df1) / (ss_err / df2)
    return f, float(sps.f.sf(f, df1, df2)), ss_err / df2, n, k


class TestRmAnova:
    def test_matches_bruteforce(self):
        df = rank_table(seed=3, raters=3, queries=5, k=4)
        result = rm_anova(df)
        f, p, _, n, k = anova_bruteforce(df)
        assert result.f_value == pytest.approx(f, rel=1e-12)
        assert result.p_value == pytest.approx(p, rel=1e-12)
        assert result.n_units == n and result.n_conditions == k

    def test_matches_statsmodels(self):
        statsmodels = pytest.importorskip("statsmodels.stats.anova")
        df = rank_table(seed=1, raters=2, queries=6, k=4)
        df2 = df.copy()
        df2["unit"] = df2["rater"] + "_" + df2["query"]
        fit = statsmodels.AnovaRM(df2, depvar="rank", subject="unit",
                                  within=["image_type"]).fit()
        result = rm_anova(df)
        assert result.f_value == pytest.approx(float(fit.anova_table["F Value"].iloc[0]),
                                               rel=1e-9)
        assert result.p_value == pytest.approx(float(fit.anova_table["Pr > F"].iloc[0]),
                                               abs=1e-12)

    def test_null_pvalues_roughly_uniform(self):
        ps = [rm_anova(rank_table(seed=s, raters=2, queries=10)).p_value
              for s in range(200)]
        ks = sps.kstest(ps, "uniform")
        assert ks.pvalue > 1e-3

    def test_strong_effect_tiny_p(self):
        result = rm_anova(rank_table(seed=0, favored=0))
        assert result.p_value < 1e-4

    def test_relabeling_invariance(self):
        df = rank_table(seed=2, raters=2, queries=4, k=3)
        renamed = df.copy()
        renamed["image_type"] = renamed["image_type"].map(
            {"t0": "zebra", "t1": "apple", "t2": "mango"})
        a, b = rm_anova(df), rm_anova(renamed)
        assert a.f_value == pytest.approx(b.f_value, rel=1e-12)

    def test_unbalanced_rejected_with_cells(self):
        df = rank_table(seed=0, raters=2, queries=3, k=3)
        df = df.iloc[:-1]  # drop one observation
        with pytest.raises(StatsError, match="r1"):
            rm_anova(df)

    def test_tuple_unpacking(self):
        f, p = rm_anova(rank_table(seed=4, raters=2, queries=4, k=3))
        assert 0 <= p <= 1 and f >= 0


class TestTukey:
    def test_pair_count(self):
        table = tukey_posthoc(rank_table(seed=0, raters=2, queries=6, k=6))
        assert len(table) == 15  # 6*5/2

    def test_identical_distribution_pair_p_one(self):
        # alternate (1,2)/(2,1) so the two types have exactly equal means
        rows = []
        for q in range(20):
            first, second = (1, 2) if q % 2 == 0 else (2, 1)
            rows.append({"rater": "r", "query": q, "image_type": "a", "rank": first})
            rows.append({"rater": "r", "query": q, "image_type": "b", "rank": second})
        out = tukey_posthoc(pd.DataFrame(rows))
        assert out.iloc[0]["p_adj"] == pytest.approx(1.0)

    def test_separated_groups_significant(self):
        out = tukey_posthoc(rank_table(seed=1, favored=2))
        involving = out[(out.type_a == "t2") | (out.type_b == "t2")]
        assert (involving["p_adj"] < 0.05).all()

    def test_q_statistic_matches_bruteforce(self):
        df = rank_table(seed=5, raters=3, queries=7, k=4)
        out = tukey_posthoc(df)
        _, _, ms_error, n, k = anova_bruteforce(df)
        means = df.groupby("image_type")["rank"].mean()
        for row in out.itertuples(index=False):
            q_expected = abs(means[row.type_a] - means[row.type_b]) / np.sqrt(ms_error / n)
            assert row.q == pytest.approx(q_expected, rel=1e-10)
            p_expected = sps.studentized_range.sf(q_expected, k, (k - 1) * (n - 1))
            assert row.p_adj == pytest.approx(min(1.0, p_expected), rel=1e-9, abs=1e-12)


class TestPairedT:
    def test_identical_samples(self):
        t, p = paired_t([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert t == 0.0 and p == 1.0

    def test_matches_scipy_on_generic_data(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.random(12)
            b = rng.random(12)
            t, p = paired_t(a, b)
            ref = sps.ttest_rel(a, b)
            assert t == pytest.approx(ref.statistic, rel=1e-10)
            assert p == pytest.approx(ref.pvalue, rel=1e-10)

    def test_too_few_pairs(self):
        with pytest.raises(StatsError):
            paired_t([1.0], [2.0])


class TestBH:
    def test_fixed_point_equal_pvalues(self):
        adjusted = bh_adjust([0.04] * 6)
        np.testing.assert_allclose(adjusted, 0.04)

    def test_monotone_on_random_vectors(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            p = rng.random(rng.integers(2, 30))
            adj = bh_adjust(p)
            order = np.argsort(p)
            assert (np.diff(adj[order]) >= -1e-15).all()
            assert (adj >= p - 1e-15).all() and (adj <= 1.0).all()

    def test_matches_statsmodels(self):
        multipletests = pytest.importorskip("statsmodels.stats.multitest").multipletests
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = rng.random(9)
            ref = multipletests(p, method="fdr_bh")[1]
            np.testing.assert_allclose(bh_adjust(p), ref, rtol=1e-12)

    def test_paired_t_bh_table(self):
        rng = np.random.default_rng(3)
        samples = {
            "3T": rng.normal(0.85, 0.02, 20),
            "unet": rng.normal(0.86, 0.02, 20),
            "gan": rng.normal(0.88, 0.02, 20),
        }
        out = paired_t_bh(samples)
        assert len(out) == 3
        assert set(out.columns) == {"group_a", "group_b", "t", "p", "p_adj"}
        assert (out["p_adj"] >= out["p"] - 1e-15).all()

    def test_unequal_lengths_rejected(self):
        with pytest.raises(StatsError):
            paired_t_bh({"a": [1.0, 2.0], "b": [1.0]})


def blobs(n_per_class=20, spread=0.5, seed=0):
    rng = np.random.default_rng(seed)
    centers = {"CN": (0.0, 0.0), "MCI": (6.0, 0.0), "AD": (0.0, 6.0)}
    rows = []
    for label, (cx, cy) in centers.items():
        for _ in range(n_per_class):
            rows.append({"hippocampus": rng.normal(cx, spread),
                         "amygdala": rng.normal(cy, spread),
                         "age": rng.uniform(55, 85),
                         "diagnosis": label})
    return pd.DataFrame(rows)


class TestDiagnosticPrediction:
    def test_separable_blobs_high_balanced_accuracy(self):
        result = diagnostic_prediction(blobs(), n_repeats=3, seed=0, n_estimators=50)
        assert result.balanced_accuracy.mean() > 0.95

    def test_constant_features_give_exact_chance_level(self):
        df = blobs(n_per_class=10)
        df[["hippocampus", "amygdala", "age"]] = 0.0
        df["diagnosis"] = ["CN"] * 14 + ["MCI"] * 10 + ["AD"] * 6
        # constant predictor: recall 1 for the majority class, 0 elsewhere
        with pytest.raises(StatsError):
            diagnostic_prediction(df, n_repeats=1)  # AD has 6 < 10 members
        result = diagnostic_prediction(df, n_repeats=2, seed=0, n_folds=5, n_estimators=20)
        np.testing.assert_allclose(result.balanced_accuracy, 1 / 3)

    def test_small_class_error_suggests_fold_count(self):
        df = blobs(n_per_class=8)
        with pytest.raises(StatsError, match="n_folds <= 8"):
            diagnostic_prediction(df, n_repeats=1)

    def test_seed_reproducible(self):
        a = diagnostic_prediction(blobs(), n_repeats=2, seed=7, n_estimators=30)
        b = diagnostic_prediction(blobs(), n_repeats=2, seed=7, n_estimators=30)
        np.testing.assert_array_equal(a.accuracy, b.accuracy)
        np.testing.assert_array_equal(a.balanced_accuracy, b.balanced_accuracy)
        pd.testing.assert_series_equal(a.importances, b.importances)

    def test_importances_identify_informative_features(self):
        result = diagnostic_prediction(blobs(), n_repeats=2, seed=0, n_estimators=50)
        assert isinstance(result, PredictionResult)
        assert result.importances["hippocampus"] > result.importances["age"]
        assert result.importances["amygdala"] > result.importances["age"]

    def test_input_validation(self):
        df = blobs()
        with pytest.raises(StatsError):
            diagnostic_prediction(df.rename(columns={"diagnosis": "dx"}), n_repeats=1)
        bad = blobs()
        bad.loc[0, "age"] = np.inf
        with pytest.raises(StatsError):
            diagnostic_prediction(bad, n_repeats=1)
        with pytest.raises(StatsError):
            diagnostic_prediction(df, n_repeats=0)
