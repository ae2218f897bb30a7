"""Statistical procedures: repeated-measures ANOVA and Tukey post-hoc tests
for the rater study, paired t-tests with Benjamini-Hochberg correction for
segmentation comparisons, and the random-forest diagnostic-prediction
harness.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats as sps
from sklearn.ensemble import RandomForestClassifier
from sklearn.metrics import accuracy_score, balanced_accuracy_score
from sklearn.model_selection import StratifiedKFold

RANK_COLUMNS = ("rater", "query", "image_type", "rank")


class StatsError(ValueError):
    pass


def _pivot_ranks(ranks: pd.DataFrame) -> pd.DataFrame:
    """Units x conditions matrix, validating a balanced design.

    Each (rater, query) pair is one within-subject unit that scored every
    image type exactly once.
    """
    missing = set(RANK_COLUMNS[:3] + ("rank",)) - set(ranks.columns)
    if missing:
        raise StatsError(f"rank table is missing columns: {sorted(missing)}")
    counts = ranks.groupby(["rater", "query", "image_type"]).size()
    k_types = ranks["image_type"].nunique()
    cells = counts.unstack("image_type")
    bad = cells[(cells != 1).any(axis=1) | cells.isna().any(axis=1)]
    if len(bad) or (counts != 1).any():
        raise StatsError(f"unbalanced design; offending (rater, query) cells: {list(bad.index)}")
    pivot = ranks.pivot_table(index=["rater", "query"], columns="image_type",
                              values="rank", aggfunc="first")
    if pivot.isna().any().any() or pivot.shape[1] != k_types:
        raise StatsError("unbalanced design after pivot")
    return pivot


@dataclass(frozen=True)
class RmAnovaResult:
    f_value: float
    p_value: float
    df_effect: int
    df_error: int
    ms_error: float
    n_units: int
    n_conditions: int

    def __iter__(self):  # allows f, p = rm_anova(...)
        return iter((self.f_value, self.p_value))


def rm_anova(ranks: pd.DataFrame) -> RmAnovaResult:
    """One-factor within-subject (repeated measures) ANOVA on ranks.

    Image type is the within factor; each (rater, query) pair is a subject
    unit. Returns the F statistic and p-value.
    """
    x = _pivot_ranks(ranks).to_numpy(dtype=float)
    n, k = x.shape
    if n < 2 or k < 2:
        raise StatsError(f"need >= 2 units and >= 2 conditions, got {n} x {k}")
    grand = x.mean()
    cond_means = x.mean(axis=0)
    unit_means = x.mean(axis=1)
    ss_cond = n * float(((cond_means - grand) ** 2).sum())
    ss_units = k * float(((unit_means - grand) ** 2).sum())
    ss_total = float(((x - grand) ** 2).sum())
    ss_error = ss_total - ss_cond - ss_units
    df_effect = k - 1
    df_error = (k - 1) * (n - 1)
    ms_error = ss_error / df_error
    if ms_error <= 0:
        return RmAnovaResult(float("inf"), 0.0, df_effect, df_error, 0.0, n, k)
    f = (ss_cond / df_effect) / ms_error
    p = float(sps.f.sf(f, df_effect, df_error))
    return RmAnovaResult(float(f), p, df_effect, df_error, float(ms_error), n, k)


def tukey_posthoc(ranks: pd.DataFrame) -> pd.DataFrame:
    """Tukey HSD over all image-type pairs, using the repeated-measures
    error term. Returns one row per unordered pair with the adjusted p."""
    pivot = _pivot_ranks(ranks)
    anova = rm_anova(ranks)
    means = pivot.mean(axis=0)
    n = anova.n_units
    se = np.sqrt(anova.ms_error / n)
    rows = []
    for a, b in itertools.combinations(pivot.columns, 2):
        diff = float(means[a] - means[b])
        if se == 0:
            p_adj = 0.0 if diff != 0 else 1.0
            q = float("inf") if diff != 0 else 0.0
        else:
            q = abs(diff) / se
            p_adj = float(sps.studentized_range.sf(q, anova.n_conditions, anova.df_error))
        rows.append({"type_a": a, "type_b": b, "mean_diff": diff, "q": float(q),
                     "p_adj": min(1.0, p_adj)})
    return pd.DataFrame(rows)


def bh_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values (step-up, clipped at 1)."""
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 1.0
    for rank_idx in range(m - 1, -1, -1):
        i = order[rank_idx]
        running = min(running, p[i] * m / (rank_idx + 1))
        adjusted[i] = running
    return np.clip(adjusted, 0.0, 1.0)


def paired_t(a, b) -> tuple[float, float]:
    """Two-sided paired-samples t-test.

    Identical samples are defined to give t = 0, p = 1 (scipy would return
    NaN for the zero-variance case).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise StatsError(f"paired samples must be equal-length 1D, got {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise StatsError(f"need >= 2 pairs, got {n}")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0:
        if d.mean() == 0:
            return 0.0, 1.0
        return float(np.inf) * np.sign(d.mean()), 0.0
    t = d.mean() / (sd / np.sqrt(n))
    p = 2.0 * float(sps.t.sf(abs(t), n - 1))
    return float(t), min(1.0, p)


def paired_t_bh(samples_by_group: dict) -> pd.DataFrame:
    """Paired t-tests over all group pairs with BH correction across the
    family. ``samples_by_group`` maps group label -> per-subject values
    (all equal length, subject-aligned)."""
    groups = list(samples_by_group)
    if len(groups) < 2:
        raise StatsError("need at least two groups to compare")
    lengths = {len(np.asarray(v)) for v in samples_by_group.values()}
    if len(lengths) != 1:
        raise StatsError(f"groups have unequal lengths: {sorted(lengths)}")
    rows = []
    for a, b in itertools.combinations(groups, 2):
        t, p = paired_t(samples_by_group[a], samples_by_group[b])
        rows.append({"group_a": a, "group_b": b, "t": t, "p": p})
    df = pd.DataFrame(rows)
    df["p_adj"] = bh_adjust(df["p"].to_numpy())
    return df


@dataclass
class PredictionResult:
    accuracy: np.ndarray  # one value per repeat
    balanced_accuracy: np.ndarray
    importances: pd.Series  # mean over all fold models


def diagnostic_prediction(features: pd.DataFrame, label_col: str = "diagnosis",
                          n_repeats: int = 50, seed: int = 0, n_folds: int = 10,
                          n_estimators: int = 100) -> PredictionResult:
    """Random-forest diagnosis prediction from regional features.

    Each repeat runs a fresh stratified ``n_folds``-fold cross-validation;
    accuracy and balanced accuracy are computed on the pooled out-of-fold
    predictions. Feature importances are averaged over every fold model of
    every repeat. Fixed ``seed`` makes the whole procedure reproducible.
    """
    if n_repeats < 1:
        raise StatsError(f"n_repeats must be >= 1, got {n_repeats}")
    if label_col not in features.columns:
        raise StatsError(f"label column {label_col!r} not in feature table")
    y = features[label_col].to_numpy()
    x_df = features.drop(columns=[label_col])
    x = x_df.to_numpy(dtype=float)
    if not np.isfinite(x).all():
        raise StatsError("feature table contains non-finite values")
    if pd.isna(y).any():
        raise StatsError("feature table contains missing labels")
    classes, counts = np.unique(y, return_counts=True)
    if counts.min() < n_folds:
        raise StatsError(
            f"class {classes[counts.argmin()]!r} has only {counts.min()} members; "
            f"stratified {n_folds}-fold CV needs >= {n_folds} per class "
            f"(use n_folds <= {counts.min()})"
        )

    accuracies = np.empty(n_repeats)
    balanced = np.empty(n_repeats)
    importance_sum = np.zeros(x.shape[1])
    n_models = 0
    for r in range(n_repeats):
        rs = seed + r
        cv = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=rs)
        pred = np.empty_like(y)
        for train_idx, test_idx in cv.split(x, y):
            clf = RandomForestClassifier(n_estimators=n_estimators, random_state=rs, n_jobs=1)
            clf.fit(x[train_idx], y[train_idx])
            pred[test_idx] = clf.predict(x[test_idx])
            importance_sum += clf.feature_importances_
            n_models += 1
        accuracies[r] = accuracy_score(y, pred)
        balanced[r] = balanced_accuracy_score(y, pred)
    importances = pd.Series(importance_sum / n_models, index=x_df.columns, name="importance")
    return PredictionResult(accuracies, balanced, importances)


def load_feature_table(csv_path, label_col: str = "diagnosis") -> pd.DataFrame:
    """Load a regional-feature CSV (SynthSeg volume exports plus age/gender),
    dropping identifier columns."""
    df = pd.read_csv(csv_path)
    if label_col not in df.columns:
        raise StatsError(f"feature CSV is missing the {label_col!r} column")
    drop = [c for c in ("subject_id", "scan_id") if c in df.columns]
    df = df.drop(columns=drop)
    if "gender" in df.columns and df["gender"].dtype == object:
        from .volumes import GENDER_CODES

        df["gender"] = df["gender"].map(GENDER_CODES)
    return df
