"""Volume comparison metrics: region-restricted MSE/PSNR, global SSIM, and
Dice scores for segmentations.

All metrics operate on 3D volumes and an explicit evaluation region so that
background and artifact slices never contaminate the numbers.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .volumes import Volume

# SSIM stabilization constants for intensities in [0, 1].
SSIM_C1 = 1e-4
SSIM_C2 = 9e-4


class MetricError(ValueError):
    pass


def evaluation_region(a: Volume, b: Volume) -> np.ndarray:
    """Boolean region for metric computation: intersection of both brain
    masks with every excluded artifact slice (of either volume) removed."""
    if a.data.shape != b.data.shape:
        raise MetricError(f"volume shapes differ: {a.data.shape} vs {b.data.shape}")
    region = a.require_mask() & b.require_mask()
    for s in set(a.excluded_axial_slices) | set(b.excluded_axial_slices):
        region[:, :, s] = False
    if not region.any():
        raise MetricError("evaluation region is empty after mask intersection and exclusions")
    return region


def _region_values(a, b, region):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    region = np.asarray(region, dtype=bool)
    if region.shape != a.shape:
        raise MetricError(f"region shape {region.shape} != volume shape {a.shape}")
    if not region.any():
        raise MetricError("empty region")
    return a[region], b[region]


def mse(a, b, region) -> float:
    """Mean squared difference over region voxels."""
    x, y = _region_values(a, b, region)
    return float(np.mean((x - y) ** 2))


def psnr(a, b, region) -> float:
    """-10 log10(MSE) in dB, for unit-range intensities."""
    m = mse(a, b, region)
    if m == 0:
        raise MetricError("MSE is zero (identical volumes); PSNR undefined")
    return float(-10.0 * np.log10(m))


def ssim(a, b, region) -> float:
    """Global single-window SSIM over the region.

    Uses the whole-region mean, (population) variance and covariance rather
    than a sliding window; the intensities are assumed normalized to [0, 1].
    """
    x, y = _region_values(a, b, region)
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    cov = ((x - mx) * (y - my)).mean()
    num = (2 * mx * my + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mx**2 + my**2 + SSIM_C1) * (vx + vy + SSIM_C2)
    return float(num / den)


def dice(a, b) -> float:
    """2|A∩B| / (|A|+|B|) for boolean masks; 1.0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    size = int(a.sum()) + int(b.sum())
    if size == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / size


def per_subject_mean_dice(seg_a, seg_b, excluded_labels=()) -> float:
    """Unweighted mean Dice over the labels present in both segmentations.

    Label 0 is background and never counted; ``excluded_labels`` drops
    additional segments (e.g. cerebellum labels corrupted by artifacts).
    """
    seg_a = np.asarray(seg_a)
    seg_b = np.asarray(seg_b)
    if seg_a.shape != seg_b.shape:
        raise MetricError(f"shape mismatch: {seg_a.shape} vs {seg_b.shape}")
    drop = set(int(l) for l in excluded_labels) | {0}
    labels = (set(np.unique(seg_a)) & set(np.unique(seg_b))) - drop
    if not labels:
        raise MetricError("no shared labels left after exclusions")
    return float(np.mean([dice(seg_a == l, seg_b == l) for l in sorted(labels)]))


def metrics_report(rows: list[dict], path=None) -> pd.DataFrame:
    """Tabulate per-subject metric rows and append a mean ± SD summary row.

    Each row is a dict with at least ``subject_id`` plus metric columns.
    """
    if not rows:
        raise MetricError("no metric rows to report")
    df = pd.DataFrame(rows)
    numeric = df.select_dtypes("number").columns
    summary = {c: df[c].mean() for c in numeric}
    summary_sd = {c: df[c].std(ddof=1) for c in numeric}
    df_out = pd.concat(
        [
            df,
            pd.DataFrame([{"subject_id": "mean", **summary},
                          {"subject_id": "sd", **summary_sd}]),
        ],
        ignore_index=True,
    )
    if path is not None:
        df_out.to_csv(path, index=False)
    return df_out
