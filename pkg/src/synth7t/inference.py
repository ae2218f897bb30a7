"""Slice-wise synthesis of 7T-like volumes from normalized 3T volumes."""

from __future__ import annotations

import time

import numpy as np
import pandas as pd
import torch

from .volumes import (
    SubjectMetadata,
    Volume,
    VolumeError,
    brain_extent,
    build_context,
    clipped_minmax_normalize,
    crop_center,
    load_volume,
    save_volume,
    slice_stack,
)


def synthesize_volume(model, volume: Volume, meta: SubjectMetadata,
                      batch_size: int = 4) -> Volume:
    """Run the generator over every brain-carrying axial slice.

    Slices fully outside the brain mask stay zero; outputs are clamped to
    [0, 1]. The result has the input's shape, spacing and mask. Synthesis is
    per-slice with no cross-slice state, so slice order does not matter.
    """
    config = model.config
    h, w = volume.data.shape[:2]
    div = config.spatial_divisor
    if h % div or w % div:
        raise VolumeError(
            f"in-plane shape ({h},{w}) not divisible by {div}; crop the volume first"
        )
    mask = volume.require_mask()
    with_diagnosis = config.context_len == 4
    top, bot = brain_extent(volume)

    indices = [s for s in range(bot, top + 1) if mask[:, :, s].any()]
    out = np.zeros_like(volume.data, dtype=np.float32)
    model.eval()
    with torch.no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start : start + batch_size]
            stacks = np.stack([slice_stack(volume.data, s, top, bot) for s in chunk])
            contexts = np.stack(
                [build_context(meta, s, top, bot, with_diagnosis).as_array() for s in chunk]
            )
            pred = model(torch.as_tensor(stacks, dtype=torch.float32),
                         torch.as_tensor(contexts, dtype=torch.float32))
            pred = pred.clamp(0.0, 1.0).numpy()
            for i, s in enumerate(chunk):
                out[:, :, s] = pred[i, 0]
    return Volume(data=out, spacing=volume.spacing,
                  mask=None if volume.mask is None else volume.mask.copy())


def _synthesize_row(model, row, normalize, crop_hw):
    t0 = time.monotonic()
    record = {"subject_id": str(getattr(row, "subject_id", "?")), "status": "ok",
              "message": "", "output_path": getattr(row, "output_path", "")}
    try:
        diagnosis = getattr(row, "diagnosis", None)
        if diagnosis is not None and pd.isna(diagnosis):
            diagnosis = None
        meta = SubjectMetadata(subject_id=str(row.subject_id), age=float(row.age),
                               gender=str(row.gender), diagnosis=diagnosis)
        mask_path = getattr(row, "mask_path", None)
        volume = load_volume(row.input_path,
                             mask_path=None if mask_path is None or pd.isna(mask_path)
                             else mask_path)
        if normalize:
            volume = clipped_minmax_normalize(volume)
        if crop_hw is not None:
            volume = crop_center(volume, crop_hw)
        result = synthesize_volume(model, volume, meta)
        save_volume(result, row.output_path)
    except Exception as exc:  # per-file isolation
        record["status"] = "error"
        record["message"] = f"{type(exc).__name__}: {exc}"
    record["seconds"] = round(time.monotonic() - t0, 3)
    return record


def batch_synthesize(model, manifest, normalize: bool = False,
                     crop_hw: tuple[int, int] | None = None,
                     report_path=None, jobs: int = 1) -> pd.DataFrame:
    """Synthesize every subject listed in a manifest.

    The manifest (CSV path or DataFrame) needs columns subject_id,
    input_path, output_path, age, gender, and optionally mask_path,
    diagnosis. Failures are recorded per row and do not stop the run. The
    model is shared read-only, so ``jobs`` > 1 fans rows out over threads.
    """
    if not isinstance(manifest, pd.DataFrame):
        manifest = pd.read_csv(manifest, dtype={"subject_id": str})
    rows_in = list(manifest.itertuples(index=False))
    if jobs > 1 and len(rows_in) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda r: _synthesize_row(model, r, normalize, crop_hw),
                                 rows_in))
    else:
        rows = [_synthesize_row(model, r, normalize, crop_hw) for r in rows_in]
    report = pd.DataFrame(rows, columns=["subject_id", "status", "message",
                                         "output_path", "seconds"])
    if report_path is not None:
        report.to_csv(report_path, index=False)
    return report
