"""Volume ingestion, normalization, cropping, slice extraction and context encoding.

Volumes are 3D arrays indexed (x, y, z) with z the axial direction, so
``data[:, :, s]`` is one axial slice of in-plane shape (H, W). All inputs are
assumed skull-stripped, bias-corrected and co-registered by external tooling;
none of that happens here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .nifti import read_nifti, write_nifti

# In-plane dimensions must allow five halvings (the deepest network in the
# toolkit downsamples five times).
SPATIAL_DIVISOR = 32

GENDER_CODES = {"F": 0, "M": 1}
DIAGNOSIS_CODES = {"unimpaired": 0, "impaired": 1}
# 3-class labels carried by the diagnostic-prediction dataset. Valid metadata,
# but not usable for conditioning (which is binary).
PREDICTION_DIAGNOSES = ("CN", "MCI", "AD")

# Age enters the context vector as age/100 to keep it on the same scale as
# the binary codes and the slice location.
AGE_SCALE = 100.0


class VolumeError(ValueError):
    """Invalid volume data or incompatible volume pair."""


@dataclass
class Volume:
    """A 3D intensity grid with voxel spacing, optional brain mask and an
    optional list of axial slices to exclude (scanner artifacts)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    mask: np.ndarray | None = None
    excluded_axial_slices: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise VolumeError(f"volume data must be 3D, got ndim={self.data.ndim}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise VolumeError(f"spacing must be three positive numbers, got {self.spacing}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.mask is not None:
            self.mask = np.asarray(self.mask).astype(bool)
            if self.mask.shape != self.data.shape:
                raise VolumeError(
                    f"mask shape {self.mask.shape} != data shape {self.data.shape}"
                )
        n_axial = self.data.shape[2]
        bad = [s for s in self.excluded_axial_slices if not 0 <= s < n_axial]
        if bad:
            raise VolumeError(f"excluded slices {bad} outside axial range [0, {n_axial})")
        self.excluded_axial_slices = sorted(int(s) for s in set(self.excluded_axial_slices))

    @property
    def shape(self):
        return self.data.shape

    def require_mask(self):
        if self.mask is None:
            raise VolumeError("operation requires a brain mask, but none is present")
        return self.mask


@dataclass(frozen=True)
class SubjectMetadata:
    """Demographics used for conditioning and stratification."""

    subject_id: str
    age: float
    gender: str
    diagnosis: str | None = None

    def __post_init__(self):
        if not self.age > 0:
            raise VolumeError(f"age must be positive, got {self.age}")
        if self.gender not in GENDER_CODES:
            raise VolumeError(f"gender must be one of {sorted(GENDER_CODES)}, got {self.gender!r}")
        allowed = set(DIAGNOSIS_CODES) | set(PREDICTION_DIAGNOSES)
        if self.diagnosis is not None and self.diagnosis not in allowed:
            raise VolumeError(
                f"diagnosis must be one of {sorted(allowed)} or None, got {self.diagnosis!r}"
            )


@dataclass(frozen=True)
class ContextVector:
    """Conditioning values for one slice.

    ``diagnosis_code`` is None for models trained without diagnosis
    conditioning; it is then simply absent from the vector form.
    """

    age_scaled: float
    gender_code: int
    slice_location: float
    diagnosis_code: int | None = None

    def as_array(self):
        entries = [self.age_scaled, float(self.gender_code)]
        if self.diagnosis_code is not None:
            entries.append(float(self.diagnosis_code))
        entries.append(self.slice_location)
        return np.asarray(entries, dtype=np.float32)

    def __len__(self):
        return 3 if self.diagnosis_code is None else 4


@dataclass
class SliceSample:
    """One training sample: a 3-slice input stack, its 1-slice target, and
    the conditioning context."""

    input: np.ndarray  # (3, H, W), channel 1 is the center slice
    target: np.ndarray  # (1, H, W)
    context: ContextVector
    axial_index: int = 0

    def __post_init__(self):
        if self.input.ndim != 3 or self.target.ndim != 3 or self.target.shape[0] != 1:
            raise VolumeError(
                f"bad sample shapes: input {self.input.shape}, target {self.target.shape}"
            )
        if self.input.shape[1:] != self.target.shape[1:]:
            raise VolumeError("input and target in-plane shapes differ")
        h, w = self.input.shape[1:]
        if h % SPATIAL_DIVISOR or w % SPATIAL_DIVISOR:
            raise VolumeError(
                f"slice shape ({h},{w}) must be divisible by {SPATIAL_DIVISOR}"
            )


def clipped_minmax_normalize(volume: Volume) -> Volume:
    """Clipped min-max normalization.

    Rescales by the masked minimum and masked 99th percentile (hyperintense
    voxels such as blood vessels make the plain maximum unstable), clamps to
    [0, 1], and zeroes the background.
    """
    mask = volume.require_mask()
    values = volume.data[mask]
    if values.size < 2:
        raise VolumeError("mask selects fewer than 2 voxels; cannot normalize")
    values = values.astype(np.float64)
    lo = float(values.min())
    hi = float(np.percentile(values, 99))  # linear-interpolation percentile
    if hi == lo:
        raise VolumeError(f"degenerate intensity range within mask (min == p99 == {lo})")
    scaled = np.clip((volume.data.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0)
    scaled[~mask] = 0.0
    return replace(volume, data=scaled)


def slice_location(s: int, top: int, bot: int) -> float:
    """Approximate axial slice location in [-1, 1].

    Maps the lowest brain slice ``bot`` to -1, the highest ``top`` to 1 and
    their midpoint to 0.
    """
    if top == bot:
        raise VolumeError("top == bot: brain extent is a single slice, location undefined")
    if top < bot:
        raise VolumeError(f"expected top > bot, got top={top}, bot={bot}")
    return (2 * s - (top + bot)) / (top - bot)


def brain_extent(volume: Volume) -> tuple[int, int]:
    """(top, bot): the highest and lowest axial indices containing brain."""
    mask = volume.require_mask()
    occupied = np.flatnonzero(mask.any(axis=(0, 1)))
    if occupied.size == 0:
        raise VolumeError("mask is empty; no brain extent")
    return int(occupied[-1]), int(occupied[0])


def crop_offsets(volume: Volume, target_hw: tuple[int, int]) -> tuple[int, int]:
    """In-plane origin (i0, j0) of the crop window chosen by crop_center.

    The window is anchored on the center of the brain's in-plane bounding box
    (falling back to the volume center without a mask), then shifted as
    little as necessary to stay inside the volume.
    """
    th, tw = target_hw
    h, w = volume.data.shape[:2]
    if th > h or tw > w:
        raise VolumeError(f"crop target ({th},{tw}) exceeds volume in-plane size ({h},{w})")
    if th % SPATIAL_DIVISOR or tw % SPATIAL_DIVISOR:
        raise VolumeError(f"crop target ({th},{tw}) must be divisible by {SPATIAL_DIVISOR}")

    if volume.mask is not None and volume.mask.any():
        xs = np.flatnonzero(volume.mask.any(axis=(1, 2)))
        ys = np.flatnonzero(volume.mask.any(axis=(0, 2)))
        ci = (int(xs[0]) + int(xs[-1]) + 1) // 2
        cj = (int(ys[0]) + int(ys[-1]) + 1) // 2
    else:
        ci, cj = h // 2, w // 2
    i0 = min(max(ci - th // 2, 0), h - th)
    j0 = min(max(cj - tw // 2, 0), w - tw)
    return i0, j0


def crop_center(volume: Volume, target_hw: tuple[int, int]) -> Volume:
    """Center-anchored in-plane crop removing background.

    Mask and exclusion list are carried over unchanged in meaning (axial
    indices are untouched; only in-plane extent shrinks).
    """
    i0, j0 = crop_offsets(volume, target_hw)
    th, tw = target_hw
    sl = (slice(i0, i0 + th), slice(j0, j0 + tw))
    return Volume(
        data=volume.data[sl].copy(),
        spacing=volume.spacing,
        mask=None if volume.mask is None else volume.mask[sl].copy(),
        excluded_axial_slices=list(volume.excluded_axial_slices),
    )


def build_context(meta: SubjectMetadata, s: int, top: int, bot: int,
                  with_diagnosis: bool = True) -> ContextVector:
    """Context vector for slice ``s`` of a subject with brain extent (top, bot)."""
    diag = None
    if with_diagnosis:
        if meta.diagnosis not in DIAGNOSIS_CODES:
            raise VolumeError(
                f"subject {meta.subject_id}: a binary diagnosis "
                f"({sorted(DIAGNOSIS_CODES)}) is required for a diagnosis-conditioned context, "
                f"got {meta.diagnosis!r}"
            )
        diag = DIAGNOSIS_CODES[meta.diagnosis]
    return ContextVector(
        age_scaled=meta.age / AGE_SCALE,
        gender_code=GENDER_CODES[meta.gender],
        slice_location=slice_location(s, top, bot),
        diagnosis_code=diag,
    )


def slice_stack(data: np.ndarray, s: int, top: int, bot: int) -> np.ndarray:
    """3-channel stack of slice ``s`` and its axial neighbors.

    Neighbors outside the brain extent [bot, top] are replaced by the center
    slice (edge replication), so edge slices never see pure background.
    """
    lo = s - 1 if s - 1 >= bot else s
    hi = s + 1 if s + 1 <= top else s
    planes = [data[:, :, lo], data[:, :, s], data[:, :, hi]]
    return np.stack(planes, axis=0)


def extract_slice_samples(pair: tuple[Volume, Volume], meta: SubjectMetadata,
                          with_diagnosis: bool = True) -> list[SliceSample]:
    """Turn a co-registered (3T, 7T) pair into per-slice training samples.

    Emits one sample per axial slice carrying brain in the target volume,
    skipping slices on the target's exclusion list. Excluded slices still
    serve as input neighbors of their surviving neighbors, they just never
    become targets.
    """
    source, target = pair
    if source.data.shape != target.data.shape:
        raise VolumeError(
            f"volume pair shapes differ: {source.data.shape} vs {target.data.shape}"
        )
    top, bot = brain_extent(target)
    mask = target.require_mask()
    excluded = set(target.excluded_axial_slices)

    samples = []
    for s in range(bot, top + 1):
        if s in excluded or not mask[:, :, s].any():
            continue
        samples.append(
            SliceSample(
                input=slice_stack(source.data, s, top, bot).astype(np.float32),
                target=target.data[:, :, s].astype(np.float32)[None],
                context=build_context(meta, s, top, bot, with_diagnosis),
                axial_index=s,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# File-backed ingestion


def load_volume(image_path, mask_path=None, exclusions_path=None) -> Volume:
    """Load a NIfTI volume plus optional mask and artifact-slice sidecar.

    The sidecar is a JSON file holding either a plain list of axial indices
    or an object with an ``excluded_axial_slices`` key.
    """
    data, spacing = read_nifti(image_path)
    mask = None
    if mask_path is not None:
        mask_data, _ = read_nifti(mask_path)
        mask = mask_data > 0
    excluded = []
    if exclusions_path is not None and Path(exclusions_path).exists():
        payload = json.loads(Path(exclusions_path).read_text())
        if isinstance(payload, dict):
            payload = payload.get("excluded_axial_slices", [])
        excluded = [int(s) for s in payload]
    return Volume(data=data, spacing=spacing, mask=mask, excluded_axial_slices=excluded)


def save_volume(volume: Volume, image_path, mask_path=None):
    write_nifti(image_path, volume.data.astype(np.float32), volume.spacing)
    if mask_path is not None and volume.mask is not None:
        write_nifti(mask_path, volume.mask.astype(np.uint8), volume.spacing)


def load_metadata(csv_path) -> dict[str, SubjectMetadata]:
    """Load the subject metadata table (subject_id, age, gender, diagnosis[, split])."""
    df = pd.read_csv(csv_path, dtype={"subject_id": str})
    required = {"subject_id", "age", "gender"}
    missing = required - set(df.columns)
    if missing:
        raise VolumeError(f"metadata CSV is missing columns: {sorted(missing)}")
    out = {}
    for row in df.itertuples(index=False):
        diagnosis = getattr(row, "diagnosis", None)
        if diagnosis is not None and (pd.isna(diagnosis) or diagnosis == ""):
            diagnosis = None
        out[row.subject_id] = SubjectMetadata(
            subject_id=row.subject_id,
            age=float(row.age),
            gender=str(row.gender),
            diagnosis=diagnosis,
        )
    return out
