"""Minimal NIfTI-1 volume IO.

Single-file ``.nii`` / ``.nii.gz`` only. The header is the fixed 348-byte
NIfTI-1 layout; data are stored Fortran-ordered as in every mainstream
implementation. Scaling via ``scl_slope``/``scl_inter`` is honored on read.
"""

from __future__ import annotations

import gzip
import os

import numpy as np

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"

# NIfTI-1 datatype codes we support.
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}

_HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "i4"),
        ("session_error", "i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "i2", 8),
        ("intent_p1", "f4"),
        ("intent_p2", "f4"),
        ("intent_p3", "f4"),
        ("intent_code", "i2"),
        ("datatype", "i2"),
        ("bitpix", "i2"),
        ("slice_start", "i2"),
        ("pixdim", "f4", 8),
        ("vox_offset", "f4"),
        ("scl_slope", "f4"),
        ("scl_inter", "f4"),
        ("slice_end", "i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "f4"),
        ("cal_min", "f4"),
        ("slice_duration", "f4"),
        ("toffset", "f4"),
        ("glmax", "i4"),
        ("glmin", "i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "i2"),
        ("sform_code", "i2"),
        ("quatern_b", "f4"),
        ("quatern_c", "f4"),
        ("quatern_d", "f4"),
        ("qoffset_x", "f4"),
        ("qoffset_y", "f4"),
        ("qoffset_z", "f4"),
        ("srow_x", "f4", 4),
        ("srow_y", "f4", 4),
        ("srow_z", "f4", 4),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert _HEADER_DTYPE.itemsize == HEADER_SIZE


class NiftiError(ValueError):
    """Malformed or unsupported NIfTI file."""


def _open(path, mode):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode)
    return open(path, mode)


def read_nifti(path):
    """Read a 3D NIfTI-1 file.

    Returns ``(data, spacing)`` where data is a 3D array in (x, y, z) index
    order and spacing the voxel size in mm along each axis.
    """
    with _open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"{path}: truncated header ({len(raw)} bytes)")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HEADER_DTYPE)[0]
    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_HEADER_DTYPE.newbyteorder())[0]
        if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
            raise NiftiError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")
    if not bytes(hdr["magic"]).startswith(b"n+1"):
        raise NiftiError(f"{path}: unsupported magic {bytes(hdr['magic'])!r} (single-file n+1 only)")

    ndim = int(hdr["dim"][0])
    shape = tuple(int(d) for d in hdr["dim"][1 : 1 + ndim])
    # Tolerate trailing singleton dims (some tools write 4D with t=1).
    while len(shape) > 3 and shape[-1] == 1:
        shape = shape[:-1]
    if len(shape) != 3:
        raise NiftiError(f"{path}: expected a 3D volume, got shape {shape}")

    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise NiftiError(f"{path}: unsupported datatype code {code}")
    dtype = np.dtype(_DTYPES[code])
    if hdr.dtype != _HEADER_DTYPE:  # byte-swapped file
        dtype = dtype.newbyteorder()

    offset = int(hdr["vox_offset"])
    count = int(np.prod(shape))
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F")

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data * (slope if slope != 0.0 else 1.0) + inter
    data = np.ascontiguousarray(data)

    spacing = tuple(float(abs(p)) for p in hdr["pixdim"][1:4])
    return data, spacing


def write_nifti(path, data, spacing=(1.0, 1.0, 1.0), dtype=None):
    """Write a 3D array to a single-file NIfTI-1 (.nii or .nii.gz).

    The affine is a plain scaling by ``spacing`` (the toolkit works on
    already co-registered volumes, so orientation metadata is not tracked).
    """
    data = np.asarray(data)
    if data.ndim != 3:
        raise NiftiError(f"expected a 3D array, got ndim={data.ndim}")
    if dtype is not None:
        data = data.astype(dtype)
    if data.dtype == np.bool_:
        data = data.astype(np.uint8)
    if np.dtype(data.dtype) not in _CODES:
        data = data.astype(np.float32)

    hdr = np.zeros((), dtype=_HEADER_DTYPE)
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"][0] = 3
    hdr["dim"][1:4] = data.shape
    hdr["dim"][4:] = 1
    hdr["datatype"] = _CODES[np.dtype(data.dtype)]
    hdr["bitpix"] = data.dtype.itemsize * 8
    hdr["pixdim"][0] = 1.0
    hdr["pixdim"][1:4] = spacing
    hdr["vox_offset"] = HEADER_SIZE + 4
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # mm
    hdr["sform_code"] = 1
    hdr["srow_x"] = (spacing[0], 0, 0, 0)
    hdr["srow_y"] = (0, spacing[1], 0, 0)
    hdr["srow_z"] = (0, 0, spacing[2], 0)
    hdr["magic"] = MAGIC_SINGLE

    parent = os.path.dirname(str(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with _open(path, "wb") as f:
        f.write(hdr.tobytes())
        f.write(b"\x00" * 4)  # no header extensions
        f.write(np.asfortranarray(data).tobytes(order="F"))
