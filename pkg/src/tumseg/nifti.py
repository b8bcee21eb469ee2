"""Minimal single-file NIfTI-1 (.nii / .nii.gz) reader and writer.

Only what the pipeline needs: uint8, int16 and float32 voxel data, either
byte order on read, pixdim voxel sizes and scl_slope/scl_inter scaling.
Orientation fields (qform/sform) are carried through verbatim, never
interpreted.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BadMagic, IoFailure, TruncatedFile, UnsupportedDatatype

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\0"

DATATYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_CODES = {np.dtype(v): k for k, v in DATATYPES.items()}

# byte range of qform/sform/quatern/srow/intent_name, copied verbatim
_ORIENT = slice(252, 344)


@dataclass
class NiftiImage:
    data: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)
    header: Optional[bytes] = None  # raw 348-byte header as read


def _open(path, mode):
    path = str(path)
    return gzip.open(path, mode) if path.endswith(".gz") else open(path, mode)


def _endian(hdr):
    for end in "<>":
        ndim = struct.unpack_from(end + "h", hdr, 40)[0]
        if 1 <= ndim <= 7:
            return end
    raise BadMagic("dim[0] outside 1..7 in either byte order")


def nifti_read(path):
    """Read a NIfTI-1 file. Scaled data comes back as float32/float64."""
    try:
        with _open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, header needs {HEADER_SIZE}")
    hdr = raw[:HEADER_SIZE]
    if hdr[344:348] != MAGIC:
        raise BadMagic(f"{path}: magic {hdr[344:348]!r} is not single-file NIfTI-1")
    end = _endian(hdr)
    dim = struct.unpack_from(end + "8h", hdr, 40)
    datatype = struct.unpack_from(end + "h", hdr, 70)[0]
    pixdim = struct.unpack_from(end + "8f", hdr, 76)
    vox_offset = int(struct.unpack_from(end + "f", hdr, 108)[0])
    slope, inter = struct.unpack_from(end + "2f", hdr, 112)
    if datatype not in DATATYPES:
        raise UnsupportedDatatype(f"{path}: NIfTI datatype code {datatype}")
    shape = tuple(int(d) for d in dim[1:1 + dim[0]])
    dtype = np.dtype(DATATYPES[datatype]).newbyteorder(end)
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if len(raw) < vox_offset + nbytes:
        raise TruncatedFile(f"{path}: voxel data truncated")
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=vox_offset)
    data = data.reshape(shape, order="F").astype(dtype.newbyteorder("="))
    if slope != 0 and np.isfinite(slope) and not (slope == 1 and inter == 0):
        data = data * np.float32(slope) + np.float32(inter)
    n_space = min(3, len(shape))
    voxel_size = tuple(float(abs(p)) or 1.0 for p in pixdim[1:1 + n_space])
    return NiftiImage(np.ascontiguousarray(data), voxel_size, hdr)


def nifti_write(path, data, voxel_size=(1.0, 1.0, 1.0), datatype=None, template=None):
    """Write ``data`` as little-endian single-file NIfTI-1.

    ``datatype`` is a numpy dtype among uint8/int16/float32 (default: that of
    ``data``). ``template`` is a raw header whose orientation fields are kept.
    """
    data = np.asarray(data)
    dtype = np.dtype(np.dtype(datatype if datatype is not None else data.dtype).name)
    if dtype not in _CODES:
        raise UnsupportedDatatype(f"cannot write {dtype}")
    if not 1 <= data.ndim <= 7:
        raise UnsupportedDatatype(f"{data.ndim}-d arrays are not supported")
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    hdr[38] = ord("r")
    dims = [data.ndim] + list(data.shape) + [1] * (7 - data.ndim)
    struct.pack_into("<8h", hdr, 40, *dims)
    struct.pack_into("<hh", hdr, 70, _CODES[dtype], dtype.itemsize * 8)
    pix = [1.0] + [1.0] * 7
    for i, v in enumerate(voxel_size[:min(3, data.ndim)]):
        pix[1 + i] = float(v)
    struct.pack_into("<8f", hdr, 76, *pix)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[123] = 2 | 8  # mm, sec
    if template is not None:
        hdr[_ORIENT] = bytes(template)[_ORIENT]
    hdr[344:348] = MAGIC
    payload = bytes(hdr) + b"\0" * (VOX_OFFSET - HEADER_SIZE) \
        + np.asarray(data, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    try:
        with _open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
