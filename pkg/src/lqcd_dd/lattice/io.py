"""QPL2 gauge-configuration files.

Layout (little-endian, 32-byte header)::

    offset  size  field
    0       4     magic b"QPL2"
    4       2     format version (u16) = 1
    6       2     precision code (u16): 0 double, 1 single, 2 half
    8       16    dims Lx, Ly, Lz, Lt (4 x u32)
    24      8     payload byte count (u64)

The payload holds the links in site-lexicographic order, direction-major
within a site (x, y, z, t), each 3x3 matrix row-major as (re, im) pairs of
IEEE 754 binary64/binary32/binary16 values.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .fields import GaugeField
from .geometry import LatticeGeometry

MAGIC = b"QPL2"
VERSION = 1
HEADER = struct.Struct("<4sHH4IQ")
HEADER_SIZE = HEADER.size  # 32
PRECISION_CODES = {"double": 0, "single": 1, "half": 2}
REAL_DTYPE = {"double": "<f8", "single": "<f4", "half": "<f2"}
MAX_VOLUME = 1 << 32


class GaugeFileError(Exception):
    code = 1


class GaugeHeaderError(GaugeFileError):
    code = 10


class GaugeTruncatedError(GaugeFileError):
    code = 11


class GaugeDimensionError(GaugeFileError):
    code = 12


def payload_bytes(field: GaugeField) -> bytes:
    reals = np.stack([field.links.real, field.links.imag], axis=-1)
    return reals.astype(REAL_DTYPE[field.precision]).tobytes()


def checksum(field: GaugeField) -> str:
    """SHA-256 (hex) of the serialized payload."""
    return hashlib.sha256(payload_bytes(field)).hexdigest()


def write_gauge(field: GaugeField, path) -> Path:
    path = Path(path)
    payload = payload_bytes(field)
    header = HEADER.pack(MAGIC, VERSION, PRECISION_CODES[field.precision],
                         *field.geometry.dims, len(payload))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    return path


def read_gauge(path, boundary=(1, 1, 1, 1)) -> GaugeField:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise GaugeTruncatedError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, pcode, lx, ly, lz, lt, nbytes = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise GaugeHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise GaugeHeaderError(f"{path}: unsupported format version {version}")
    names = {v: k for k, v in PRECISION_CODES.items()}
    if pcode not in names:
        raise GaugeHeaderError(f"{path}: unknown precision code {pcode}")
    precision = names[pcode]
    dims = (lx, ly, lz, lt)
    volume = lx * ly * lz * lt
    if volume == 0 or volume > MAX_VOLUME:
        raise GaugeDimensionError(f"{path}: unusable dims {dims}")
    itemsize = np.dtype(REAL_DTYPE[precision]).itemsize
    expected = volume * 4 * 18 * itemsize
    if nbytes != expected:
        raise GaugeDimensionError(f"{path}: payload size {nbytes} does not match dims {dims}")
    if len(raw) - HEADER_SIZE < nbytes:
        raise GaugeTruncatedError(f"{path}: payload truncated ({len(raw) - HEADER_SIZE} of {nbytes} bytes)")
    reals = np.frombuffer(raw, dtype=REAL_DTYPE[precision], count=volume * 72, offset=HEADER_SIZE)
    reals = reals.reshape(volume, 4, 3, 3, 2)
    links = reals[..., 0].astype(np.float64) + 1j * reals[..., 1].astype(np.float64)
    return GaugeField(LatticeGeometry(dims, boundary), links, precision)
