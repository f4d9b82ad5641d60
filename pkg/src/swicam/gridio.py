"""Grid files and delimiter-separated tables.

Grid layout (little-endian, 64-byte header, then a row-major payload)::

    offset  size  field
    0       8     magic b"SWIGRID1"
    8       4     format version (1)
    12      4     dtype code: 1 float32, 2 complex64 (re, im interleaved), 3 uint16
    16      4     role code (see ROLES)
    20      4     width
    24      4     height
    28      8     pitch, meters/pixel
    36      8     scalar: synthetic wavelength (field/phase/depth) or full-well
                  scale (interferogram); 0 if unused
    44      4     aux: bit depth (interferogram), offset convention (depth),
                  provenance (synthetic field)
    48      16    two float64 extras: beat-note parent wavelengths

Invalid pixels of real maps are stored as NaN; invalid pixels of a
synthetic field as exact zeros.
"""

from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, FormatError, RoleMismatchError
from .field import ComplexField, PhaseMap
from .recon import OFFSET_CONVENTIONS, PROVENANCES, DepthMap, SyntheticField, UnwrapResult
from .scene import CameraSpec, Interferogram

MAGIC = b"SWIGRID1"
VERSION = 1
HEADER = struct.Struct("<8sIIIIIddIdd")
assert HEADER.size == 64

DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<c8"), 3: np.dtype("<u2")}
DTYPE_CODES = {v.str: k for k, v in DTYPES.items()}
ROLES = {"field": 1, "interferogram": 2, "depth": 3, "phase": 4, "amplitude": 5, "synthetic": 6}
ROLE_NAMES = {v: k for k, v in ROLES.items()}
ROLE_DTYPE = {"field": 2, "interferogram": 3, "depth": 1, "phase": 1, "amplitude": 1, "synthetic": 2}


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _pack(role: str, data: np.ndarray, pitch: float, scalar=0.0, aux=0, extras=(0.0, 0.0)) -> bytes:
    code = ROLE_DTYPE[role]
    payload = np.ascontiguousarray(data, dtype=DTYPES[code])
    h, w = payload.shape
    head = HEADER.pack(MAGIC, VERSION, code, ROLES[role], w, h, float(pitch), float(scalar), int(aux),
                       float(extras[0]), float(extras[1]))
    return head + payload.tobytes()


def encode_grid(value, role: Optional[str] = None) -> bytes:
    """Serialize a supported object; ``role`` disambiguates plain arrays.

    Plain arrays and :class:`PhaseMap` default to ``phase``.
    """
    if isinstance(value, Interferogram):
        cam = value.camera
        return _pack("interferogram", value.data, value.pitch, cam.full_well_scale or 0.0, cam.bit_depth)
    if isinstance(value, SyntheticField):
        data = np.where(value.mask, value.field.data, 0.0)
        parents = value.parents or (0.0, 0.0)
        return _pack("synthetic", data, value.pitch, value.synthetic_wavelength,
                     PROVENANCES.index(value.provenance), parents)
    if isinstance(value, ComplexField):
        return _pack("field", value.data, value.pitch)
    if isinstance(value, DepthMap):
        z = np.where(value.mask, value.z, np.nan)
        return _pack("depth", z, value.pitch, value.synthetic_wavelength or 0.0,
                     OFFSET_CONVENTIONS.index(value.offset_convention))
    if isinstance(value, (PhaseMap, UnwrapResult)):
        lam = getattr(value, "synthetic_wavelength", None) or 0.0
        return _pack("phase", np.where(value.valid, value.phase, np.nan), 1.0, lam)
    arr = np.asarray(value)
    role = role or "phase"
    if role not in ("phase", "amplitude", "depth"):
        raise ConfigError(f"cannot store a plain array as {role!r}")
    return _pack(role, arr, 1.0)


def write_grid(value, path, role: Optional[str] = None, pitch: Optional[float] = None) -> None:
    blob = encode_grid(value, role)
    if pitch is not None:
        blob = blob[:28] + struct.pack("<d", float(pitch)) + blob[36:]
    atomic_write_bytes(path, blob)


def read_header(blob: bytes) -> dict:
    if len(blob) < HEADER.size:
        raise FormatError(f"header needs {HEADER.size} bytes, file has {len(blob)}", offset=len(blob))
    magic, version, code, role, w, h, pitch, scalar, aux, e1, e2 = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=8)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=12)
    if role not in ROLE_NAMES:
        raise FormatError(f"unknown role code {role}", offset=16)
    if ROLE_DTYPE[ROLE_NAMES[role]] != code:
        raise FormatError(f"role {ROLE_NAMES[role]} cannot use dtype code {code}", offset=12)
    if w == 0 or h == 0:
        raise FormatError(f"empty grid {w}x{h}", offset=20)
    if not (np.isfinite(pitch) and pitch > 0):
        raise FormatError(f"pitch must be positive, got {pitch}", offset=28)
    return dict(dtype=code, role=ROLE_NAMES[role], width=w, height=h, pitch=pitch, scalar=scalar, aux=aux,
                extras=(e1, e2))


def decode_grid(blob: bytes, role: Optional[str] = None):
    """Inverse of :func:`encode_grid`; ``role`` (if given) must match."""
    hdr = read_header(blob)
    if role is not None and role not in ROLES:
        raise ConfigError(f"unknown role {role!r}")
    if role is not None and hdr["role"] != role:
        raise RoleMismatchError(f"file holds a {hdr['role']} grid, requested {role}", offset=16)
    dt = DTYPES[hdr["dtype"]]
    w, h = hdr["width"], hdr["height"]
    expected = HEADER.size + w * h * dt.itemsize
    if len(blob) != expected:
        what = "truncated" if len(blob) < expected else "trailing bytes in"
        raise FormatError(f"{what} payload: expected {expected} bytes, got {len(blob)}",
                          offset=min(len(blob), expected))
    data = np.frombuffer(blob, dtype=dt, offset=HEADER.size).reshape(h, w)
    pitch, scalar, aux = hdr["pitch"], hdr["scalar"], hdr["aux"]
    r = hdr["role"]
    if r == "interferogram":
        try:
            cam = CameraSpec(bit_depth=aux, full_well_scale=scalar or None)
        except ConfigError as exc:
            raise FormatError(str(exc), offset=44) from None
        return Interferogram(data, cam, pitch)
    if r == "field":
        return ComplexField(data, pitch)
    if r == "synthetic":
        if aux >= len(PROVENANCES):
            raise FormatError(f"unknown provenance code {aux}", offset=44)
        prov = PROVENANCES[aux]
        parents = hdr["extras"] if prov == "beat-note" else ()
        f = ComplexField(data, pitch)
        return SyntheticField(f, scalar, prov, parents, mask=np.abs(f.data) > 0)
    values = data.astype(np.float64)
    valid = np.isfinite(values)
    if r == "depth":
        if aux >= len(OFFSET_CONVENTIONS):
            raise FormatError(f"unknown offset convention code {aux}", offset=44)
        return DepthMap(values, valid, OFFSET_CONVENTIONS[aux], scalar or None, pitch)
    if r == "phase":
        return PhaseMap(values, valid)
    return values


def read_grid(path, role: Optional[str] = None):
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"no such grid file: {path}") from None
    return decode_grid(blob, role)


def grid_role(path) -> str:
    with open(path, "rb") as f:
        head = f.read(HEADER.size)
    return read_header(head)["role"]


def format_table(header: Sequence[str], rows: Iterable[Sequence], delimiter: str = ",") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ConfigError(f"row {row!r} does not match header {header!r}")
        w.writerow(row)
    return buf.getvalue()


def write_table(path, header: Sequence[str], rows: Iterable[Sequence], delimiter: str = ",") -> None:
    atomic_write_text(path, format_table(header, rows, delimiter))


def read_table(path, delimiter: str = ",") -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f, delimiter=delimiter))
    if not rows:
        raise FormatError("empty table", offset=0)
    return rows[0], rows[1:]
