"""Binary containers for cubes (HSIC) and label maps (HSIL), plus a CSV importer.

Both formats are little-endian with a fixed header::

    HSIC: b"HSIC" | u8 version=1 | u32 height | u32 width | u32 bands | u8 dtype=1
          then height*width*bands float32 values in (y, x, band) order
    HSIL: b"HSIL" | u8 version=1 | u32 height | u32 width
          then height*width uint16 labels, 0 = unlabeled
"""

import csv
import struct

import numpy as np

from hsitransfer.data import LabelMap, SpectralCube
from hsitransfer.errors import FormatError

CUBE_MAGIC = b"HSIC"
LABEL_MAGIC = b"HSIL"
VERSION = 1
DTYPE_F32 = 1

_CUBE_HEADER = struct.Struct("<4sBIIIB")
_LABEL_HEADER = struct.Struct("<4sBII")


def _read_header(buf, header, magic, path):
    if len(buf) < header.size:
        raise FormatError(f"{path}: file too short for header ({len(buf)} bytes)")
    fields = header.unpack_from(buf)
    if fields[0] != magic:
        raise FormatError(f"{path}: bad magic {fields[0]!r}, expected {magic!r}")
    if fields[1] != VERSION:
        raise FormatError(f"{path}: unsupported version {fields[1]}")
    return fields


def _payload(buf, offset, count, dtype, path):
    expected = count * np.dtype(dtype).itemsize
    actual = len(buf) - offset
    if actual < expected:
        raise FormatError(
            f"{path}: truncated payload, {actual // np.dtype(dtype).itemsize} of {count} values present"
        )
    if actual > expected:
        raise FormatError(f"{path}: {actual - expected} trailing bytes after payload")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset)


def cube_to_bytes(cube):
    h, w, b = cube.data.shape
    header = _CUBE_HEADER.pack(CUBE_MAGIC, VERSION, h, w, b, DTYPE_F32)
    return header + cube.data.astype("<f4").tobytes()


def cube_from_bytes(buf, path="<bytes>"):
    _, _, h, w, b, dtype = _read_header(buf, _CUBE_HEADER, CUBE_MAGIC, path)
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    if 0 in (h, w, b):
        raise FormatError(f"{path}: zero dimension in header {h}x{w}x{b}")
    data = _payload(buf, _CUBE_HEADER.size, h * w * b, "<f4", path)
    return SpectralCube(data.reshape(h, w, b).astype(np.float32))


def labels_to_bytes(labels):
    h, w = labels.labels.shape
    return _LABEL_HEADER.pack(LABEL_MAGIC, VERSION, h, w) + labels.labels.astype("<u2").tobytes()


def labels_from_bytes(buf, path="<bytes>"):
    _, _, h, w = _read_header(buf, _LABEL_HEADER, LABEL_MAGIC, path)
    if 0 in (h, w):
        raise FormatError(f"{path}: zero dimension in header {h}x{w}")
    data = _payload(buf, _LABEL_HEADER.size, h * w, "<u2", path)
    return LabelMap(data.reshape(h, w).astype(np.uint16))


def load_cube(path):
    with open(path, "rb") as f:
        return cube_from_bytes(f.read(), path)


def save_cube(cube, path):
    with open(path, "wb") as f:
        f.write(cube_to_bytes(cube))


def load_labels(path):
    with open(path, "rb") as f:
        return labels_from_bytes(f.read(), path)


def save_labels(labels, path):
    with open(path, "wb") as f:
        f.write(labels_to_bytes(labels))


def _int_field(row, key, lineno):
    try:
        return int(row[key])
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"line {lineno}: bad or missing integer field {key!r}") from None


def cube_from_csv(path, height=None, width=None, bands=None):
    """Build a cube from ``y,x,band,value`` rows.

    Dimensions default to one past the largest index seen. Every cell must
    be given exactly once.
    """
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for lineno, row in enumerate(reader, start=2):
            y, x, b = (_int_field(row, k, lineno) for k in ("y", "x", "band"))
            try:
                v = float(row["value"])
            except (KeyError, TypeError, ValueError):
                raise FormatError(f"line {lineno}: bad or missing value") from None
            if min(y, x, b) < 0:
                raise FormatError(f"line {lineno}: negative index")
            rows.append((lineno, y, x, b, v))
    if not rows:
        raise FormatError(f"{path}: no data rows")
    dims = [height, width, bands]
    for axis in range(3):
        top = max(r[axis + 1] for r in rows) + 1
        if dims[axis] is None:
            dims[axis] = top
        elif top > dims[axis]:
            name = ("y", "x", "band")[axis]
            bad = next(r[0] for r in rows if r[axis + 1] >= dims[axis])
            raise FormatError(f"line {bad}: {name} index outside declared size {dims[axis]}")
    data = np.zeros(dims, dtype=np.float32)
    seen = np.zeros(dims, dtype=bool)
    for lineno, y, x, b, v in rows:
        if seen[y, x, b]:
            raise FormatError(f"line {lineno}: duplicate cell ({y}, {x}, {b})")
        seen[y, x, b] = True
        data[y, x, b] = v
    if not seen.all():
        raise FormatError(f"{path}: {int((~seen).sum())} cells missing")
    return SpectralCube(data)


def labels_from_csv(path, height=None, width=None):
    """Build a label map from ``y,x,label`` rows; absent pixels are unlabeled."""
    rows = []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.DictReader(f), start=2):
            y, x, lab = (_int_field(row, k, lineno) for k in ("y", "x", "label"))
            if min(y, x, lab) < 0 or lab > 0xFFFF:
                raise FormatError(f"line {lineno}: index or label out of range")
            rows.append((lineno, y, x, lab))
    if not rows:
        raise FormatError(f"{path}: no data rows")
    h = height if height is not None else max(r[1] for r in rows) + 1
    w = width if width is not None else max(r[2] for r in rows) + 1
    out = np.zeros((h, w), dtype=np.uint16)
    for lineno, y, x, lab in rows:
        if y >= h or x >= w:
            raise FormatError(f"line {lineno}: pixel outside declared {h}x{w}")
        out[y, x] = lab
    return LabelMap(out)
