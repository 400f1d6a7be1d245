"""HSIM model checkpoints.

Layout (little-endian)::

    b"HSIM" | u8 version=1 | u32 len | architecture JSON (utf-8) | u32 input_bands
    weights section   : u32 count, then tensors
    buffers section   : u32 count, then tensors (BN running statistics)
    optimizer section : u8 present; if 1: u32 step, u32 count, tensors named m:<name> / v:<name>

    tensor: u16 name length | name (utf-8) | u8 rank | rank x u32 dims | float32 payload
"""

import io
import json
import struct

import numpy as np

from hsitransfer.errors import FormatError
from hsitransfer.nn.arch import ArchitectureConfig
from hsitransfer.nn.model import EXTRACTOR, ModelParams
from hsitransfer.nn.optim import AdamState

MAGIC = b"HSIM"
VERSION = 1


def _write_tensor(f, name, arr):
    raw = name.encode()
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _write_section(f, tensors):
    f.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        _write_tensor(f, name, arr)


def _read(f, n):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError("checkpoint truncated")
    return buf


def _read_section(f):
    (count,) = struct.unpack("<I", _read(f, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read(f, 2))
        name = _read(f, nlen).decode()
        (rank,) = struct.unpack("<B", _read(f, 1))
        dims = struct.unpack(f"<{rank}I", _read(f, 4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(_read(f, 4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    return out


def to_bytes(params, optimizer=None):
    f = io.BytesIO()
    f.write(MAGIC)
    f.write(struct.pack("<B", VERSION))
    arch = json.dumps(params.arch.to_dict(), sort_keys=True).encode()
    f.write(struct.pack("<I", len(arch)))
    f.write(arch)
    f.write(struct.pack("<I", params.input_bands))
    _write_section(f, params.weights)
    _write_section(f, params.buffers)
    if optimizer is None:
        f.write(struct.pack("<B", 0))
    else:
        f.write(struct.pack("<BI", 1, optimizer.t))
        moments = {f"m:{k}": v for k, v in optimizer.m.items()}
        moments.update({f"v:{k}": v for k, v in optimizer.v.items()})
        _write_section(f, moments)
    return f.getvalue()


def from_bytes(buf):
    f = io.BytesIO(buf)
    if f.read(4) != MAGIC:
        raise FormatError("not an HSIM checkpoint")
    (version,) = struct.unpack("<B", _read(f, 1))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (alen,) = struct.unpack("<I", _read(f, 4))
    try:
        arch = ArchitectureConfig.from_dict(json.loads(_read(f, alen).decode()))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad architecture block: {exc}") from None
    (bands,) = struct.unpack("<I", _read(f, 4))
    weights = _read_section(f)
    buffers = _read_section(f)
    (has_opt,) = struct.unpack("<B", _read(f, 1))
    optimizer = None
    if has_opt:
        (t,) = struct.unpack("<I", _read(f, 4))
        moments = _read_section(f)
        optimizer = AdamState(
            t,
            {k[2:]: v for k, v in moments.items() if k.startswith("m:")},
            {k[2:]: v for k, v in moments.items() if k.startswith("v:")},
        )
    if f.read(1):
        raise FormatError("trailing bytes after checkpoint")
    return ModelParams(arch, bands, weights, buffers), optimizer


def save(params, path, optimizer=None):
    with open(path, "wb") as f:
        f.write(to_bytes(params, optimizer))


def load(path):
    with open(path, "rb") as f:
        return from_bytes(f.read())


def extractor_bytes(params):
    """Serialized extractor weights and BN running statistics, in name order."""
    f = io.BytesIO()
    _write_section(f, {k: params.weights[k] for k in sorted(params.weights) if k.startswith(EXTRACTOR)})
    _write_section(f, {k: params.buffers[k] for k in sorted(params.buffers) if k.startswith(EXTRACTOR)})
    return f.getvalue()
