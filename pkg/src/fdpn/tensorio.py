"""Binary tensor files and named-tensor containers.

Tensor record layout (little-endian)::

    b"FDPN" | version u32 | rank u32 | dims u32 * rank | float32 payload (row-major)

A container (checkpoints) wraps several records::

    b"FDPC" | version u32 | meta_len u32 | meta (UTF-8 JSON) | count u32
    then per entry: name_len u32 | name (UTF-8) | tensor record
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Any, BinaryIO, Mapping

import numpy as np

TENSOR_MAGIC = b"FDPN"
CONTAINER_MAGIC = b"FDPC"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised when a tensor file is truncated, corrupt, or of the wrong version."""


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}: wanted {n} bytes, got {len(data)}")
    return data


def _u32(fh: BinaryIO, what: str) -> int:
    return struct.unpack("<I", _read_exact(fh, 4, what))[0]


def write_tensor_record(fh: BinaryIO, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype="<f4", order="C")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<II", FORMAT_VERSION, arr.ndim))
    if arr.ndim:
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_tensor_record(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TENSOR_MAGIC!r}")
    version = _u32(fh, "version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    rank = _u32(fh, "rank")
    if rank > 16:
        raise FormatError(f"implausible rank {rank}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims")) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, 4 * count, "payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def save_tensor(path: str | Path, array: np.ndarray) -> None:
    buf = io.BytesIO()
    write_tensor_record(buf, array)
    Path(path).write_bytes(buf.getvalue())


def load_tensor(path: str | Path) -> np.ndarray:
    """Read a single tensor file; trailing bytes are rejected."""
    data = Path(path).read_bytes()
    fh = io.BytesIO(data)
    arr = read_tensor_record(fh)
    if fh.tell() != len(data):
        raise FormatError(
            f"{path}: payload size mismatch, header declares {fh.tell()} bytes but file has {len(data)}"
        )
    return arr


def save_container(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any]) -> None:
    buf = io.BytesIO()
    meta_bytes = json.dumps(dict(meta), sort_keys=True).encode("utf-8")
    buf.write(CONTAINER_MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        write_tensor_record(buf, np.asarray(tensors[name]))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    data = Path(path).read_bytes()
    fh = io.BytesIO(data)
    magic = _read_exact(fh, 4, "magic")
    if magic != CONTAINER_MAGIC:
        raise FormatError(f"bad container magic {magic!r}")
    version = _u32(fh, "version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {version}")
    meta_len = _u32(fh, "metadata length")
    try:
        meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt metadata block: {exc}") from exc
    tensors = {}
    for _ in range(_u32(fh, "tensor count")):
        name = _read_exact(fh, _u32(fh, "name length"), "name").decode("utf-8")
        tensors[name] = read_tensor_record(fh)
    if fh.tell() != len(data):
        raise FormatError(f"{path}: {len(data) - fh.tell()} trailing bytes")
    return tensors, meta
