"""MCT tensor files and the directory-of-files dataset layout.

Tensor file: little-endian, magic ``MCT1``, u8 dtype code, u8 rank,
u32 dims, raw row-major payload. A dataset is a directory of
``<name>.mct`` files plus an optional ``labels.csv`` with
``filename,label`` columns.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .ir import DType

TENSOR_MAGIC = b"MCT1"

_DTYPE_CODE = {DType.FP32: 0, DType.FP16: 1, DType.INT8: 2, DType.INT32: 3}
_CODE_DTYPE = {v: k for k, v in _DTYPE_CODE.items()}
_NP_TO_DTYPE = {
    np.dtype("float32"): DType.FP32,
    np.dtype("float16"): DType.FP16,
    np.dtype("int8"): DType.INT8,
    np.dtype("int32"): DType.INT32,
}


class TensorFileError(Exception):
    pass


class DatasetError(Exception):
    pass


def save_tensor(path: str | Path, values: np.ndarray) -> Path:
    arr = np.ascontiguousarray(values)
    if arr.dtype not in _NP_TO_DTYPE:
        raise TensorFileError(f"unsupported dtype {arr.dtype}")
    dtype = _NP_TO_DTYPE[arr.dtype]
    out = bytearray()
    out += TENSOR_MAGIC
    out += struct.pack("<BB", _DTYPE_CODE[dtype], arr.ndim)
    for dim in arr.shape:
        out += struct.pack("<I", dim)
    out += arr.astype(dtype.np).tobytes()
    path = Path(path)
    path.write_bytes(bytes(out))
    return path


def load_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise TensorFileError(f"{path}: expected magic {TENSOR_MAGIC!r}, got {data[:4]!r}")
    if len(data) < 6:
        raise TensorFileError(f"{path}: truncated header")
    dtype_code, rank = struct.unpack("<BB", data[4:6])
    if dtype_code not in _CODE_DTYPE:
        raise TensorFileError(f"{path}: unknown dtype code {dtype_code}")
    dtype = _CODE_DTYPE[dtype_code]
    offset = 6
    if len(data) < offset + 4 * rank:
        raise TensorFileError(f"{path}: truncated dims")
    shape = struct.unpack(f"<{rank}I", data[offset:offset + 4 * rank]) if rank else ()
    offset += 4 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    want = count * dtype.size
    payload = data[offset:]
    if len(payload) != want:
        raise TensorFileError(f"{path}: payload is {len(payload)} bytes, header wants {want}")
    return np.frombuffer(payload, dtype=dtype.np).reshape(shape)


def list_dataset(directory: str | Path) -> list[Path]:
    """Tensor files in sorted filename order, the canonical traversal
    order for benchmarking."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory} is not a directory")
    files = sorted(directory.glob("*.mct"))
    if not files:
        raise DatasetError(f"no .mct files in {directory}")
    return files


def load_labels(directory: str | Path) -> dict[str, str]:
    """Read labels.csv (filename,label) from a dataset directory."""
    path = Path(directory) / "labels.csv"
    if not path.is_file():
        raise DatasetError(f"{path} not found")
    return read_label_csv(path)


def read_label_csv(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        # Header row is optional; treat a non-header first row as data.
        if [col.strip().lower() for col in header[:2]] != ["filename", "label"]:
            if len(header) >= 2:
                out[header[0]] = header[1]
        for row in reader:
            if len(row) >= 2:
                out[row[0]] = row[1]
    if not out:
        raise DatasetError(f"{path}: no label rows")
    return out


def iter_batches(files: list[Path], batch_size: int, cycle: bool = False):
    """Yield stacked [N, ...] arrays from per-sample tensor files.

    Without ``cycle`` the final batch keeps its true (possibly smaller)
    size; with it the file list repeats forever.
    """
    if batch_size < 1:
        raise DatasetError("batch_size must be >= 1")
    if not files:
        raise DatasetError("empty file list")
    pending: list[np.ndarray] = []
    while True:
        for path in files:
            pending.append(load_tensor(path))
            if len(pending) == batch_size:
                yield np.stack(pending)
                pending = []
        if not cycle:
            break
    if pending:
        yield np.stack(pending)
