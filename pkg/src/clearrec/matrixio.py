"""CLRF binary matrix format and the zip checkpoint container.

Layout of a ``.clrf`` file, little-endian::

    magic  b"CLRF"   4 bytes
    version u32      (= 1)
    rows    u32
    cols    u32
    dtype   u8       0 = float32, 1 = float64
    payload rows*cols values, row-major
"""
import hashlib
import json
import struct
import zipfile

import numpy as np

from .exceptions import FormatError

MAGIC = b"CLRF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}

# fixed timestamp so identical content gives identical container bytes
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def matrix_to_bytes(m, dtype=None):
    arr = np.asarray(m)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise FormatError(f"CLRF stores 2-D matrices, got shape {arr.shape}")
    dtype = np.dtype(dtype) if dtype is not None else arr.dtype
    if dtype not in _CODES:
        dtype = np.dtype("float64")
    code = _CODES[dtype]
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    return _HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1], code) + payload


def matrix_from_bytes(buf, widen=True):
    """Parse CLRF bytes. float32 payloads are widened to float64 unless
    ``widen`` is False."""
    if len(buf) < _HEADER.size:
        raise FormatError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(buf)}", offset=len(buf)
        )
    magic, version, rows, cols, code = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=16)
    dtype = _DTYPES[code]
    expected = rows * cols * dtype.itemsize
    actual = len(buf) - _HEADER.size
    if actual != expected:
        raise FormatError(
            f"payload size mismatch: expected {expected} bytes, got {actual}",
            offset=_HEADER.size + min(actual, expected),
        )
    arr = np.frombuffer(buf, dtype=dtype, offset=_HEADER.size).reshape(rows, cols)
    if widen:
        return arr.astype(np.float64)
    return arr.astype(dtype.newbyteorder("="))


def save_matrix(path, m, dtype=None):
    with open(path, "wb") as fh:
        fh.write(matrix_to_bytes(m, dtype))


def load_matrix(path, widen=True):
    with open(path, "rb") as fh:
        return matrix_from_bytes(fh.read(), widen=widen)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_container(path, tensors, manifest):
    """Write a zip holding ``manifest.json`` plus one CLRF member per tensor.

    Tensor names are listed in the manifest under ``"tensors"`` in the order
    given, so the file is byte-identical for identical inputs.
    """
    manifest = dict(manifest)
    manifest["tensors"] = list(tensors)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=_ZIP_EPOCH)
        zf.writestr(info, json.dumps(manifest, indent=2, sort_keys=False).encode())
        for name, arr in tensors.items():
            info = zipfile.ZipInfo(f"{name}.clrf", date_time=_ZIP_EPOCH)
            zf.writestr(info, matrix_to_bytes(np.asarray(arr, dtype=np.float64)))


def read_container(path):
    try:
        with zipfile.ZipFile(path, "r") as zf:
            manifest = json.loads(zf.read("manifest.json"))
            tensors = {}
            for name in manifest.get("tensors", []):
                try:
                    tensors[name] = matrix_from_bytes(zf.read(f"{name}.clrf"))
                except FormatError as exc:
                    raise FormatError(f"checkpoint member {name!r}: {exc}") from exc
    except (zipfile.BadZipFile, KeyError) as exc:
        raise FormatError(f"not a valid checkpoint container: {exc}") from exc
    return tensors, manifest


def content_hash(*arrays):
    """SHA-256 over the float64 bytes of the given arrays, for run logs."""
    h = hashlib.sha256()
    for arr in arrays:
        a = np.ascontiguousarray(arr)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


__all__ = [
    "MAGIC",
    "content_hash",
    "load_matrix",
    "matrix_from_bytes",
    "matrix_to_bytes",
    "read_container",
    "save_matrix",
    "sha256_file",
    "write_container",
]
