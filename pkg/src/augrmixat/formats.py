"""Binary tensor (AT1), checkpoint (ATC) and dataset directory formats.

AT1 record::

    b"AT1\\0" | u8 dtype (1=f32, 2=u8) | u8 ndim | 2 pad bytes | ndim x u64 LE dims | LE payload

ATC checkpoint::

    b"ATC\\0" | u16 LE entry count | entries of (u16 LE name length, UTF-8 name, AT1 record)

The architecture descriptor travels as the u8 entry ``__arch__`` holding UTF-8 JSON.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .model import LayerStack

AT1_MAGIC = b"AT1\x00"
ATC_MAGIC = b"ATC\x00"
ARCH_ENTRY = "__arch__"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 1, np.dtype("uint8"): 2}


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    pass


def _read_exact(buf: io.BytesIO, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise TruncatedError(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"AT1 stores float32 or uint8, not {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    header = AT1_MAGIC + struct.pack("<BBxx", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def _decode_tensor_from(buf: io.BytesIO) -> np.ndarray:
    if _read_exact(buf, 4, "tensor magic") != AT1_MAGIC:
        raise BadMagicError("bad magic: not an AT1 tensor record")
    code, ndim = struct.unpack("<BBxx", _read_exact(buf, 4, "tensor header"))
    if code not in _DTYPES:
        raise FormatError(f"unknown AT1 dtype code {code}")
    dims = struct.unpack(f"<{ndim}Q", _read_exact(buf, 8 * ndim, "tensor dims"))
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    payload = _read_exact(buf, count * dtype.itemsize, "tensor payload")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def decode_tensor(data: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    arr = _decode_tensor_from(buf)
    if buf.read(1):
        raise FormatError("trailing bytes after AT1 record")
    return arr


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def save_checkpoint(stack: LayerStack) -> bytes:
    arch = json.dumps(stack.architecture(), sort_keys=True).encode()
    entries = [(ARCH_ENTRY, np.frombuffer(arch, dtype=np.uint8))]
    entries += [(name, p.astype(np.float32)) for name, p in stack.named_params()]
    out = [ATC_MAGIC, struct.pack("<H", len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        out += [struct.pack("<H", len(raw)), raw, encode_tensor(arr)]
    return b"".join(out)


def read_checkpoint_entries(data: bytes) -> dict[str, np.ndarray]:
    buf = io.BytesIO(data)
    if _read_exact(buf, 4, "checkpoint magic") != ATC_MAGIC:
        raise BadMagicError("bad magic: not an ATC checkpoint")
    (count,) = struct.unpack("<H", _read_exact(buf, 2, "entry count"))
    entries = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(buf, 2, "entry name length"))
        name = _read_exact(buf, n, "entry name").decode("utf-8")
        entries[name] = _decode_tensor_from(buf)
    return entries


def load_checkpoint(data: bytes, dtype=np.float32) -> LayerStack:
    entries = read_checkpoint_entries(data)
    if ARCH_ENTRY not in entries:
        raise FormatError("checkpoint has no architecture entry")
    arch = json.loads(entries.pop(ARCH_ENTRY).tobytes().decode("utf-8"))
    stack = LayerStack.from_architecture(arch, dtype=dtype)
    expected = dict(stack.named_params())
    if set(entries) != set(expected):
        raise ShapeMismatchError(f"parameter names differ: file has {sorted(entries)}, "
                                 f"architecture needs {sorted(expected)}")
    for name, p in expected.items():
        if entries[name].shape != p.shape:
            raise ShapeMismatchError(f"{name}: file shape {entries[name].shape} != architecture shape {p.shape}")
        p[...] = entries[name]
    return stack


def write_checkpoint(path, stack: LayerStack) -> None:
    Path(path).write_bytes(save_checkpoint(stack))


def read_checkpoint(path, dtype=np.float32) -> LayerStack:
    return load_checkpoint(Path(path).read_bytes(), dtype=dtype)


# dataset directories ---------------------------------------------------------

def write_dataset(out_dir, images, labels, meta: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "images.at1", np.asarray(images, dtype=np.float32))
    write_tensor(out / "labels.at1", np.asarray(labels, dtype=np.uint8))
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_dataset(data_dir):
    """Load ``(images, labels, meta)`` from a dataset directory, validating the invariants."""
    d = Path(data_dir)
    images = read_tensor(d / "images.at1")
    labels = read_tensor(d / "labels.at1").astype(np.int64)
    meta = json.loads((d / "meta.json").read_text())
    if images.ndim != 4:
        raise FormatError(f"images must be [N, C, H, W], got shape {images.shape}")
    if labels.shape != (images.shape[0],):
        raise FormatError(f"{images.shape[0]} images but labels have shape {labels.shape}")
    k = int(meta.get("num_classes", labels.max() + 1))
    if labels.size and labels.max() >= k:
        raise FormatError(f"label {labels.max()} out of range for {k} classes")
    return images, labels, meta


def dataset_checksum(data_dir) -> str:
    h = hashlib.sha256()
    for name in ("images.at1", "labels.at1", "meta.json"):
        h.update((Path(data_dir) / name).read_bytes())
    return h.hexdigest()
