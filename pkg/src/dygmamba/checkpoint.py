"""Checkpoints: a flat binary parameter file plus a JSON manifest.

``params.bin`` layout (little-endian): magic ``DYGMCKPT``, u32 version,
u32 record count, then per record: u16 name length, UTF-8 name, u8 dtype
code (0 = f64, 1 = f32), u8 ndim, u64 per dimension, raw array bytes.
``manifest.json`` carries the config text, its hash and the record list.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"DYGMCKPT"
VERSION = 1
_CODES = {np.dtype("<f8"): 0, np.dtype("<f4"): 1}
_DTYPES = {v: k for k, v in _CODES.items()}


def write_params(path, state: dict[str, np.ndarray]) -> str:
    """Write ``state`` in insertion order; returns the sha256 of the file."""
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", VERSION, len(state))
    for name, arr in state.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise ContractError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode()
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<BB", _CODES[dt], arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.astype(dt, copy=False).tobytes()
    Path(path).write_bytes(bytes(buf))
    return hashlib.sha256(buf).hexdigest()


def read_params(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    pos, out = 16, {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode()
            pos += n
            code, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + size > len(data):
                raise ContractError(f"{path}: truncated record {name}")
            out[name] = np.frombuffer(data, dtype=dt, count=size // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError) as exc:
        raise ContractError(f"{path}: corrupt checkpoint ({exc})") from None
    if pos != len(data):
        raise ContractError(f"{path}: trailing bytes after {count} records")
    return out


def save_checkpoint(directory, model, config_text: str, extra: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    digest = write_params(d / "params.bin", state)
    manifest = {
        "format": "dygmamba-checkpoint",
        "version": VERSION,
        "config_hash": hashlib.sha256(config_text.encode()).hexdigest(),
        "config": config_text,
        "params_sha256": digest,
        "records": [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype)} for k, v in state.items()],
        "extra": extra or {},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return d


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    d = Path(directory)
    man_path, bin_path = d / "manifest.json", d / "params.bin"
    if not man_path.exists() or not bin_path.exists():
        raise ContractError(f"no checkpoint in {d}")
    manifest = json.loads(man_path.read_text(encoding="utf-8"))
    if hashlib.sha256(manifest["config"].encode()).hexdigest() != manifest["config_hash"]:
        raise ContractError(f"{d}: config hash mismatch")
    if hashlib.sha256(bin_path.read_bytes()).hexdigest() != manifest["params_sha256"]:
        raise ContractError(f"{d}: parameter file does not match its manifest")
    return read_params(bin_path), manifest
