"""Binary cache for propagator blocks.

Layout (all integers little-endian):

    magic      6 bytes   b"KGDIAG"
    version    3 x u16   semantic version of the format
    hash       64 bytes  hex SHA-256 of the run configuration
    key_len    u32, key  UTF-8 cache key
    ndim       u32, shape ndim x u64
    payload    row-major (re, im) float64 pairs
    crc        u32       CRC-32 of everything above
"""

from __future__ import annotations

import hashlib
import os
import struct
import zlib
from pathlib import Path

import numpy as np

__all__ = [
    "CACHE_ENV",
    "FORMAT_VERSION",
    "CacheError",
    "CacheMismatchError",
    "CacheCorruptError",
    "cache_key",
    "cache_path",
    "cache_store",
    "cache_load",
    "cache_dir",
]

CACHE_ENV = "KGDIAG_CACHE_DIR"
MAGIC = b"KGDIAG"
FORMAT_VERSION = (1, 0, 0)


class CacheError(RuntimeError):
    pass


class CacheMismatchError(CacheError):
    """Stored configuration hash or format version differs from the requested one."""


class CacheCorruptError(CacheError):
    """Checksum failure, truncation or malformed header."""


def cache_dir(default: str | Path | None = None) -> Path:
    """Directory from ``$KGDIAG_CACHE_DIR``, else ``default``, else ``./.kgdiag-cache``."""
    d = os.environ.get(CACHE_ENV) or default or ".kgdiag-cache"
    return Path(d)


def cache_key(generator_id: str, t, s) -> str:
    """Key from the generator name and the time arguments (scalars or arrays)."""
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    ss = np.atleast_1d(np.asarray(s, dtype=float))
    digest = hashlib.sha256(ts.tobytes() + b"|" + ss.tobytes()).hexdigest()[:16]
    return f"{generator_id}-{digest}"


def cache_path(directory: str | Path, key: str) -> Path:
    return Path(directory) / f"{key}.kgc"


def _encode(key: str, config_hash: str, data: np.ndarray) -> bytes:
    if len(config_hash) != 64:
        raise ValueError("config hash must be a 64-character hex digest")
    arr = np.ascontiguousarray(data, dtype="<c16")
    kb = key.encode()
    head = MAGIC + struct.pack("<3H", *FORMAT_VERSION) + config_hash.encode("ascii")
    head += struct.pack("<I", len(kb)) + kb
    head += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    body = head + arr.tobytes()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def cache_store(directory: str | Path, key: str, config_hash: str, data: np.ndarray) -> Path:
    """Write ``data`` atomically; returns the file path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = cache_path(directory, key)
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(_encode(key, config_hash, data))
    tmp.replace(path)
    return path


def _decode(blob: bytes, path: Path) -> tuple[tuple, str, str, np.ndarray]:
    if len(blob) < len(MAGIC) + 6 + 64 + 12:
        raise CacheCorruptError(f"{path}: checksum error (file truncated to {len(blob)} bytes)")
    body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CacheCorruptError(f"{path}: checksum error")
    if body[:6] != MAGIC:
        raise CacheCorruptError(f"{path}: bad magic bytes")
    pos = 6
    version = struct.unpack_from("<3H", body, pos)
    pos += 6
    stored_hash = body[pos:pos + 64].decode("ascii")
    pos += 64
    (klen,) = struct.unpack_from("<I", body, pos)
    pos += 4
    key = body[pos:pos + klen].decode()
    pos += klen
    (ndim,) = struct.unpack_from("<I", body, pos)
    pos += 4
    shape = struct.unpack_from(f"<{ndim}Q", body, pos)
    pos += 8 * ndim
    payload = body[pos:]
    count = int(np.prod(shape)) if ndim else 1
    if len(payload) != 16 * count:
        raise CacheCorruptError(f"{path}: payload size {len(payload)} does not match shape {shape}")
    data = np.frombuffer(payload, dtype="<c16").reshape(shape).astype(complex)
    return version, stored_hash, key, data


def cache_load(directory: str | Path, key: str, config_hash: str) -> np.ndarray | None:
    """Read a cached array; ``None`` if absent.

    A configuration hash or major version mismatch raises
    ``CacheMismatchError`` naming both values.
    """
    path = cache_path(directory, key)
    if not path.is_file():
        return None
    version, stored_hash, stored_key, data = _decode(path.read_bytes(), path)
    if version[0] != FORMAT_VERSION[0]:
        raise CacheMismatchError(f"{path}: format version {'.'.join(map(str, version))} incompatible with "
                                 f"{'.'.join(map(str, FORMAT_VERSION))}")
    if stored_hash != config_hash:
        raise CacheMismatchError(f"{path}: stale cache, stored config hash {stored_hash} != current {config_hash}")
    if stored_key != key:
        raise CacheCorruptError(f"{path}: stored key {stored_key!r} does not match {key!r}")
    return data
