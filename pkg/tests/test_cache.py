import hashlib

import numpy as np
import pytest

from kgdiag.cache import (
    CACHE_ENV,
    CacheCorruptError,
    CacheMismatchError,
    cache_dir,
    cache_key,
    cache_load,
    cache_path,
    cache_store,
)

HASH_A = hashlib.sha256(b"a").hexdigest()
HASH_B = hashlib.sha256(b"b").hexdigest()


@pytest.fixture
def block(rng):
    return rng.standard_normal((3, 8, 8)) + 1j * rng.standard_normal((3, 8, 8))


def test_store_then_load_is_bit_identical(tmp_path, block):
    key = cache_key("H", [0.0, 1.0], 0.0)
    cache_store(tmp_path, key, HASH_A, block)
    back = cache_load(tmp_path, key, HASH_A)
    assert back.dtype == np.complex128
    assert back.tobytes() == block.astype(complex).tobytes()


def test_missing_entry_is_none(tmp_path):
    assert cache_load(tmp_path, "nothing", HASH_A) is None


def test_stale_hash_names_both(tmp_path, block):
    cache_store(tmp_path, "k", HASH_A, block)
    with pytest.raises(CacheMismatchError) as err:
        cache_load(tmp_path, "k", HASH_B)
    assert HASH_A in str(err.value) and HASH_B in str(err.value)


def test_truncated_file_fails_checksum(tmp_path, block):
    path = cache_store(tmp_path, "k", HASH_A, block)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CacheCorruptError, match="checksum"):
        cache_load(tmp_path, "k", HASH_A)


def test_flipped_byte_fails_checksum(tmp_path, block):
    path = cache_store(tmp_path, "k", HASH_A, block)
    blob = bytearray(path.read_bytes())
    blob[200] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(CacheCorruptError):
        cache_load(tmp_path, "k", HASH_A)


def test_header_layout(tmp_path, block):
    path = cache_store(tmp_path, "k", HASH_A, block)
    blob = path.read_bytes()
    assert blob[:6] == b"KGDIAG"
    assert blob[12:76].decode() == HASH_A


def test_keys_distinguish_times():
    assert cache_key("H", 1.0, 0.0) != cache_key("H", 2.0, 0.0)
    assert cache_key("H", 1.0, 0.0) != cache_key("Had", 1.0, 0.0)
    assert cache_key("H", [1.0, 2.0], 0.0) == cache_key("H", np.array([1.0, 2.0]), 0.0)


def test_cache_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(CACHE_ENV, str(tmp_path))
    assert cache_dir("elsewhere") == tmp_path
    monkeypatch.delenv(CACHE_ENV)
    assert str(cache_dir("elsewhere")) == "elsewhere"


def test_bad_hash_length(tmp_path, block):
    with pytest.raises(ValueError):
        cache_store(tmp_path, "k", "short", block)
    assert not cache_path(tmp_path, "k").exists()
