import os

import numpy as np
import pytest

from src.cache import ResultCache, cache_key
from src.exceptions import CacheError


def test_key_is_canonical():
    a = cache_key("bands", {"cutoff": 3, "grid": np.arange(3), "lambda": 0.5})
    b = cache_key("bands", {"lambda": 0.5, "grid": [0, 1, 2], "cutoff": 3})
    assert a == b
    assert cache_key("oracle", {"cutoff": 3}) != cache_key("bands", {"cutoff": 3})
    assert len(a) == 64


def test_key_rejects_unserializable_values():
    with pytest.raises(TypeError):
        cache_key("bands", {"operator": object()})


def test_save_and_load(tmp_path):
    cache = ResultCache(str(tmp_path / "cache"))
    key = cache_key("oracle", {"x": 1})
    assert cache.load(key) is None
    values = np.array([1 + 2j, 3 - 1j])
    cache.save(key, {"values": values}, {"grid": 40})
    arrays, meta = cache.load(key)
    assert np.array_equal(arrays["values"], values)
    assert meta == {"grid": 40}
    assert not [name for name in os.listdir(tmp_path / "cache" / key[:2]) if name.endswith(".tmp")]


def test_disabled_cache_is_inert(tmp_path):
    cache = ResultCache(str(tmp_path / "cache"), enabled=False)
    cache.save("ab" * 32, {"values": np.zeros(2)})
    assert cache.load("ab" * 32) is None
    assert not (tmp_path / "cache").exists()


def test_unreadable_entry_is_a_miss(tmp_path):
    cache = ResultCache(str(tmp_path))
    key = cache_key("bands", {"n": 1})
    cache.save(key, {"values": np.ones(3)})
    with open(tmp_path / key[:2] / f"{key}.npz", "wb") as f:
        f.write(b"no es un npz")
    assert cache.load(key) is None


def test_failed_write_leaves_no_partial_file(tmp_path, monkeypatch):
    cache = ResultCache(str(tmp_path))
    key = cache_key("bands", {"n": 2})

    def broken_replace(src, dst):
        raise OSError("disco lleno")

    monkeypatch.setattr(os, "replace", broken_replace)
    with pytest.raises(CacheError):
        cache.save(key, {"values": np.ones(3)})
    assert os.listdir(tmp_path / key[:2]) == []
