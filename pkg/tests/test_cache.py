from pathlib import Path

import numpy as np
import pytest

from krylovsketch.cache import ReferenceCache, get_default_cache_dir


@pytest.fixture(params=["json", "sqlite"])
def cache(request, tmp_path: Path):
    return ReferenceCache(tmp_path / "cache", cache_type=request.param)


def test_cache_round_trip(cache):
    values = np.array([1.0, 1.0 / 3.0, -2.5e-17])
    assert cache.get("abc", "exp", "dense") is None
    cache.set("abc", "exp", "dense", values)
    np.testing.assert_array_equal(cache.get("abc", "exp", "dense"), values)
    assert cache.size() == 1


def test_cache_key_includes_settings(cache):
    cache.set("abc", "exp", "long-fom", np.ones(3), depth=40)
    assert cache.get("abc", "exp", "long-fom", depth=40) is not None
    assert cache.get("abc", "exp", "long-fom", depth=20) is None
    assert cache.get("abc", "nexp", "long-fom", depth=40) is None
    assert cache.get("abd", "exp", "long-fom", depth=40) is None


def test_cache_clear(cache):
    cache.set("a", "exp", "dense", np.ones(2))
    cache.set("b", "exp", "dense", np.ones(2))
    assert cache.size() == 2
    cache.clear()
    assert cache.size() == 0
    assert cache.get("a", "exp", "dense") is None


def test_cache_persists(tmp_path: Path):
    ReferenceCache(tmp_path, "json").set("p", "exp", "dense", np.arange(4.0))
    reopened = ReferenceCache(tmp_path, "json")
    np.testing.assert_array_equal(reopened.get("p", "exp", "dense"), np.arange(4.0))


def test_corrupt_json_cache_is_ignored(tmp_path: Path):
    (tmp_path / "reference_cache.json").write_text("{not json")
    assert ReferenceCache(tmp_path, "json").size() == 0


def test_unsupported_cache_type(tmp_path: Path):
    with pytest.raises(ValueError) as exc:
        ReferenceCache(tmp_path, "redis")
    assert "Unsupported cache type" in str(exc.value)


def test_default_cache_dir(monkeypatch, tmp_path: Path):
    monkeypatch.setenv("KRYLOV_CACHE_DIR", str(tmp_path))
    assert get_default_cache_dir() == tmp_path
    monkeypatch.delenv("KRYLOV_CACHE_DIR")
    assert get_default_cache_dir() == Path.home() / ".cache" / "krylovsketch"
