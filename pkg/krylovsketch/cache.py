"""On-disk cache of reference solutions ``f(A) b``."""

from __future__ import annotations

import hashlib
import json
import os
import sqlite3
import time
from contextlib import closing
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np


class ReferenceCache:
    """Cache for reference vectors, so repeated runs skip the long reference computation."""

    def __init__(self, cache_dir: Path, cache_type: str = "json"):
        """Initialize the reference cache.

        Parameters
        ----------
        cache_dir: Path
            Directory to store cache files
        cache_type: str
            Type of cache to use ('json' or 'sqlite')
        """
        self.cache_dir = Path(cache_dir)
        self.cache_type = cache_type
        self.cache_dir.mkdir(parents=True, exist_ok=True)

        if cache_type == "json":
            self.cache_file = self.cache_dir / "reference_cache.json"
            self._cache_data = self._load_json_cache()
        elif cache_type == "sqlite":
            self.cache_file = self.cache_dir / "reference_cache.db"
            self._init_sqlite_cache()
        else:
            raise ValueError(f"Unsupported cache type: {cache_type}")

    def _generate_key(self, problem: str, function: str, mode: str, depth: int) -> str:
        """Generate a cache key from the problem fingerprint and reference settings."""
        combined = f"{problem}|{function}|{mode}|{depth}"
        return hashlib.md5(combined.encode()).hexdigest()

    def _load_json_cache(self) -> Dict[str, Any]:
        if self.cache_file.exists():
            try:
                with open(self.cache_file, "r", encoding="utf-8") as f:
                    return json.load(f)
            except (json.JSONDecodeError, IOError):
                return {}
        return {}

    def _save_json_cache(self):
        try:
            with open(self.cache_file, "w", encoding="utf-8") as f:
                json.dump(self._cache_data, f)
        except IOError:
            pass

    def _init_sqlite_cache(self):
        try:
            with closing(sqlite3.connect(self.cache_file)) as conn:
                conn.execute(
                    """
                    CREATE TABLE IF NOT EXISTS reference_cache (
                        key TEXT PRIMARY KEY,
                        function TEXT,
                        mode TEXT,
                        n INTEGER,
                        created_at REAL,
                        data TEXT
                    )
                    """
                )
                conn.commit()
        except sqlite3.Error:
            pass

    def get(self, problem: str, function: str, mode: str, depth: int = 0) -> Optional[np.ndarray]:
        """Return the cached reference vector, or None."""
        key = self._generate_key(problem, function, mode, depth)
        if self.cache_type == "json":
            entry = self._cache_data.get(key)
            return np.array(entry["values"], dtype=float) if entry else None
        return self._get_from_sqlite(key)

    def _get_from_sqlite(self, key: str) -> Optional[np.ndarray]:
        try:
            with closing(sqlite3.connect(self.cache_file)) as conn:
                row = conn.execute("SELECT data FROM reference_cache WHERE key = ?", (key,)).fetchone()
            if row:
                return np.array(json.loads(row[0]), dtype=float)
        except (sqlite3.Error, json.JSONDecodeError):
            pass
        return None

    def set(self, problem: str, function: str, mode: str, values: np.ndarray, depth: int = 0):
        """Cache a real reference vector."""
        key = self._generate_key(problem, function, mode, depth)
        data = [float(v) for v in np.asarray(values, dtype=float)]
        if self.cache_type == "json":
            self._cache_data[key] = {
                "values": data,
                "cached_at": time.time(),
                "function": function,
                "mode": mode,
            }
            self._save_json_cache()
        else:
            self._set_in_sqlite(key, function, mode, data)

    def _set_in_sqlite(self, key: str, function: str, mode: str, data):
        try:
            with closing(sqlite3.connect(self.cache_file)) as conn:
                conn.execute(
                    """
                    INSERT OR REPLACE INTO reference_cache (key, function, mode, n, created_at, data)
                    VALUES (?, ?, ?, ?, ?, ?)
                    """,
                    (key, function, mode, len(data), time.time(), json.dumps(data)),
                )
                conn.commit()
        except sqlite3.Error:
            pass

    def clear(self):
        """Clear all cached references."""
        if self.cache_type == "json":
            self._cache_data.clear()
            self._save_json_cache()
            return
        try:
            with closing(sqlite3.connect(self.cache_file)) as conn:
                conn.execute("DELETE FROM reference_cache")
                conn.commit()
        except sqlite3.Error:
            pass

    def size(self) -> int:
        """Get the number of cached entries."""
        if self.cache_type == "json":
            return len(self._cache_data)
        try:
            with closing(sqlite3.connect(self.cache_file)) as conn:
                row = conn.execute("SELECT COUNT(*) FROM reference_cache").fetchone()
            return row[0] if row else 0
        except sqlite3.Error:
            return 0


def get_default_cache_dir() -> Path:
    """Cache directory from ``KRYLOV_CACHE_DIR``, else ``~/.cache/krylovsketch``."""
    configured = os.getenv("KRYLOV_CACHE_DIR")
    if configured:
        return Path(configured)
    return Path.home() / ".cache" / "krylovsketch"
