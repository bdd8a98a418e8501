"""Bounded, thread-safe in-memory cache for spectral multipliers."""

import threading
from collections import OrderedDict
from typing import Any, Callable, Hashable, Optional


class SpectralCache:
    """A dictionary-based LRU cache keyed by (grid, multiplier name, ...) tuples."""

    def __init__(self, max_entries: int = 64):
        self._cache: "OrderedDict[Hashable, Any]" = OrderedDict()
        self._lock = threading.Lock()
        self.max_entries = max_entries
        self.hits = 0
        self.misses = 0

    def get(self, key: Hashable) -> Optional[Any]:
        """Retrieve a value from the cache if present, marking it recently used."""
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                self.hits += 1
                return self._cache[key]
            self.misses += 1
        return None

    def set(self, key: Hashable, value: Any):
        """Store a value, evicting the least recently used entry when full."""
        with self._lock:
            self._cache[key] = value
            self._cache.move_to_end(key)
            while len(self._cache) > self.max_entries:
                self._cache.popitem(last=False)

    def get_or_compute(self, key: Hashable, compute: Callable[[], Any]) -> Any:
        value = self.get(key)
        if value is None:
            value = compute()
            self.set(key, value)
        return value

    def clear(self):
        """Clear all entries from the cache."""
        with self._lock:
            self._cache.clear()
            self.hits = 0
            self.misses = 0

    def __len__(self) -> int:
        return len(self._cache)


# Global cache instance
spectral_cache = SpectralCache()
