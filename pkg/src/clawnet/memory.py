"""Three-layer memory store: factual, pattern and value entries per namespace.

Each namespace persists as one append-compacted JSON-lines file; the last
write for a (layer, key) wins on load, so crash-interrupted appends lose at
most the trailing partial line. Entries survive process restarts unchanged.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional


class MemoryLayer(str, Enum):
    FACTUAL = "factual"
    PATTERN = "pattern"
    VALUE = "value"


@dataclass(frozen=True)
class MemoryEntry:
    namespace: str
    layer: MemoryLayer
    key: str
    value: str
    created_ms: int
    updated_ms: int


def _ns_filename(namespace: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "~", namespace) + ".mem"


class MemoryStore:
    """Namespace-partitioned store. Callers enforce who may touch which
    namespace; the store itself only isolates data and serializes writes."""

    def __init__(self, root: Optional[str] = None, clock_ms: Optional[Callable[[], int]] = None):
        self._root = root
        self._clock = clock_ms or (lambda: 0)
        self._locks: dict[str, threading.Lock] = {}
        self._data: dict[str, dict[tuple[str, str], MemoryEntry]] = {}
        self._archived: set[str] = set()
        if root:
            os.makedirs(root, exist_ok=True)
            self._load_all()

    def _load_all(self) -> None:
        assert self._root is not None
        for name in sorted(os.listdir(self._root)):
            if not name.endswith(".mem"):
                continue
            with open(os.path.join(self._root, name), "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        raw = json.loads(line)
                    except json.JSONDecodeError:
                        continue  # trailing partial line from an interrupted append
                    entry = MemoryEntry(
                        namespace=raw["ns"],
                        layer=MemoryLayer(raw["layer"]),
                        key=raw["key"],
                        value=raw["value"],
                        created_ms=raw["created"],
                        updated_ms=raw["updated"],
                    )
                    ns = self._data.setdefault(entry.namespace, {})
                    ns[(entry.layer.value, entry.key)] = entry

    def _lock_for(self, namespace: str) -> threading.Lock:
        return self._locks.setdefault(namespace, threading.Lock())

    def _append(self, entry: MemoryEntry) -> None:
        if self._root is None:
            return
        path = os.path.join(self._root, _ns_filename(entry.namespace))
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "ns": entry.namespace,
                        "layer": entry.layer.value,
                        "key": entry.key,
                        "value": entry.value,
                        "created": entry.created_ms,
                        "updated": entry.updated_ms,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
            fh.flush()

    def put(self, namespace: str, layer: MemoryLayer, key: str, value: str) -> MemoryEntry:
        """Upsert by (namespace, layer, key); durable before returning."""
        with self._lock_for(namespace):
            now = self._clock()
            existing = self._data.get(namespace, {}).get((MemoryLayer(layer).value, key))
            entry = MemoryEntry(
                namespace=namespace,
                layer=MemoryLayer(layer),
                key=key,
                value=value,
                created_ms=existing.created_ms if existing else now,
                updated_ms=now,
            )
            self._data.setdefault(namespace, {})[(entry.layer.value, key)] = entry
            self._append(entry)
            return entry

    def get(
        self,
        namespace: str,
        layer: Optional[MemoryLayer] = None,
        key_prefix: Optional[str] = None,
    ) -> list[MemoryEntry]:
        """Entries of one namespace in deterministic (layer, key) order."""
        entries = list(self._data.get(namespace, {}).values())
        if layer is not None:
            entries = [e for e in entries if e.layer is MemoryLayer(layer)]
        if key_prefix is not None:
            entries = [e for e in entries if e.key.startswith(key_prefix)]
        return sorted(entries, key=lambda e: (e.layer.value, e.key))

    def namespaces(self) -> list[str]:
        return sorted(self._data.keys())

    def archive(self, namespace: str) -> None:
        """Mark read-only-for-owner; contents are retained, never deleted."""
        self._archived.add(namespace)

    def is_archived(self, namespace: str) -> bool:
        return namespace in self._archived

    def compact(self, namespace: str) -> None:
        """Rewrite the namespace file keeping only live entries."""
        if self._root is None:
            return
        with self._lock_for(namespace):
            path = os.path.join(self._root, _ns_filename(namespace))
            tmp = path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                for entry in self.get(namespace):
                    fh.write(
                        json.dumps(
                            {
                                "ns": entry.namespace,
                                "layer": entry.layer.value,
                                "key": entry.key,
                                "value": entry.value,
                                "created": entry.created_ms,
                                "updated": entry.updated_ms,
                            },
                            sort_keys=True,
                        )
                        + "\n"
                    )
            os.replace(tmp, path)
