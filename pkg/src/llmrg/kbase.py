"""Knowledge base of validated reasoning chains.

Entries are stored under their chain signature and are also reachable through
context keys (``context_key(anchor label, target item)``), which is how the
reasoning step finds "a relevant chain" before calling the language model.
Matching is exact on keys; eviction is least-recently-hit.
"""

from __future__ import annotations

import csv
import io
import json
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .domain import ReasoningChain


@dataclass
class KnowledgeBaseEntry:
    signature: str
    chain: ReasoningChain
    score: int
    insert_step: int
    hit_count: int = 0
    last_hit_step: int | None = None
    keys: tuple[str, ...] = ()


@dataclass
class CacheTelemetry:
    """Per-step record of lookups, hits and the language-model calls they caused."""
    hits_per_step: list[bool] = field(default_factory=list)
    calls_per_step: list[int] = field(default_factory=list)

    @property
    def lookups(self) -> int:
        return len(self.hits_per_step)

    @property
    def hits(self) -> int:
        return sum(self.hits_per_step)

    @property
    def calls(self) -> int:
        return sum(self.calls_per_step)

    def cumulative(self) -> list[tuple[int, int, int, int]]:
        """(step, cumulative calls, cumulative lookups, cumulative hits)."""
        out, calls, hits = [], 0, 0
        for i, (hit, c) in enumerate(zip(self.hits_per_step, self.calls_per_step), 1):
            calls += c
            hits += hit
            out.append((i, calls, i, hits))
        return out

    def windowed_access_frequency(self, window: int = 300) -> list[tuple[int, float]]:
        """Average calls per step over the trailing ``window`` steps, at every step."""
        if window < 1:
            raise ValueError("window must be >= 1")
        out, running = [], 0
        calls = self.calls_per_step
        for i, c in enumerate(calls):
            running += c
            if i >= window:
                running -= calls[i - window]
            out.append((i + 1, running / min(i + 1, window)))
        return out

    def window_mean(self, start: int, stop: int) -> float:
        """Mean calls per step over steps ``start..stop-1`` (0-based)."""
        chunk = self.calls_per_step[start:stop]
        return sum(chunk) / len(chunk) if chunk else 0.0

    def to_csv(self, window: int = 300) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "access_frequency"])
        for step, freq in self.windowed_access_frequency(window):
            w.writerow([step, f"{freq:.6f}"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"hits": [int(h) for h in self.hits_per_step], "calls": list(self.calls_per_step)}

    @classmethod
    def from_dict(cls, data: dict) -> "CacheTelemetry":
        return cls([bool(h) for h in data["hits"]], list(data["calls"]))


class KnowledgeBase:
    """Thread-safe, signature-keyed cache with LRU eviction and telemetry.

    Every call to :meth:`lookup` / :meth:`lookup_any` opens a telemetry step;
    the caller reports language-model calls made on a miss with
    :meth:`record_calls`.
    """

    def __init__(self, capacity: int = 100_000, path=None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: OrderedDict[str, KnowledgeBaseEntry] = OrderedDict()
        self._keys: dict[str, list[str]] = {}
        self._lock = threading.RLock()
        self.telemetry = CacheTelemetry()
        self.evictions = 0
        self._path = path
        if path is not None:
            self._replay(path)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, signature: str) -> bool:
        return signature in self._entries

    def entries(self) -> list[KnowledgeBaseEntry]:
        with self._lock:
            return list(self._entries.values())

    @property
    def step(self) -> int:
        return self.telemetry.lookups

    def _resolve(self, key: str) -> list[KnowledgeBaseEntry]:
        if key in self._entries:
            return [self._entries[key]]
        return [self._entries[s] for s in self._keys.get(key, ()) if s in self._entries]

    def _touch(self, entry: KnowledgeBaseEntry) -> None:
        entry.hit_count += 1
        entry.last_hit_step = self.step
        self._entries.move_to_end(entry.signature)

    def lookup(self, signature: str) -> KnowledgeBaseEntry | None:
        """Exact lookup by chain signature or context key; counts one step."""
        return (self.lookup_any([signature]) or [None])[0]

    def lookup_any(self, keys: Iterable[str],
                   accept: Callable[[KnowledgeBaseEntry], bool] | None = None
                   ) -> list[KnowledgeBaseEntry]:
        """One logical lookup over several keys; a hit is any accepted entry."""
        with self._lock:
            found: dict[str, KnowledgeBaseEntry] = {}
            for key in keys:
                for entry in self._resolve(key):
                    if accept is None or accept(entry):
                        found.setdefault(entry.signature, entry)
            hits = list(found.values())
            self.telemetry.hits_per_step.append(bool(hits))
            self.telemetry.calls_per_step.append(0)
            for entry in hits:
                self._touch(entry)
            return hits

    def record_calls(self, n: int = 1, step: int | None = None) -> None:
        """Attribute ``n`` model calls to ``step`` (1-based; default the latest)."""
        with self._lock:
            if not self.telemetry.calls_per_step:
                raise RuntimeError("record_calls before any lookup")
            index = -1 if step is None else step - 1
            self.telemetry.calls_per_step[index] += n

    def insert(self, signature: str, chain: ReasoningChain, score: int, tau: int,
               keys: Iterable[str] = ()) -> bool:
        """Store a verified chain iff ``score >= tau``; evicts the LRU entry at capacity."""
        if score < tau:
            return False
        with self._lock:
            keys = tuple(keys)
            entry = self._entries.get(signature)
            if entry is not None:
                if score > entry.score:
                    entry.score, entry.chain = score, chain
                self._entries.move_to_end(signature)
            else:
                while len(self._entries) >= self.capacity:
                    self._evict()
                entry = KnowledgeBaseEntry(signature, chain, score, self.step)
                self._entries[signature] = entry
            new_keys = tuple(k for k in keys if k not in entry.keys)
            entry.keys = entry.keys + new_keys
            for k in new_keys:
                self._keys.setdefault(k, []).append(signature)
            if self._path is not None:
                self._append(entry, new_keys)
            return True

    def _evict(self) -> None:
        signature, entry = self._entries.popitem(last=False)
        for k in entry.keys:
            sigs = self._keys.get(k)
            if sigs and signature in sigs:
                sigs.remove(signature)
                if not sigs:
                    del self._keys[k]
        self.evictions += 1

    def stats(self) -> CacheTelemetry:
        with self._lock:
            return CacheTelemetry(list(self.telemetry.hits_per_step),
                                  list(self.telemetry.calls_per_step))

    # persistence: one JSON record per line, replayed in order at startup

    def _append(self, entry: KnowledgeBaseEntry, keys: tuple[str, ...]) -> None:
        record = {"signature": entry.signature, "chain": entry.chain.to_dict(),
                  "score": entry.score, "insert_step": entry.insert_step, "keys": list(keys)}
        with open(self._path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def _replay(self, path) -> None:
        try:
            fh = open(path, encoding="utf-8")
        except FileNotFoundError:
            return
        saved, self._path = self._path, None
        with fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                chain = ReasoningChain.from_dict(rec["chain"])
                self.insert(rec["signature"], chain, rec["score"], tau=0, keys=rec.get("keys", ()))
                self._entries[rec["signature"]].insert_step = rec.get("insert_step", 0)
        self._path = saved

    def save(self, path) -> None:
        with self._lock, open(path, "w", encoding="utf-8") as fh:
            for entry in self._entries.values():
                record = {"signature": entry.signature, "chain": entry.chain.to_dict(),
                          "score": entry.score, "insert_step": entry.insert_step,
                          "keys": list(entry.keys)}
                fh.write(json.dumps(record, sort_keys=True) + "\n")
