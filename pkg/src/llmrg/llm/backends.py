"""Language-model backends: an OpenAI-compatible HTTP client and an offline mock oracle."""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import httpx

from ..domain import canonicalize_label
from .prompts import Prompt

logger = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """A completion could not be obtained."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


@dataclass
class BackendConfig:
    kind: str = "mock"
    endpoint: str = "http://localhost:8000"
    model: str = "gpt-3.5-turbo"
    temperature: float = 0.0
    max_retries: int = 3
    timeout: float = 60.0
    parallelism: int = 4
    api_key_env: str = "LLMRG_API_KEY"
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.kind not in ("http", "mock"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class LLMBackend:
    """Common accounting for backends.

    ``access_count`` counts logical completions (what the cache telemetry
    compares against); ``attempt_count`` counts every transport attempt.
    """

    parallelism = 1

    def __init__(self):
        self._lock = threading.Lock()
        self.access_count = 0
        self.attempt_count = 0

    def _complete(self, prompt: Prompt) -> str:
        raise NotImplementedError

    def complete(self, prompt: Prompt) -> str:
        with self._lock:
            self.access_count += 1
        return self._complete(prompt)

    def complete_many(self, prompts: list[Prompt]) -> list[str]:
        """Issue prompts concurrently; results come back in request order."""
        if self.parallelism <= 1 or len(prompts) <= 1:
            return [self.complete(p) for p in prompts]
        with ThreadPoolExecutor(max_workers=min(self.parallelism, len(prompts))) as pool:
            return list(pool.map(self.complete, prompts))


class HttpBackend(LLMBackend):
    """POST {endpoint}/v1/chat/completions with bearer auth and exponential backoff."""

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None,
                 sleep=time.sleep):
        super().__init__()
        self.config = config
        self.parallelism = config.parallelism
        self._client = client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise BackendError(f"environment variable {self.config.api_key_env} is not set")
        return key

    def _attempt(self, prompt: Prompt, key: str) -> str:
        with self._lock:
            self.attempt_count += 1
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt.render()}],
            "temperature": self.config.temperature,
        }
        url = self.config.endpoint.rstrip("/") + "/v1/chat/completions"
        try:
            resp = self._client.post(url, json=body,
                                     headers={"Authorization": f"Bearer {key}"})
        except httpx.HTTPError as exc:
            raise BackendError(f"transport error: {exc}", retryable=True) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise BackendError(f"HTTP {resp.status_code}", retryable=True)
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed response body: {exc}") from exc

    def _complete(self, prompt: Prompt) -> str:
        key = self._api_key()
        for attempt in range(self.config.max_retries + 1):
            try:
                return self._attempt(prompt, key)
            except BackendError as exc:
                if not exc.retryable or attempt == self.config.max_retries:
                    raise
                delay = self.config.backoff_base * 2 ** attempt
                logger.warning("retrying after %s (attempt %d, sleeping %.2fs)",
                               exc, attempt + 1, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class KnowledgeEntry:
    concepts: tuple[str, ...]
    items: tuple[str, ...]


class KnowledgeTable(dict):
    """attribute label -> related concepts and item titles (all canonical)."""

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeTable":
        table = cls()
        for attr, entry in data.items():
            concepts = tuple(canonicalize_label(c) for c in entry.get("concepts", ()))
            if not concepts:
                concepts = (canonicalize_label(attr) + " interest",)
            items = tuple(canonicalize_label(t) for t in entry.get("items", ()))
            table[canonicalize_label(attr)] = KnowledgeEntry(concepts, items)
        return table

    def to_dict(self) -> dict:
        return {a: {"concepts": list(e.concepts), "items": list(e.items)}
                for a, e in sorted(self.items())}

    @classmethod
    def load(cls, path) -> "KnowledgeTable":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    def explaining_entry(self, nodes) -> str | None:
        """First entry (sorted) under which every node of a chain is consistent."""
        for attr in sorted(self):
            entry = self[attr]
            ok = True
            for n in nodes:
                if n.kind == "attribute":
                    ok = n.label == attr
                elif n.kind == "concept":
                    ok = n.label in entry.concepts
                else:
                    ok = n.label in entry.items
                if not ok:
                    break
            if ok:
                return attr
        return None


@dataclass
class MockOracleConfig:
    """Offline stand-in for the language model.

    ``fidelity`` is the probability that an abductive fill of a coherent chain
    reproduces the masked element; fills of incoherent chains are always
    decoys.  ``hallucination_rate`` adds an incoherent chain to a reasoning
    response; ``title_noise`` perturbs extension titles so grounding matters.
    """
    knowledge: KnowledgeTable = field(default_factory=KnowledgeTable)
    fidelity: float = 0.9
    seed: int = 0
    hallucination_rate: float = 0.0
    title_noise: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.fidelity <= 1.0:
            raise ValueError("fidelity must lie in [0, 1]")
        if not isinstance(self.knowledge, KnowledgeTable):
            self.knowledge = KnowledgeTable.from_dict(self.knowledge)


_NOISE_SUFFIXES = (" (remastered)", " - special edition", " (deluxe)")


class MockBackend(LLMBackend):
    """Deterministic oracle: per-request randomness comes from (seed, request content)."""

    def __init__(self, config: MockOracleConfig | None = None, parallelism: int = 1):
        super().__init__()
        self.config = config or MockOracleConfig()
        self.parallelism = parallelism
        kb = self.config.knowledge
        self._item_pool = sorted({t for e in kb.values() for t in e.items})
        self._attr_pool = sorted(kb)
        self._concept_pool = sorted({c for e in kb.values() for c in e.concepts})

    def _rng(self, prompt: Prompt) -> random.Random:
        return random.Random(f"{self.config.seed}|{prompt.render()}|{prompt.answer_key}")

    def _complete(self, prompt: Prompt) -> str:
        with self._lock:
            self.attempt_count += 1
        rng = self._rng(prompt)
        handler = {
            "chain_reasoning": self._reason,
            "divergent_extension": self._extend,
            "abductive_fill": self._abduce,
        }[prompt.task_kind]
        return handler(prompt.fields, prompt.answer_key, rng)

    def _reason(self, f: dict, _key, rng: random.Random) -> str:
        kb = self.config.knowledge
        title = canonicalize_label(f["next_item"])
        attrs = list(dict.fromkeys(
            canonicalize_label(a) for a in [*f["user_attributes"], *f["item_attributes"]]))
        limit = f.get("max_chains", 3)
        explaining = [a for a in attrs if a in kb and title in kb[a].items]
        lines = []
        for a in explaining[:limit]:
            concept = rng.choice(kb[a].concepts)
            parent = None
            for c in sorted(f["existing_chains"], key=lambda c: c.id, reverse=True):
                term = c.terminal
                if term.kind == "item" and term.label != title and term.label in kb[a].items:
                    parent = c
                    break
            if parent is not None:
                lines.append(f"CHAIN[parent={parent.id}]: ITEM[{parent.terminal.label}] "
                             f"-> {concept} -> TARGET[{title}]")
            else:
                lines.append(f"CHAIN: ATTR[{a}] -> {concept} -> TARGET[{title}]")
        hallucinate = not lines or rng.random() < self.config.hallucination_rate
        if hallucinate and len(lines) < limit and self._concept_pool:
            attr = rng.choice(attrs) if attrs else rng.choice(self._attr_pool or ["curiosity"])
            own = set(kb[attr].concepts) if attr in kb else set()
            wrong = [c for c in self._concept_pool if c not in own] or ["a passing whim"]
            lines.append(f"CHAIN: ATTR[{attr}] -> {rng.choice(wrong)} -> TARGET[{title}]")
        elif not lines:
            attr = attrs[0] if attrs else "curiosity"
            lines.append(f"CHAIN: ATTR[{attr}] -> a passing whim -> TARGET[{title}]")
        return "\n".join(lines)

    def _premise_entry(self, nodes) -> str | None:
        """Entry owning the chain's last concept: a hallucinated chain is continued
        along its (wrong) premise rather than at random."""
        kb = self.config.knowledge
        for n in reversed(nodes):
            if n.kind == "concept":
                for attr in sorted(kb):
                    if n.label in kb[attr].concepts:
                        return attr
        return None

    def _noisy(self, title: str, rng: random.Random) -> str:
        if rng.random() < self.config.title_noise:
            return title.title() + rng.choice(_NOISE_SUFFIXES)
        return title

    def _extend(self, f: dict, _key, rng: random.Random) -> str:
        kb = self.config.knowledge
        chain = f["chain"]
        k = int(f["k"])
        consumed = {canonicalize_label(t) for t in f["consumed"]}
        consumed.add(chain.terminal.label)
        attr = kb.explaining_entry(chain.nodes) or self._premise_entry(chain.nodes)
        if attr is not None:
            pool = [t for t in kb[attr].items if t not in consumed]
        else:
            pool = [t for t in self._item_pool if t not in consumed]
        picks = rng.sample(pool, min(k, len(pool)))
        return "\n".join(f"CANDIDATE: {self._noisy(t, rng)}" for t in picks)

    def _abduce(self, f: dict, key, rng: random.Random) -> str:
        nodes = list(f["masked_nodes"])
        idx = f["mask_index"]
        original = nodes[idx]
        coherent = self.config.knowledge.explaining_entry(nodes) is not None
        if key is not None and coherent and rng.random() < self.config.fidelity:
            answer = str(key)
            if rng.random() < self.config.title_noise:
                answer = "  " + answer.upper() + " "
            return f"ANSWER: {answer}"
        pool = self._attr_pool if original.kind == "attribute" else self._item_pool
        truth = canonicalize_label(str(key)) if key is not None else original.label
        decoys = [p for p in pool if p != truth]
        return f"ANSWER: {rng.choice(decoys) if decoys else 'unknown'}"


def make_backend(config: BackendConfig, mock: MockOracleConfig | None = None) -> LLMBackend:
    if config.kind == "mock":
        return MockBackend(mock, parallelism=config.parallelism)
    return HttpBackend(config)
