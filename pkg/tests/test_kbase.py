import json
import threading

import pytest

from llmrg.domain import chain_signature
from llmrg.kbase import CacheTelemetry, KnowledgeBase

from conftest import simple_chain


def _chain(i, score=80):
    return simple_chain(target_id=str(i), title=f"film {i}", score=score, cid=f"c{i}")


def test_empty_base_misses():
    kb = KnowledgeBase()
    assert kb.lookup("nope") is None
    t = kb.stats()
    assert (t.lookups, t.hits, t.calls) == (1, 0, 0)


def test_insert_then_lookup_returns_same_chain():
    kb = KnowledgeBase()
    c = _chain(1)
    sig = chain_signature(c)
    assert kb.insert(sig, c, 80, tau=30)
    entry = kb.lookup(sig)
    assert entry.chain == c and entry.hit_count == 1 and entry.last_hit_step == 1


def test_score_gate_is_inclusive():
    kb = KnowledgeBase()
    assert not kb.insert("a", _chain(1), 29, tau=30)
    assert kb.insert("b", _chain(2), 30, tau=30)
    assert "a" not in kb and "b" in kb


def test_lru_eviction_hand_trace():
    kb = KnowledgeBase(capacity=2)
    for s in "ABC"[:2]:
        kb.insert(s, _chain(ord(s)), 90, tau=0)
    kb.lookup("A")  # touch the first
    kb.insert("C", _chain(3), 90, tau=0)
    assert "B" not in kb and "A" in kb and "C" in kb
    assert kb.evictions == 1


def test_context_keys_resolve_and_follow_eviction():
    kb = KnowledgeBase(capacity=1)
    kb.insert("s1", _chain(1), 90, tau=0, keys=["k"])
    assert [e.signature for e in kb.lookup_any(["k"])] == ["s1"]
    kb.insert("s2", _chain(2), 90, tau=0)
    assert kb.lookup_any(["k"]) == []


def test_telemetry_identities():
    t = CacheTelemetry()
    assert t.lookups == t.hits == t.calls == 0
    assert t.windowed_access_frequency(5) == []
    kb = KnowledgeBase()
    kb.insert("hit", _chain(1), 90, tau=0)
    for i in range(10):
        key = "hit" if i % 5 < 2 else f"miss{i}"
        if kb.lookup(key) is None:
            kb.record_calls(1)
    t = kb.stats()
    assert (t.lookups, t.hits) == (10, 4)
    assert t.calls == 6 == t.lookups - t.hits
    for step, calls, lookups, hits in t.cumulative():
        assert hits <= lookups == step and calls + hits == lookups


def test_record_calls_needs_a_step():
    with pytest.raises(RuntimeError):
        KnowledgeBase().record_calls(1)


def test_windowed_access_frequency_and_csv():
    t = CacheTelemetry([False, True, False, True], [1, 0, 1, 0])
    assert t.windowed_access_frequency(2) == [(1, 1.0), (2, 0.5), (3, 0.5), (4, 0.5)]
    assert t.window_mean(0, 2) == 0.5
    csv = t.to_csv(2).splitlines()
    assert csv[0] == "step,access_frequency" and csv[1] == "1,1.000000"
    assert CacheTelemetry.from_dict(json.loads(json.dumps(t.to_dict()))) == t


def test_persistence_replay(tmp_path):
    path = tmp_path / "kb.jsonl"
    kb = KnowledgeBase(path=path)
    kb.insert("s1", _chain(1), 90, tau=30, keys=["k1"])
    kb.insert("s2", _chain(2), 10, tau=30)  # rejected, never written
    again = KnowledgeBase(path=path)
    assert len(again) == 1 and again.lookup("k1").chain == _chain(1)
    saved = tmp_path / "snapshot.jsonl"
    kb.save(saved)
    assert json.loads(saved.read_text().splitlines()[0])["signature"] == "s1"


def test_entries_respect_tau_at_insert():
    kb = KnowledgeBase()
    for i, score in enumerate([10, 50, 29, 30, 100]):
        kb.insert(f"s{i}", _chain(i), score, tau=30)
    assert sorted(e.score for e in kb.entries()) == [30, 50, 100]


def test_concurrent_operations_keep_identities():
    kb = KnowledgeBase(capacity=50)

    def worker(w):
        for i in range(300):
            key = f"s{(w * 7 + i) % 80}"
            if kb.lookup(key) is None:
                kb.record_calls(1)
                kb.insert(key, _chain(i), 90, tau=0, keys=[f"k{i % 10}"])

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    t = kb.stats()
    assert t.lookups == 2400 and t.hits <= t.lookups
    assert t.calls == t.lookups - t.hits
    assert len(kb) <= 50
