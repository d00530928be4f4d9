import pytest

from llmrg.config import LLMRGConfig
from llmrg.domain import (
    Catalog,
    ChainNode,
    Item,
    ReasoningChain,
    ReasoningGraph,
    chain_signature,
    context_key,
    union_of_chain_nodes,
)
from llmrg.kbase import KnowledgeBase
from llmrg.llm import BackendError, KnowledgeTable, LLMBackend, MockBackend, MockOracleConfig
from llmrg.pipeline import GraphBuilder
from llmrg.reason import (
    BackendOutage,
    ReasoningContext,
    build_reasoning_graph,
    extend_graph_with_item,
)


def _ctx(catalog, llm, kbase=None, **cfg):
    return ReasoningContext(catalog, llm, LLMRGConfig(**cfg), kbase=kbase, user_id="u")


def _id_num(cid):
    return int(cid[1:])


def test_first_item_chains_are_rooted(film_catalog, mock_llm):
    ctx = _ctx(film_catalog, mock_llm(fidelity=1.0))
    res = extend_graph_with_item(ReasoningGraph(), "1", ["sci-fi"], ctx)
    assert res.candidates and all(c.parent is None for c in res.candidates)
    assert all(c.nodes[0].kind == "attribute" for c in res.candidates)


def test_preseeded_cache_avoids_llm(film_catalog, mock_llm):
    llm = mock_llm()
    kb = KnowledgeBase()
    chain = ReasoningChain((ChainNode("attribute", "sci-fi"), ChainNode("concept", "space exploration"),
                            ChainNode("item", "alien", "3")), target_item="3", score=95, id="c9")
    kb.insert(chain_signature(chain), chain, 95, tau=30, keys=[context_key("sci-fi", "3")])
    res = extend_graph_with_item(ReasoningGraph(), "3", ["sci-fi"], _ctx(film_catalog, llm, kb))
    assert llm.access_count == 0
    assert [c.origin for c in res.cached] == ["cached"]
    assert res.cached[0].nodes == chain.nodes and res.cached[0].score == 95
    assert kb.stats().hits == 1 and kb.stats().calls == 0


def test_second_film_links_to_first(film_catalog, mock_llm):
    ctx = _ctx(film_catalog, mock_llm(fidelity=1.0))
    g = build_reasoning_graph(["1", "2"], [], ctx)
    first = [c for c in g.chains if c.target_item == "1"]
    second = [c for c in g.chains if c.target_item == "2"]
    assert first and second
    assert second[0].parent == first[0].id
    assert second[0].nodes[0] == ChainNode("item", "star wars", "1")


def test_length_one_sequence(film_catalog, mock_llm):
    g = build_reasoning_graph(["4"], ["romance"], _ctx(film_catalog, mock_llm()))
    assert len(g.nodes) >= 1 and all(c.parent is None for c in g.chains)


def test_tau_101_leaves_only_fallbacks(film_catalog, mock_llm):
    g = build_reasoning_graph(["1", "2", "4"], ["sci-fi"],
                              _ctx(film_catalog, mock_llm(fidelity=1.0), tau=101))
    assert g.llm_chains == []
    assert [c.origin for c in g.chains] == ["fallback"] * 3
    assert all(c.score == 0 and not c.verified for c in g.chains)


def _scifi_world(n=10):
    titles = [f"Voyage {chr(65 + i)}" for i in range(n)]
    catalog = Catalog(Item(f"{i + 1}", t, ("sci-fi",)) for i, t in enumerate(titles))
    knowledge = KnowledgeTable.from_dict({"sci-fi": {"concepts": ["space exploration", "wonder"],
                                                     "items": titles}})
    return catalog, knowledge


def test_fidelity_one_retains_everything_and_node_union():
    catalog, knowledge = _scifi_world()
    llm = MockBackend(MockOracleConfig(knowledge=knowledge, fidelity=1.0))
    kb = KnowledgeBase()
    g = build_reasoning_graph(catalog.ids, ["sci-fi"], _ctx(catalog, llm, kb))
    assert all(c.origin == "observed" for c in g.chains)
    assert len(g.chains) == g.proposed  # nothing proposed was dropped
    brute = set()
    for c in g.chains:
        for n in c.nodes:
            brute.add((n.kind, n.label))
    assert len(g.nodes) == len(brute) == len(union_of_chain_nodes(g.chains))
    for c in g.llm_chains:
        assert c.score >= 30 and chain_signature(c) in kb


def test_processing_order_and_determinism(film_catalog, mock_llm):
    def build():
        ctx = _ctx(film_catalog, mock_llm(fidelity=0.7, hallucination_rate=0.5), KnowledgeBase())
        return build_reasoning_graph(["1", "4", "2", "6", "3", "5"], ["sci-fi", "romance"], ctx)
    g = build()
    ids = [c.id for c in g.chains]
    for c in g.chains:
        if c.parent is not None:
            assert _id_num(c.parent) < _id_num(c.id) and c.parent in ids
    assert g == build()


class _Garbage(LLMBackend):
    def _complete(self, prompt):
        return "I cannot comply."


class _Down(LLMBackend):
    def _complete(self, prompt):
        raise BackendError("down", retryable=True)


def test_unparseable_response_reprompts_once_then_falls_back(film_catalog):
    llm = _Garbage()
    g = build_reasoning_graph(["1", "2"], ["sci-fi"], _ctx(film_catalog, llm))
    assert llm.access_count == 4  # one re-prompt per item
    assert [c.origin for c in g.chains] == ["fallback", "fallback"]
    assert g.chains[0].nodes[0] == ChainNode("attribute", "sci-fi")


def test_total_outage_propagates(film_catalog):
    builder = GraphBuilder().fit(catalog=film_catalog, llm=_Down())
    with pytest.raises(BackendOutage):
        builder.build_user("u", ["1", "2"], ["sci-fi"])
