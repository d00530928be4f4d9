import itertools
import json

import numpy as np
import pytest

from llmrg.domain import (
    Catalog,
    ChainNode,
    EmbeddingBundle,
    InteractionSequence,
    Item,
    LabelError,
    ReasoningChain,
    ReasoningGraph,
    UserGraphs,
    canonicalize_label,
    chain_signature,
    union_of_chain_nodes,
)

from conftest import simple_chain


@pytest.mark.parametrize("raw, expected", [
    ("  Sci-Fi ", "sci-fi"),
    ("STAR WARS", "star wars"),
    ("Action/Adventure", "action/adventure"),
    ("  many\t\tspaces\n here ", "many spaces here"),
    ("...quoted!", "quoted"),
])
def test_canonicalize_label(raw, expected):
    assert canonicalize_label(raw) == expected


@pytest.mark.parametrize("raw", ["", "   ", "?!.", "\t\n"])
def test_canonicalize_rejects_empty(raw):
    with pytest.raises(LabelError):
        canonicalize_label(raw)


def test_catalog_positions_are_dense_and_id_sorted():
    cat = Catalog([Item("10", "b"), Item("2", "a"), Item("x", "c")])
    assert cat.ids == ["2", "10", "x"]
    assert [cat.index[i] for i in cat.ids] == [0, 1, 2]
    with pytest.raises(ValueError):
        Catalog([Item("1", "a"), Item("1", "b")])


def test_item_validation():
    with pytest.raises(ValueError):
        Item("1", "   ")
    assert Item("1", "t", ("a", "b", "a")).attributes == ("a", "b")


def test_sequence_rejects_duplicates_and_unknown_items(film_catalog):
    with pytest.raises(ValueError):
        InteractionSequence("u", ("1", "2", "1"))
    s = InteractionSequence("u", ("1", "99"))
    with pytest.raises(ValueError):
        s.check_catalog(film_catalog)


def test_chain_node_invariants():
    assert ChainNode("concept", "  Space  Opera ").label == "space opera"
    with pytest.raises(ValueError):
        ChainNode("item", "alien")  # item_ref required
    with pytest.raises(ValueError):
        ChainNode("concept", "x", "3")
    with pytest.raises(ValueError):
        ChainNode("robot", "x")


def test_observed_chain_must_end_at_target():
    nodes = (ChainNode("attribute", "a"), ChainNode("item", "x", "1"))
    with pytest.raises(ValueError):
        ReasoningChain(nodes, target_item="2")
    with pytest.raises(ValueError):
        ReasoningChain(nodes[:1], target_item="1")
    with pytest.raises(ValueError):
        ReasoningChain(nodes, target_item="1", score=101)


def test_signature_is_deterministic_and_order_free():
    a = simple_chain()
    assert chain_signature(a) == chain_signature(a)
    assert len(chain_signature(a)) == 32  # 128-bit hex
    swapped = ReasoningChain((ChainNode("concept", "space exploration"),
                              ChainNode("attribute", "sci-fi"),
                              ChainNode("item", "star wars", "1")), target_item="1")
    assert chain_signature(a) == chain_signature(swapped)
    assert chain_signature(a) != chain_signature(simple_chain(target_id="2", title="blade runner"))


def test_signature_no_collisions_over_1k_corpus():
    attrs = [f"attr {i}" for i in range(10)]
    concepts = [f"concept {i}" for i in range(10)]
    targets = [str(i) for i in range(10)]
    chains, keys = [], set()
    for a, c, t in itertools.product(attrs, concepts, targets):
        chains.append(ReasoningChain((ChainNode("attribute", a), ChainNode("concept", c),
                                      ChainNode("item", f"title {t}", t)), target_item=t))
        keys.add((a, c, t))
    assert len(chains) == 1000
    sigs = {chain_signature(c) for c in chains}
    assert len(sigs) == len(keys) == 1000


def _graph():
    g = ReasoningGraph()
    g.add_chain(simple_chain(score=90, cid="c0"))
    g.add_chain(ReasoningChain((ChainNode("item", "star wars", "1"),
                                ChainNode("concept", "space exploration"),
                                ChainNode("item", "alien", "3")),
                               target_item="3", score=70, id="c1", parent="c0"))
    return g


def test_graph_is_union_of_chains_with_dedup_edges():
    g = _graph()
    assert set(g.nodes) == union_of_chain_nodes(g.chains)
    # "space exploration" -> "star wars" and "star wars" -> "space exploration" are distinct
    assert len(g.edges) == 4
    for s, d in g.edges:
        assert s in g.nodes and d in g.nodes
    g.add_chain(simple_chain(score=95, cid="c2"))
    assert len(g.edges) == 4
    edge = g.edges[("attribute:sci-fi", "concept:space exploration")]
    assert edge["chains"] == ["c0", "c2"]


def test_graph_rejects_unscored_chain():
    with pytest.raises(ValueError):
        ReasoningGraph().add_chain(simple_chain())


def test_round_trips(film_catalog):
    assert Catalog.from_dict(json.loads(json.dumps(film_catalog.to_dict()))) == film_catalog
    s = InteractionSequence("u1", ("1", "2"), ("sci-fi",))
    assert InteractionSequence.from_dict(s.to_dict()) == s
    c = simple_chain(score=40)
    assert ReasoningChain.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    g = _graph()
    assert ReasoningGraph.from_dict(json.loads(json.dumps(g.to_dict()))) == g
    div = ReasoningGraph(divergent=True)
    ug = UserGraphs(g, div, anchor_item="3")
    back = UserGraphs.from_dict(json.loads(json.dumps(ug.to_dict())))
    assert back.reasoning == g and back.divergent == div and back.anchor_item == "3"


def test_embedding_bundle_checks():
    z = np.zeros(4)
    b = EmbeddingBundle(z, z, np.zeros(3), np.zeros(3))
    b.check_dims(4, 3, 3)
    with pytest.raises(ValueError):
        b.check_dims(3, 3, 3)
    with pytest.raises(ValueError):
        EmbeddingBundle(z, z, np.array([np.nan, 0, 0]), np.zeros(3))
