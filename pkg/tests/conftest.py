import pytest

from llmrg.domain import Catalog, ChainNode, Item, ReasoningChain
from llmrg.ingest import build_split
from llmrg.llm import KnowledgeTable, MockBackend, MockOracleConfig
from llmrg.pipeline import GraphBuilder
from llmrg.synthetic import make_synthetic


@pytest.fixture
def film_catalog():
    return Catalog([
        Item("1", "Star Wars", ("sci-fi", "adventure")),
        Item("2", "Blade Runner", ("sci-fi", "noir")),
        Item("3", "Alien", ("sci-fi", "horror")),
        Item("4", "Casablanca", ("romance", "drama")),
        Item("5", "Solaris", ("sci-fi", "drama")),
        Item("6", "Roman Holiday", ("romance", "comedy")),
        Item("7", "Gattaca", ("sci-fi", "drama")),
        Item("8", "Notorious", ("romance", "thriller")),
    ])


@pytest.fixture
def film_knowledge():
    return KnowledgeTable.from_dict({
        "sci-fi": {"concepts": ["space exploration", "complex philosophy"],
                   "items": ["star wars", "blade runner", "alien", "solaris", "gattaca"]},
        "romance": {"concepts": ["longing", "classic love stories"],
                    "items": ["casablanca", "roman holiday", "notorious"]},
    })


@pytest.fixture
def mock_llm(film_knowledge):
    def make(**kw):
        return MockBackend(MockOracleConfig(knowledge=film_knowledge, **kw))
    return make


def item(catalog, item_id):
    return ChainNode("item", catalog[item_id].title, item_id)


def simple_chain(target_id="1", title="star wars", attr="sci-fi", concept="space exploration",
                 score=None, cid="c0", origin="observed"):
    return ReasoningChain((ChainNode("attribute", attr), ChainNode("concept", concept),
                           ChainNode("item", title, target_id)),
                          target_item=target_id, score=score, id=cid, origin=origin)


@pytest.fixture(scope="session")
def tiny_world():
    """30 synthetic users over 40 items with mock-built train/test graphs."""
    catalog, seqs, knowledge = make_synthetic(30, 40, n_tastes=4, pool_hits=3, noise=(2, 4), seed=0)
    split = build_split(seqs, 10)
    llm = MockBackend(MockOracleConfig(knowledge=knowledge, fidelity=0.9))
    views = GraphBuilder(l_tru=10).fit(catalog=catalog, llm=llm).build_split_views(split)
    return catalog, split, views


ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
