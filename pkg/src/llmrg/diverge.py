"""Divergent extension: imaginary next-item continuations of retained chains,
grounded to catalog items the user has not consumed."""

from __future__ import annotations

import logging

from .domain import Catalog, ChainNode, ReasoningChain, ReasoningGraph, chain_signature, context_key
from .ground import Grounder
from .kbase import KnowledgeBaseEntry
from .llm import BackendError, LLMBackend, build_prompt, parse_candidates
from .reason import ReasoningContext, verify_and_cache
from .validation import check_unit_interval

logger = logging.getLogger(__name__)


def extension_prompt(chain: ReasoningChain, k: int, consumed=()):
    return build_prompt("divergent_extension", chain=chain, consumed=list(consumed), k=k)


def extend_chain(chain: ReasoningChain, llm: LLMBackend, k: int, consumed=()) -> list[str]:
    """Up to ``k`` distinct candidate item descriptions continuing ``chain``.

    A backend failure yields an empty list, as does an unparseable response.
    """
    try:
        raw = llm.complete(extension_prompt(chain, k, consumed))
    except BackendError as exc:
        logger.warning("extension of %s failed: %s", chain.id, exc)
        return []
    return parse_candidates(raw)[:k]


def ground_candidates(candidates, catalog: Catalog, observed_items, grounder: Grounder,
                      theta_sim: float) -> list[tuple[str, float]]:
    """Map each candidate to its nearest catalog title.

    A match is kept iff its similarity reaches ``theta_sim`` and the item is not
    in ``observed_items``; duplicates keep their first occurrence.
    """
    check_unit_interval(theta_sim, "theta_sim")
    observed = set(observed_items)
    out: dict[str, float] = {}
    for text in candidates:
        top = grounder.retrieve_top_k(text, 1)
        if not top:
            continue
        item_id, sim = top[0]
        if sim >= theta_sim and item_id not in observed and item_id not in out:
            out[item_id] = sim
    return list(out.items())


def divergent_key(chain: ReasoningChain) -> str:
    return context_key(chain_signature(chain), "", task="diverge")


def build_divergent_graph(g_rea: ReasoningGraph, observed_items, ctx: ReasoningContext,
                          consumed_titles=()) -> ReasoningGraph:
    """Extend every retained model-derived chain of ``g_rea`` by one grounded item."""
    cfg = ctx.config
    observed = set(observed_items)
    g_div = ReasoningGraph(divergent=True)
    for chain in g_rea.llm_chains:
        cached = None
        step = None
        if ctx.kbase is not None:
            def accept(entry: KnowledgeBaseEntry) -> bool:
                return entry.score >= cfg.tau and entry.chain.target_item not in observed

            hits = ctx.kbase.lookup_any([divergent_key(chain)], accept)
            step = ctx.kbase.step
            if hits:
                hits = sorted(hits, key=lambda e: (-e.score, e.signature))[: cfg.k]
                cached = [e.chain.with_(origin="divergent", score=e.score, parent=chain.id,
                                        id=g_div.allocate_id()) for e in hits]
        if cached is not None:
            retained = cached
        else:
            raw = ctx.call(extension_prompt(chain, cfg.k, consumed_titles))
            candidates = parse_candidates(raw)[: cfg.k] if raw is not None else []
            if ctx.kbase is not None:
                ctx.kbase.record_calls(1, step)
            grounded = ground_candidates(candidates, ctx.catalog, observed, ctx.grounder,
                                         cfg.theta_sim)
            extensions = []
            for item_id, _sim in grounded:
                node = ChainNode("item", ctx.catalog[item_id].title, item_id)
                if any(n.key == node.key for n in chain.nodes):
                    continue
                extensions.append(ReasoningChain(
                    chain.nodes + (node,), target_item=item_id,
                    relations=chain.relations + ("extends to",),
                    origin="divergent", parent=chain.id, id=g_div.allocate_id()))
            retained = verify_and_cache(extensions, ctx, task="diverge",
                                        extra_keys=[divergent_key(chain)])
        for ext in retained:
            g_div.add_chain(ext)
    return g_div
