"""Chained graph reasoning over a user's interaction sequence.

For each item, in sequence order: consult the knowledge base, otherwise ask the
model for chains that link the item to existing chains or start new ones,
verify and filter them, cache the survivors and merge them into the graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .config import LLMRGConfig
from .domain import (
    Catalog,
    ChainNode,
    LabelError,
    ReasoningChain,
    ReasoningGraph,
    canonicalize_label,
    chain_signature,
    context_key,
)
from .ground import Grounder
from .kbase import KnowledgeBase, KnowledgeBaseEntry
from .llm import BackendError, LLMBackend, ParseError, build_prompt, parse_chains
from .verify import AuditLog, filter_chains, verify_chains

logger = logging.getLogger(__name__)


class BackendOutage(RuntimeError):
    """Every model call made while building a user's graphs failed."""


@dataclass
class ReasoningContext:
    """Dependencies shared by the graph-building steps."""
    catalog: Catalog
    llm: LLMBackend
    config: LLMRGConfig
    grounder: Grounder | None = None
    kbase: KnowledgeBase | None = None
    audit: AuditLog = field(default_factory=AuditLog)
    user_id: str = ""
    calls_attempted: int = 0
    calls_failed: int = 0
    parse_skips: int = 0

    def __post_init__(self):
        if self.grounder is None:
            self.grounder = Grounder(self.catalog)

    def resolve_item(self, label: str) -> str | None:
        """Exact canonical title match, else the nearest title above ``theta_sim``."""
        exact = self.catalog.find_by_label(label)
        if exact is not None:
            return exact
        top = self.grounder.retrieve_top_k(label, 1)
        if top and top[0][1] >= self.config.theta_sim:
            return top[0][0]
        return None

    def call(self, prompt) -> str | None:
        self.calls_attempted += 1
        try:
            return self.llm.complete(prompt)
        except BackendError as exc:
            self.calls_failed += 1
            logger.warning("user %s: %s call failed: %s", self.user_id, prompt.task_kind, exc)
            return None


@dataclass
class StepResult:
    candidates: list[ReasoningChain]
    cached: list[ReasoningChain]
    failed: bool = False


def _clean_labels(values) -> list[str]:
    out: dict[str, None] = {}
    for v in values:
        try:
            out.setdefault(canonicalize_label(v), None)
        except LabelError:
            continue
    return list(out)


def chain_context_keys(chain: ReasoningChain, task: str = "reason") -> list[str]:
    return [context_key(n.label, chain.target_item, task) for n in chain.nodes[:-1]]


def extend_graph_with_item(graph: ReasoningGraph, item_id: str, attributes,
                           ctx: ReasoningContext) -> StepResult:
    """Propose chains motivating ``item_id`` given the graph built so far.

    Returned candidates are unverified and carry fresh ids; cached chains
    come back already scored.
    """
    cfg = ctx.config
    item = ctx.catalog[item_id]
    user_attrs = _clean_labels(attributes)
    item_attrs = _clean_labels(item.attributes)
    available = set(user_attrs) | set(item_attrs)
    seen_items = {n.label for n in graph.item_nodes()}

    step = None
    if ctx.kbase is not None:
        keys = [context_key(a, item_id) for a in sorted(available)]
        keys += [context_key(lbl, item_id) for lbl in sorted(seen_items)]

        def accept(entry: KnowledgeBaseEntry) -> bool:
            if entry.score < cfg.tau or entry.chain.target_item != item_id:
                return False
            for n in entry.chain.nodes[:-1]:
                if n.kind == "attribute" and n.label not in available:
                    return False
                if n.kind == "item" and n.label not in seen_items:
                    return False
            return True

        hits = ctx.kbase.lookup_any(keys, accept)
        step = ctx.kbase.step
        if hits:
            cached = [e.chain.with_(origin="cached", score=e.score, parent=None,
                                    id=graph.allocate_id())
                      for e in sorted(hits, key=lambda e: e.signature)]
            return StepResult([], cached)

    prompt_fields = dict(next_item=item.title, existing_chains=list(graph.chains),
                         user_attributes=user_attrs, item_attributes=item_attrs,
                         max_chains=cfg.chains_per_item)
    parsed = None
    calls = 0
    for retry in (False, True):
        raw = ctx.call(build_prompt("chain_reasoning", retry=retry, **prompt_fields))
        calls += 1
        if raw is None:
            break
        try:
            parsed = parse_chains(raw, ctx.resolve_item)
            ctx.parse_skips += parsed.skipped
            break
        except ParseError:
            logger.info("user %s item %s: unparseable chains, re-prompting", ctx.user_id, item_id)
    if ctx.kbase is not None:
        ctx.kbase.record_calls(calls, step)
    if parsed is None:
        return StepResult([], [], failed=True)

    known_ids = {c.id for c in graph.chains}
    out = []
    for chain in parsed[: cfg.chains_per_item]:
        if chain.target_item != item_id:
            ctx.parse_skips += 1
            continue
        parent = chain.parent if chain.parent in known_ids else None
        out.append(chain.with_(parent=parent, id=graph.allocate_id(), origin="observed"))
    return StepResult(out, [])


def fallback_chain(graph: ReasoningGraph, item_id: str, attributes, catalog: Catalog) -> ReasoningChain:
    """Low-confidence attribute -> item link that keeps the item in the graph."""
    item = catalog[item_id]
    labels = _clean_labels(item.attributes) or _clean_labels(attributes)
    root = ChainNode("attribute", labels[0]) if labels else ChainNode("concept", "interest")
    target = ChainNode("item", item.title, item_id)
    return ReasoningChain((root, target), target_item=item_id, score=0, origin="fallback",
                          id=graph.allocate_id(), verified=False)


def verify_and_cache(candidates: list[ReasoningChain], ctx: ReasoningContext,
                     task: str = "reason", extra_keys=()) -> list[ReasoningChain]:
    """Score candidates (reusing cached verdicts), filter by tau, cache survivors."""
    cfg = ctx.config
    if not candidates:
        return []
    if not cfg.verify:
        return [c.with_(score=100, verified=False) for c in candidates]

    scored: dict[str, ReasoningChain] = {}
    pending, steps = [], []
    for c in candidates:
        if ctx.kbase is not None and any(n.maskable for n in c.nodes):
            entry = ctx.kbase.lookup(chain_signature(c))
            if entry is not None:
                scored[c.id] = c.with_(score=entry.score)
                continue
            steps.append(ctx.kbase.step)
        pending.append(c)
    details: dict = {}
    if pending:
        ctx.calls_attempted += sum(any(n.maskable for n in c.nodes) for c in pending)
        try:
            results, details = verify_chains(pending, ctx.llm, ctx.grounder, cfg.seed,
                                             ctx.user_id)
        except BackendError as exc:
            logger.warning("user %s: verification failed: %s", ctx.user_id, exc)
            ctx.calls_failed += sum(any(n.maskable for n in c.nodes) for c in pending)
            results = [c.with_(score=0) for c in pending]
        for r in results:
            scored[r.id] = r
        if ctx.kbase is not None:
            for s in steps:
                ctx.kbase.record_calls(1, s)
    ordered = [scored[c.id] for c in candidates]
    retained = filter_chains(ordered, cfg.tau, ctx.audit, ctx.user_id, details)
    if ctx.kbase is not None:
        for c in retained:
            if c.verified:
                keys = chain_context_keys(c, task) if task == "reason" else list(extra_keys)
                ctx.kbase.insert(chain_signature(c), c, c.score, cfg.tau, keys)
    return retained


def build_reasoning_graph(events, attributes, ctx: ReasoningContext) -> ReasoningGraph:
    """Progressively build G_rea along ``events`` (already truncated to l_tru)."""
    graph = ReasoningGraph()
    for item_id in events:
        result = extend_graph_with_item(graph, item_id, attributes, ctx)
        if result.cached:
            retained = result.cached
        else:
            retained = verify_and_cache(result.candidates, ctx)
        if not retained:
            retained = [fallback_chain(graph, item_id, attributes, ctx.catalog)]
        for chain in retained:
            graph.add_chain(chain)
    return graph
