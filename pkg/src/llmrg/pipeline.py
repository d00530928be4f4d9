"""Adaptive reasoning pipeline: sequences -> (G_rea, G_div) per user.

:class:`GraphBuilder` follows the transformer convention (``fit`` /
``transform``) so it can sit in front of the recommender.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path

from sklearn.base import BaseEstimator, TransformerMixin

from .config import LLMRGConfig
from .diverge import build_divergent_graph
from .domain import Catalog, InteractionSequence, ReasoningGraph, UserGraphs
from .ground import Grounder
from .ingest import LeaveOneOutSplit
from .kbase import KnowledgeBase
from .llm import KnowledgeTable, LLMBackend, MockOracleConfig, make_backend
from .reason import BackendOutage, ReasoningContext, build_reasoning_graph
from .verify import AuditLog

logger = logging.getLogger(__name__)


def backend_from_config(config: LLMRGConfig, knowledge: KnowledgeTable | None = None) -> LLMBackend:
    mock = None
    if config.backend.kind == "mock":
        if knowledge is None and config.mock.knowledge_path:
            knowledge = KnowledgeTable.load(config.mock.knowledge_path)
        mock = MockOracleConfig(knowledge=knowledge or KnowledgeTable(),
                                fidelity=config.mock.fidelity, seed=config.mock.seed,
                                hallucination_rate=config.mock.hallucination_rate,
                                title_noise=config.mock.title_noise)
    backend_cfg = config.backend
    if config.jobs > 1:
        backend_cfg = replace(backend_cfg, parallelism=config.jobs)
    return make_backend(backend_cfg, mock)


class GraphBuilder(BaseEstimator, TransformerMixin):
    """Build reasoning and divergent graphs for interaction sequences.

    Parameters mirror the reasoning knobs of :class:`LLMRGConfig`; the
    catalog, backend and knowledge base are passed to :meth:`fit`.
    Users are processed in input order against one shared knowledge base,
    which keeps the output deterministic under the mock backend.
    """

    def __init__(self, tau=30, l_tru=50, chains_per_item=3, k=3, theta_sim=0.35,
                 verify=True, divergent=True, seed=1, kb_capacity=100_000):
        self.tau = tau
        self.l_tru = l_tru
        self.chains_per_item = chains_per_item
        self.k = k
        self.theta_sim = theta_sim
        self.verify = verify
        self.divergent = divergent
        self.seed = seed
        self.kb_capacity = kb_capacity

    @classmethod
    def from_config(cls, config: LLMRGConfig) -> "GraphBuilder":
        return cls(tau=config.tau, l_tru=config.l_tru, chains_per_item=config.chains_per_item,
                   k=config.k, theta_sim=config.theta_sim, verify=config.verify,
                   divergent=config.divergent, seed=config.seed, kb_capacity=config.kb_capacity)

    def _config(self) -> LLMRGConfig:
        return LLMRGConfig(tau=self.tau, l_tru=self.l_tru, chains_per_item=self.chains_per_item,
                           k=self.k, theta_sim=self.theta_sim, verify=self.verify,
                           divergent=self.divergent, seed=self.seed,
                           kb_capacity=self.kb_capacity)

    def fit(self, X=None, y=None, *, catalog: Catalog, llm: LLMBackend,
            kbase: KnowledgeBase | None = None, grounder: Grounder | None = None):
        self.config_ = self._config()  # validates the parameters
        self.catalog_ = catalog
        self.llm_ = llm
        self.kbase_ = kbase if kbase is not None else KnowledgeBase(self.kb_capacity)
        self.grounder_ = grounder or Grounder(catalog)
        self.audit_ = AuditLog()
        return self

    def _context(self, user_id: str) -> ReasoningContext:
        return ReasoningContext(self.catalog_, self.llm_, self.config_, self.grounder_,
                                self.kbase_, self.audit_, user_id)

    def build_user(self, user_id: str, events, attributes=(), observed=None) -> UserGraphs:
        """Graphs for one model input; ``observed`` (default: ``events``) is excluded
        from divergent terminals."""
        events = tuple(events)[-self.l_tru:]
        observed = set(observed if observed is not None else events) | set(events)
        ctx = self._context(user_id)
        g_rea = build_reasoning_graph(events, attributes, ctx)
        if self.divergent:
            titles = [self.catalog_[e].title for e in events]
            g_div = build_divergent_graph(g_rea, observed, ctx, titles)
        else:
            g_div = ReasoningGraph(divergent=True)
        if ctx.calls_attempted and ctx.calls_failed == ctx.calls_attempted:
            raise BackendOutage(f"user {user_id}: all {ctx.calls_attempted} model calls failed")
        return UserGraphs(g_rea, g_div, anchor_item=events[-1] if events else None)

    def transform(self, X):
        """``X``: iterable of :class:`InteractionSequence`; returns one UserGraphs each."""
        return [self.build_user(s.user_id, s.events, s.attributes) for s in X]

    def build_split_views(self, split: LeaveOneOutSplit) -> dict[str, dict[str, UserGraphs]]:
        """Per user: ``train`` graphs over the prefix minus its last event, ``test``
        graphs over the full prefix."""
        out = {}
        for u in split.users:
            views = {}
            train_input = u.train_input(self.l_tru)
            if u.train_target is not None and train_input:
                views["train"] = self.build_user(u.user_id, train_input, u.attributes,
                                                 observed=u.prefix[:-1])
            views["test"] = self.build_user(u.user_id, u.input, u.attributes, observed=u.prefix)
            out[u.user_id] = views
        return out


def _safe_name(user_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in user_id)


def save_graphs(directory, views: dict[str, dict[str, UserGraphs]]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    index = {}
    for user_id, per_view in views.items():
        name = f"user_{_safe_name(user_id)}.json"
        index[user_id] = name
        payload = {"user_id": user_id}
        payload.update({view: g.to_dict() for view, g in sorted(per_view.items())})
        with open(d / name, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True, ensure_ascii=False)
    with open(d / "index.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)


def load_graphs(directory) -> dict[str, dict[str, UserGraphs]]:
    d = Path(directory)
    with open(d / "index.json", encoding="utf-8") as fh:
        index = json.load(fh)
    out = {}
    for user_id, name in index.items():
        with open(d / name, encoding="utf-8") as fh:
            data = json.load(fh)
        out[user_id] = {view: UserGraphs.from_dict(data[view])
                        for view in ("train", "test") if view in data}
    return out


def load_user_graphs(directory, user_id: str) -> dict[str, UserGraphs]:
    d = Path(directory)
    with open(d / "index.json", encoding="utf-8") as fh:
        name = json.load(fh)[user_id]
    with open(d / name, encoding="utf-8") as fh:
        data = json.load(fh)
    return {view: UserGraphs.from_dict(data[view]) for view in ("train", "test") if view in data}


__all__ = ["GraphBuilder", "backend_from_config", "save_graphs", "load_graphs",
           "load_user_graphs", "InteractionSequence"]
