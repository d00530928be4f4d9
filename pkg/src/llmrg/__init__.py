"""Reasoning-graph augmented sequential recommendation."""

from .config import LLMRGConfig
from .domain import (
    Catalog,
    ChainNode,
    EmbeddingBundle,
    InteractionSequence,
    Item,
    ReasoningChain,
    ReasoningGraph,
    UserGraphs,
    canonicalize_label,
    chain_signature,
)
from .evaluate import MetricsReport, evaluate, hr_at_n, ndcg_at_n
from .kbase import KnowledgeBase
from .pipeline import GraphBuilder
from .recommend import LLMRGRecommender

__version__ = "0.1.0"

__all__ = [
    "Catalog", "ChainNode", "EmbeddingBundle", "GraphBuilder", "InteractionSequence", "Item",
    "KnowledgeBase", "LLMRGConfig", "LLMRGRecommender", "MetricsReport", "ReasoningChain",
    "ReasoningGraph", "UserGraphs", "canonicalize_label", "chain_signature", "evaluate",
    "hr_at_n", "ndcg_at_n",
]
