"""Core data model: catalog, interaction sequences, reasoning chains and graphs."""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

NODE_KINDS = ("item", "attribute", "concept")
ORIGINS = ("observed", "divergent", "cached", "fallback")

_STRIP_CHARS = string.whitespace + string.punctuation


class LabelError(ValueError):
    """Raised when a label normalizes to the empty string."""


def canonicalize_label(text: str) -> str:
    """Lowercase, collapse internal whitespace, strip surrounding punctuation.

    Interior punctuation is preserved: ``"Action/Adventure"`` becomes
    ``"action/adventure"``.
    """
    collapsed = " ".join(str(text).lower().split())
    label = collapsed.strip(_STRIP_CHARS)
    if not label:
        raise LabelError(f"label {text!r} is empty after normalization")
    return label


def _natural_key(item_id: str):
    return (0, int(item_id), "") if item_id.isdigit() else (1, 0, item_id)


@dataclass(frozen=True)
class Item:
    id: str
    title: str
    attributes: tuple[str, ...] = ()

    def __post_init__(self):
        if not str(self.title).strip():
            raise ValueError(f"item {self.id!r} has an empty title")
        seen: dict[str, None] = {}
        for a in self.attributes:
            seen.setdefault(a, None)
        object.__setattr__(self, "attributes", tuple(seen))


class Catalog:
    """Item set with dense positions ``0..|V|-1``.

    Items are kept sorted by id (numeric ids compare numerically), so the
    position order doubles as the "ascending item id" tie-break order.
    """

    def __init__(self, items: Iterable[Item] = ()):
        ordered = sorted(items, key=lambda it: _natural_key(it.id))
        self.items: list[Item] = ordered
        self.index: dict[str, int] = {}
        for pos, item in enumerate(ordered):
            if item.id in self.index:
                raise ValueError(f"duplicate item id {item.id!r}")
            self.index[item.id] = pos
        self._by_title: dict[str, str] | None = None

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.index

    def __getitem__(self, item_id: str) -> Item:
        return self.items[self.index[item_id]]

    def __eq__(self, other) -> bool:
        return isinstance(other, Catalog) and self.items == other.items

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]

    def label_of(self, item_id: str) -> str:
        return canonicalize_label(self[item_id].title)

    def find_by_label(self, label: str) -> str | None:
        """Exact canonical-title lookup; first item id wins on duplicate titles."""
        if self._by_title is None:
            table: dict[str, str] = {}
            for it in self.items:
                table.setdefault(canonicalize_label(it.title), it.id)
            self._by_title = table
        return self._by_title.get(label)

    def to_dict(self) -> dict:
        return {"items": [
            {"id": it.id, "title": it.title, "attributes": list(it.attributes)}
            for it in self.items
        ]}

    @classmethod
    def from_dict(cls, data: dict) -> "Catalog":
        return cls(Item(d["id"], d["title"], tuple(d.get("attributes", ())))
                   for d in data["items"])


@dataclass(frozen=True)
class InteractionSequence:
    """A user's chronologically ordered, deduplicated events plus user attributes.

    The relative time index of ``events[i]`` is ``i + 1``.
    """
    user_id: str
    events: tuple[str, ...]
    attributes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if len(set(self.events)) != len(self.events):
            raise ValueError(f"user {self.user_id!r} has duplicate events")

    def __len__(self) -> int:
        return len(self.events)

    def check_catalog(self, catalog: Catalog) -> None:
        missing = [e for e in self.events if e not in catalog]
        if missing:
            raise ValueError(f"user {self.user_id!r}: unknown items {missing[:5]}")

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "events": list(self.events),
                "attributes": list(self.attributes)}

    @classmethod
    def from_dict(cls, data: dict) -> "InteractionSequence":
        return cls(data["user_id"], tuple(data["events"]), tuple(data.get("attributes", ())))


@dataclass(frozen=True)
class ChainNode:
    kind: str
    label: str
    item_ref: str | None = None

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        object.__setattr__(self, "label", canonicalize_label(self.label))
        if (self.kind == "item") != (self.item_ref is not None):
            raise ValueError("item_ref is required iff kind == 'item'")

    @property
    def key(self) -> str:
        return f"{self.kind}:{self.label}"

    @property
    def maskable(self) -> bool:
        return self.kind in ("item", "attribute")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "label": self.label, "item_ref": self.item_ref}

    @classmethod
    def from_dict(cls, data: dict) -> "ChainNode":
        return cls(data["kind"], data["label"], data.get("item_ref"))


_RELATIONS = {
    ("attribute", "concept"): "suggests",
    ("attribute", "item"): "draws to",
    ("attribute", "attribute"): "relates to",
    ("concept", "concept"): "deepens into",
    ("concept", "item"): "motivates",
    ("concept", "attribute"): "reflects",
    ("item", "concept"): "evokes",
    ("item", "item"): "leads to",
    ("item", "attribute"): "exhibits",
}


def relation_for(src: ChainNode, dst: ChainNode) -> str:
    return _RELATIONS[(src.kind, dst.kind)]


@dataclass(frozen=True)
class ReasoningChain:
    """Ordered nodes with implicit consecutive links.

    ``relations[i]`` labels the edge ``nodes[i] -> nodes[i+1]``.  ``score`` is
    ``None`` until verification; ``verified`` is False for chains that bypassed
    the abductive check (fallbacks, or runs with verification disabled).
    """
    nodes: tuple[ChainNode, ...]
    target_item: str
    relations: tuple[str, ...] = ()
    score: int | None = None
    origin: str = "observed"
    id: str = ""
    parent: str | None = None
    verified: bool = True

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) < 2:
            raise ValueError("a reasoning chain needs at least two nodes")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        rels = tuple(self.relations) or tuple(
            relation_for(a, b) for a, b in zip(nodes, nodes[1:]))
        if len(rels) != len(nodes) - 1:
            raise ValueError("relations must label every consecutive pair")
        object.__setattr__(self, "relations", rels)
        if self.score is not None and not 0 <= self.score <= 100:
            raise ValueError(f"score {self.score} outside 0..100")
        if self.origin == "observed":
            last = nodes[-1]
            if last.kind != "item" or last.item_ref != self.target_item:
                raise ValueError("observed chains must end at their target item")

    @property
    def terminal(self) -> ChainNode:
        return self.nodes[-1]

    @property
    def llm_derived(self) -> bool:
        return self.origin != "fallback"

    def with_(self, **changes) -> "ReasoningChain":
        return replace(self, **changes)

    def render(self) -> str:
        return " -> ".join(_render_node(n, last=(i == len(self.nodes) - 1))
                           for i, n in enumerate(self.nodes))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "nodes": [n.to_dict() for n in self.nodes],
            "relations": list(self.relations),
            "target_item": self.target_item,
            "score": self.score,
            "origin": self.origin,
            "parent": self.parent,
            "verified": self.verified,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ReasoningChain":
        return cls(
            nodes=tuple(ChainNode.from_dict(n) for n in data["nodes"]),
            target_item=data["target_item"],
            relations=tuple(data.get("relations", ())),
            score=data.get("score"),
            origin=data.get("origin", "observed"),
            id=data.get("id", ""),
            parent=data.get("parent"),
            verified=data.get("verified", True),
        )


def _render_node(node: ChainNode, last: bool = False) -> str:
    if last and node.kind == "item":
        return f"TARGET[{node.label}]"
    if node.kind == "item":
        return f"ITEM[{node.label}]"
    if node.kind == "attribute":
        return f"ATTR[{node.label}]"
    return node.label


def _digest(payload) -> str:
    raw = json.dumps(payload, separators=(",", ":"), ensure_ascii=False)
    return hashlib.blake2b(raw.encode("utf-8"), digest_size=16).hexdigest()


def chain_signature(chain: ReasoningChain) -> str:
    """128-bit hex digest over sorted non-terminal node keys and the target id."""
    if len(chain.nodes) < 2:
        raise ValueError("signature needs at least two nodes")
    body = sorted(n.key for n in chain.nodes[:-1])
    return _digest(["chain", body, chain.target_item])


def context_key(anchor_label: str, target_item: str, task: str = "reason") -> str:
    """Lookup key for "a chain rooted at this label that motivates this item"."""
    return _digest(["ctx", task, anchor_label, target_item])


class ReasoningGraph:
    """Union of retained chains; nodes keyed by (kind, label), edges deduplicated."""

    def __init__(self, chains: Iterable[ReasoningChain] = (), divergent: bool = False):
        self.divergent = divergent
        self.proposed = 0
        self.nodes: dict[str, ChainNode] = {}
        self.edges: dict[tuple[str, str], dict] = {}
        self.chains: list[ReasoningChain] = []
        for c in chains:
            self.add_chain(c)

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ReasoningGraph) and self.divergent == other.divergent
                and self.to_dict() == other.to_dict())

    @property
    def llm_chains(self) -> list[ReasoningChain]:
        return [c for c in self.chains if c.llm_derived]

    def chain_by_id(self, chain_id: str) -> ReasoningChain | None:
        for c in self.chains:
            if c.id == chain_id:
                return c
        return None

    def add_chain(self, chain: ReasoningChain) -> None:
        if chain.score is None:
            raise ValueError(f"chain {chain.id!r} is unscored")
        self.chains.append(chain)
        for n in chain.nodes:
            self.nodes.setdefault(n.key, n)
        for (a, b), rel in zip(zip(chain.nodes, chain.nodes[1:]), chain.relations):
            edge = self.edges.setdefault((a.key, b.key), {"relation": rel, "chains": []})
            if chain.id not in edge["chains"]:
                edge["chains"].append(chain.id)

    def item_nodes(self) -> list[ChainNode]:
        return [n for n in self.nodes.values() if n.kind == "item"]

    def terminal_items(self) -> list[str]:
        out: dict[str, None] = {}
        for c in self.chains:
            if c.terminal.kind == "item":
                out.setdefault(c.terminal.item_ref, None)
        return list(out)

    def allocate_id(self) -> str:
        """Ids count every proposed chain, so rejected ones keep distinct ids too."""
        prefix = "d" if self.divergent else "c"
        self.proposed += 1
        return f"{prefix}{self.proposed - 1}"

    def to_dict(self) -> dict:
        return {
            "nodes": [self.nodes[k].to_dict() for k in sorted(self.nodes)],
            "edges": [
                {"src": s, "dst": d, "relation": e["relation"], "chains": list(e["chains"])}
                for (s, d), e in sorted(self.edges.items())
            ],
            "chains": [c.to_dict() for c in self.chains],
            "proposed": self.proposed,
        }

    @classmethod
    def from_dict(cls, data: dict, divergent: bool = False) -> "ReasoningGraph":
        g = cls(divergent=divergent)
        for c in data.get("chains", ()):
            g.add_chain(ReasoningChain.from_dict(c))
        g.proposed = data.get("proposed", len(g.chains))
        for n in data.get("nodes", ()):
            node = ChainNode.from_dict(n)
            g.nodes.setdefault(node.key, node)
        return g


@dataclass
class UserGraphs:
    """G_rea and G_div for one model input sequence."""
    reasoning: ReasoningGraph
    divergent: ReasoningGraph = field(default_factory=lambda: ReasoningGraph(divergent=True))
    anchor_item: str | None = None

    def to_dict(self) -> dict:
        out = self.reasoning.to_dict()
        out["anchor_item"] = self.anchor_item
        out["divergent"] = self.divergent.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "UserGraphs":
        return cls(
            reasoning=ReasoningGraph.from_dict(data),
            divergent=ReasoningGraph.from_dict(data.get("divergent", {}), divergent=True),
            anchor_item=data.get("anchor_item"),
        )


@dataclass(frozen=True)
class EmbeddingBundle:
    e_ori: np.ndarray
    e_div: np.ndarray
    e_base: np.ndarray
    e_fusion: np.ndarray

    def __post_init__(self):
        for name in ("e_ori", "e_div", "e_base", "e_fusion"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")

    def check_dims(self, d_g: int, d_b: int, d_f: int) -> None:
        got = (self.e_ori.shape, self.e_div.shape, self.e_base.shape, self.e_fusion.shape)
        want = ((d_g,), (d_g,), (d_b,), (d_f,))
        if got != want:
            raise ValueError(f"embedding shapes {got} != {want}")


_DOT_SHAPES = {"item": "box", "attribute": "ellipse", "concept": "diamond"}


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def graphs_to_dot(graphs: UserGraphs, name: str = "reasoning") -> str:
    """DOT export: shape by node kind, edge label = relation, divergent edges red."""
    lines = [f"digraph {_dot_quote(name)} {{", "  rankdir=LR;"]
    seen: set[str] = set()
    for graph in (graphs.reasoning, graphs.divergent):
        for key in sorted(graph.nodes):
            if key in seen:
                continue
            seen.add(key)
            n = graph.nodes[key]
            lines.append(f"  {_dot_quote(key)} [label={_dot_quote(n.label)}, "
                         f"shape={_DOT_SHAPES[n.kind]}];")
    for (s, d), e in sorted(graphs.reasoning.edges.items()):
        lines.append(f"  {_dot_quote(s)} -> {_dot_quote(d)} "
                     f"[label={_dot_quote(e['relation'])}, color=black];")
    divergent_tail = {(c.nodes[-2].key, c.nodes[-1].key) for c in graphs.divergent.chains}
    for (s, d), e in sorted(graphs.divergent.edges.items()):
        if (s, d) in graphs.reasoning.edges and (s, d) not in divergent_tail:
            continue
        lines.append(f"  {_dot_quote(s)} -> {_dot_quote(d)} "
                     f"[label={_dot_quote(e['relation'])}, color=red, fontcolor=red];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def union_of_chain_nodes(chains: Sequence[ReasoningChain]) -> set[str]:
    return {n.key for c in chains for n in c.nodes}
