"""Self-verification: random masking, abductive fill-in, match scoring, threshold filtering."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .domain import ChainNode, ReasoningChain
from .ground import Grounder
from .llm import LLMBackend, build_prompt, parse_answer
from .validation import check_tau


@dataclass(frozen=True)
class MaskedChain:
    chain: ReasoningChain
    mask_index: int

    def unmask(self, node: ChainNode) -> ReasoningChain:
        nodes = list(self.chain.nodes)
        nodes[self.mask_index] = node
        return self.chain.with_(nodes=tuple(nodes))


def mask_chain(chain: ReasoningChain, rng: random.Random) -> tuple[MaskedChain, ChainNode] | None:
    """Pick one item/attribute node uniformly; ``None`` when nothing is maskable."""
    candidates = [i for i, n in enumerate(chain.nodes) if n.maskable]
    if not candidates:
        return None
    idx = candidates[rng.randrange(len(candidates))]
    return MaskedChain(chain, idx), chain.nodes[idx]


def abductive_prompt(masked: MaskedChain, original: ChainNode):
    return build_prompt("abductive_fill", answer_key=original.label,
                        masked_nodes=masked.chain.nodes, mask_index=masked.mask_index)


def abduce(masked: MaskedChain, llm: LLMBackend, original: ChainNode | None = None) -> str:
    """Ask the model to fill the mask; returns the canonical fill or ``""``."""
    original = original or masked.chain.nodes[masked.mask_index]
    return parse_answer(llm.complete(abductive_prompt(masked, original)))


def score_match(prediction: str, original: str, grounder: Grounder) -> int:
    """round(100 * cosine); exact equality forces 100, an empty prediction 0."""
    if not prediction:
        return 0
    if prediction == original:
        return 100
    return int(round(100 * grounder.similarity(prediction, original)))


@dataclass
class Rejection:
    user: str
    chain_id: str
    score: int
    tau: int
    masked_node: str | None
    prediction: str | None

    def to_json(self) -> str:
        return json.dumps({"user": self.user, "chain": self.chain_id, "score": self.score,
                           "tau": self.tau, "masked_node": self.masked_node,
                           "prediction": self.prediction}, sort_keys=True)


@dataclass
class AuditLog:
    """Line-delimited record of rejected chains."""
    records: list[Rejection] = field(default_factory=list)

    def add(self, rejection: Rejection) -> None:
        self.records.append(rejection)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")


def filter_chains(scored: list[ReasoningChain], tau: int, audit: AuditLog | None = None,
                  user: str = "", details: dict | None = None) -> list[ReasoningChain]:
    """Keep chains with ``score >= tau``; log the others to ``audit``."""
    check_tau(tau)
    retained = []
    for c in scored:
        if c.score is None:
            raise ValueError(f"chain {c.id!r} is unscored")
        if c.score >= tau:
            retained.append(c)
        elif audit is not None:
            masked, pred = (details or {}).get(c.id, (None, None))
            audit.add(Rejection(user, c.id, c.score, tau, masked, pred))
    return retained


def chain_rng(seed: int, user: str, chain: ReasoningChain) -> random.Random:
    return random.Random(f"mask|{seed}|{user}|{chain.id}|{chain.render()}")


def verify_chains(chains: list[ReasoningChain], llm: LLMBackend, grounder: Grounder,
                  seed: int, user: str = "") -> tuple[list[ReasoningChain], dict]:
    """Mask, abduce and score each chain; fills are requested concurrently.

    Returns the scored chains and ``{chain id: (masked label, prediction)}``.
    Chains without a maskable node score 0 and are flagged unverified.
    """
    jobs = []
    scored: dict[int, ReasoningChain] = {}
    details: dict = {}
    for i, c in enumerate(chains):
        masked = mask_chain(c, chain_rng(seed, user, c))
        if masked is None:
            scored[i] = c.with_(score=0, verified=False)
            details[c.id] = (None, None)
        else:
            jobs.append((i, masked[0], masked[1]))
    responses = llm.complete_many([abductive_prompt(m, orig) for _, m, orig in jobs])
    for (i, _m, orig), raw in zip(jobs, responses):
        pred = parse_answer(raw)
        s = score_match(pred, orig.label, grounder)
        scored[i] = chains[i].with_(score=s, verified=True)
        details[chains[i].id] = (orig.label, pred)
    return [scored[i] for i in range(len(chains))], details

