"""Prompt templates: task description, example input, example output, payload."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

TASK_KINDS = ("chain_reasoning", "divergent_extension", "abductive_fill")
MASK_TOKEN = "[Mask]"
TEMPLATE_VERSION = "1"

_TEMPLATES = {
    "chain_reasoning": (
        "You are building a reasoning graph that explains a user's behaviour. "
        "Given the next item the user engaged with, the reasoning chains built so far "
        "and the available user and item attributes, write up to {max_chains} new "
        "reasoning chains that could logically motivate the user to engage with the "
        "next item. Link a chain to an existing chain when there is a logical "
        "connection by writing CHAIN[parent=<chain id>]: and starting from that "
        "chain's item; otherwise start a new chain rooted in an attribute. "
        "Write one chain per line in the form "
        "CHAIN: ATTR[attribute] -> concept -> ... -> TARGET[item title]. "
        "Use ITEM[title] for other items. Output nothing else.",
        "Next item: Interstellar\n"
        "Existing chains:\n  c0: ATTR[sci-fi] -> space exploration -> TARGET[the martian]\n"
        "User attributes: likes physics\nItem attributes: sci-fi, drama",
        "CHAIN[parent=c0]: ITEM[the martian] -> survival far from earth -> TARGET[interstellar]\n"
        "CHAIN: ATTR[likes physics] -> relativity on screen -> TARGET[interstellar]",
    ),
    "divergent_extension": (
        "You extend a user's reasoning chain beyond the last known item. Imagine "
        "plausible continuations of the chain and name up to {k} different items the "
        "user is likely to engage with next. Do not repeat items the user already "
        "consumed. Write one item per line as CANDIDATE: <item title>. "
        "Output nothing else.",
        "Chain: ATTR[sci-fi] -> complex philosophy -> TARGET[blade runner]\n"
        "Already consumed: blade runner, alien",
        "CANDIDATE: ghost in the shell\nCANDIDATE: gattaca\nCANDIDATE: solaris",
    ),
    "abductive_fill": (
        "One element of the reasoning chain below was replaced by " + MASK_TOKEN + ". "
        "Use abductive reasoning to fill in the most reasonable item or attribute. "
        "Answer with a single line ANSWER: <text>.",
        "Chain: ATTR[sci-fi] -> space exploration -> TARGET[" + MASK_TOKEN + "]",
        "ANSWER: the martian",
    ),
}

_REQUIRED = {
    "chain_reasoning": ("next_item", "existing_chains", "user_attributes", "item_attributes"),
    "divergent_extension": ("chain", "consumed", "k"),
    "abductive_fill": ("masked_nodes", "mask_index"),
}


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class Prompt:
    """A rendered request plus the structured fields it was built from.

    ``answer_key`` is never rendered; only the offline mock oracle reads it, to
    simulate abductive fills of a chosen fidelity.
    """
    task_kind: str
    task_description: str
    example_input: str
    example_output: str
    payload: str
    fields: dict = field(default_factory=dict, compare=False, hash=False)
    answer_key: Any = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        for name in ("task_description", "example_input", "example_output"):
            if not getattr(self, name).strip():
                raise PromptError(f"{name} must be non-empty")

    def render(self) -> str:
        return (
            f"{self.task_description}\n\n"
            f"Example input:\n{self.example_input}\n\n"
            f"Example output:\n{self.example_output}\n\n"
            f"Input:\n{self.payload}\n"
        )


def _fmt_list(values) -> str:
    values = list(values)
    return ", ".join(values) if values else "(none)"


def render_masked(nodes, mask_index: int) -> str:
    """Render chain tokens with the masked position shown as ``[Mask]``."""
    parts = []
    last = len(nodes) - 1
    for i, node in enumerate(nodes):
        if i == mask_index:
            label = MASK_TOKEN
        else:
            label = node.label
        if node.kind == "item":
            parts.append(f"TARGET[{label}]" if i == last else f"ITEM[{label}]")
        elif node.kind == "attribute":
            parts.append(f"ATTR[{label}]")
        else:
            parts.append(label)
    return " -> ".join(parts)


def _payload(task_kind: str, f: dict) -> str:
    body = _payload_body(task_kind, f)
    if f.get("retry"):
        body += "\nYour previous answer could not be parsed; follow the output format exactly."
    return body


def _payload_body(task_kind: str, f: dict) -> str:
    if task_kind == "chain_reasoning":
        chains = sorted(f["existing_chains"], key=lambda c: _id_key(c.id))
        if chains:
            listed = "\n".join(f"  {c.id}: {c.render()}" for c in chains)
        else:
            listed = "  (no existing chains)"
        return (f"Next item: {f['next_item']}\nExisting chains:\n{listed}\n"
                f"User attributes: {_fmt_list(f['user_attributes'])}\n"
                f"Item attributes: {_fmt_list(f['item_attributes'])}")
    if task_kind == "divergent_extension":
        return (f"Chain: {f['chain'].render()}\n"
                f"Already consumed: {_fmt_list(f['consumed'])}")
    return f"Chain: {render_masked(f['masked_nodes'], f['mask_index'])}"


def _id_key(chain_id: str):
    head = chain_id.rstrip("0123456789")
    tail = chain_id[len(head):]
    return (head, int(tail) if tail else -1, chain_id)


def build_prompt(task_kind: str, answer_key=None, **payload_fields) -> Prompt:
    """Assemble a deterministic prompt for ``task_kind``.

    Missing payload fields raise :class:`PromptError` naming the field.
    """
    if task_kind not in _TEMPLATES:
        raise PromptError(f"unknown task kind {task_kind!r}")
    for name in _REQUIRED[task_kind]:
        if name not in payload_fields:
            raise PromptError(f"{task_kind} prompt is missing field {name!r}")
    fields = dict(payload_fields)
    fields.setdefault("max_chains", 3)
    description, ex_in, ex_out = _TEMPLATES[task_kind]
    description = description.format(max_chains=fields["max_chains"], k=fields.get("k", 3))
    return Prompt(task_kind, description, ex_in, ex_out, _payload(task_kind, fields),
                  fields=fields, answer_key=answer_key)
