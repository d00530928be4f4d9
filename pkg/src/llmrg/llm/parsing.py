"""Line-grammar parsers for model responses.

Chains::

    CHAIN: ATTR[sci-fi] -> space opera -> TARGET[star wars]
    CHAIN[parent=c2]: ITEM[alien] -> dread in space -> TARGET[aliens]

Bare segments are concepts, ``ATTR[..]`` attributes, ``ITEM[..]`` items and the
final ``TARGET[..]`` the item the chain motivates.
"""

from __future__ import annotations

import re
from typing import Callable

from ..domain import ChainNode, LabelError, ReasoningChain, canonicalize_label

_CHAIN_RE = re.compile(r"^\s*CHAIN(?:\[parent=([A-Za-z0-9_\-]+)\])?\s*:\s*(.+?)\s*$")
_TAGGED_RE = re.compile(r"^(ATTR|ITEM|TARGET)\[(.+)\]$")
_ANSWER_RE = re.compile(r"^\s*ANSWER\s*:\s*(.*?)\s*$", re.IGNORECASE)
_CANDIDATE_RE = re.compile(r"^\s*CANDIDATE\s*:\s*(.+?)\s*$", re.IGNORECASE)


class ParseError(ValueError):
    pass


class ParsedChains(list):
    """List of parsed chains that also carries the malformed-line count."""

    def __init__(self, chains=(), skipped: int = 0):
        super().__init__(chains)
        self.skipped = skipped


Resolver = Callable[[str], "str | None"]


def _identity(label: str) -> str:
    return label


def _parse_line(line: str, resolve_item: Resolver) -> ReasoningChain | None:
    m = _CHAIN_RE.match(line)
    if not m:
        return None
    parent, body = m.group(1), m.group(2)
    segments = [s.strip() for s in body.split("->")]
    if len(segments) < 2:
        return None
    nodes = []
    target = None
    for i, seg in enumerate(segments):
        tagged = _TAGGED_RE.match(seg)
        tag, text = (tagged.group(1), tagged.group(2)) if tagged else (None, seg)
        try:
            label = canonicalize_label(text)
        except LabelError:
            return None
        last = i == len(segments) - 1
        if tag == "TARGET" and not last or last and tag != "TARGET":
            return None
        if tag in ("ITEM", "TARGET"):
            ref = resolve_item(label)
            if ref is None:
                return None
            nodes.append(ChainNode("item", label, ref))
            if last:
                target = ref
        elif tag == "ATTR":
            nodes.append(ChainNode("attribute", label))
        else:
            nodes.append(ChainNode("concept", label))
    return ReasoningChain(tuple(nodes), target_item=target, parent=parent)


def parse_chains(raw_response: str, resolve_item: Resolver | None = None) -> ParsedChains:
    """Parse one chain per line into unscored chains.

    ``resolve_item`` maps a canonical item title to a catalog id (``None``
    rejects the line); by default the title itself is used as the id.
    Raises :class:`ParseError` when no line is well formed.
    """
    resolve_item = resolve_item or _identity
    out = ParsedChains()
    for line in (raw_response or "").splitlines():
        if not line.strip():
            continue
        chain = _parse_line(line, resolve_item)
        if chain is None:
            out.skipped += 1
        else:
            out.append(chain)
    if not out:
        raise ParseError(f"no well-formed chain lines ({out.skipped} skipped)")
    return out


def parse_answer(raw_response: str) -> str:
    """Single abductive fill; empty string when nothing usable came back."""
    lines = [ln for ln in (raw_response or "").splitlines() if ln.strip()]
    for ln in lines:
        m = _ANSWER_RE.match(ln)
        if m:
            return _safe_label(m.group(1))
    return _safe_label(lines[0]) if lines else ""


def parse_candidates(raw_response: str) -> list[str]:
    """Candidate item descriptions, canonicalized and deduplicated in order."""
    seen: dict[str, None] = {}
    for ln in (raw_response or "").splitlines():
        m = _CANDIDATE_RE.match(ln)
        if m:
            label = _safe_label(m.group(1))
            if label:
                seen.setdefault(label, None)
    return list(seen)


def _safe_label(text: str) -> str:
    try:
        return canonicalize_label(text)
    except LabelError:
        return ""
