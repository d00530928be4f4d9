"""Dataset ingestion: parse raw files, deduplicate, sort chronologically, split leave-one-out."""

from __future__ import annotations

import json
import logging
import os
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .domain import Catalog, InteractionSequence, Item

logger = logging.getLogger(__name__)


class FormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path, self.lineno = path, lineno


@dataclass
class IngestReport:
    skipped_unknown_item: int = 0
    skipped_missing_field: int = 0
    duplicates_removed: int = 0


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_actions: int
    avg_length: float
    sparsity: float

    @classmethod
    def compute(cls, sequences, catalog: Catalog | None = None) -> "DatasetStats":
        """Counts over items that actually occur in the sequences."""
        sequences = list(sequences)
        n_users = len(sequences)
        n_actions = sum(len(s) for s in sequences)
        n_items = len({e for s in sequences for e in s.events})
        avg = n_actions / n_users if n_users else 0.0
        denom = n_users * n_items
        sparsity = 1.0 - n_actions / denom if denom else 0.0
        return cls(n_users, n_items, n_actions, avg, sparsity)

    def table(self, name: str = "dataset") -> str:
        rows = [("# Users", f"{self.n_users:,}"), ("# Items", f"{self.n_items:,}"),
                ("# Avg.Length", f"{self.avg_length:.1f}"), ("# Actions", f"{self.n_actions:,}"),
                ("Sparsity", f"{100 * self.sparsity:.2f}%")]
        width = max(len(r[0]) for r in rows)
        col = max(len(name), *(len(r[1]) for r in rows))
        lines = [f"{'Specs.':<{width}} | {name:>{col}}", "-" * (width + col + 3)]
        lines += [f"{k:<{width}} | {v:>{col}}" for k, v in rows]
        return "\n".join(lines)


def _dedup_sorted(user_events: dict[str, list[tuple[float, int, str]]], report: IngestReport):
    """Sort by (timestamp, file order) and keep the earliest occurrence of each item."""
    out = {}
    for user, events in user_events.items():
        events.sort(key=lambda e: (e[0], e[1]))
        seen: set[str] = set()
        kept = []
        for _ts, _order, item in events:
            if item in seen:
                report.duplicates_removed += 1
                continue
            seen.add(item)
            kept.append(item)
        out[user] = kept
    return out


def _user_order(users):
    return sorted(users, key=lambda u: (0, int(u), "") if u.isdigit() else (1, 0, u))


def parse_movielens(ratings_path, movies_path, report: IngestReport | None = None):
    """ML-1M ``::``-delimited ratings and movies; genres become item attributes."""
    report = report if report is not None else IngestReport()
    items = {}
    with open(movies_path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("::")
            if len(parts) != 3 or not parts[0].strip() or not parts[1].strip():
                raise FormatError(movies_path, lineno, "expected MovieID::Title::Genres")
            mid, title, genres = parts
            attrs = tuple(g for g in genres.split("|") if g)
            items[mid.strip()] = Item(mid.strip(), title.strip(), attrs)

    user_events: dict[str, list] = defaultdict(list)
    with open(ratings_path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("::")
            if len(parts) != 4:
                raise FormatError(ratings_path, lineno, "expected UserID::MovieID::Rating::Timestamp")
            user, mid, _rating, ts = (p.strip() for p in parts)
            try:
                stamp = float(ts)
            except ValueError:
                raise FormatError(ratings_path, lineno, f"bad timestamp {ts!r}") from None
            if mid not in items:
                report.skipped_unknown_item += 1
                continue
            user_events[user].append((stamp, lineno, mid))
    if report.skipped_unknown_item:
        logger.warning("skipped %d ratings with unknown movie ids", report.skipped_unknown_item)

    ordered = _dedup_sorted(user_events, report)
    sequences = [InteractionSequence(u, tuple(ordered[u])) for u in _user_order(ordered)]
    used = {e for s in sequences for e in s.events}
    catalog = Catalog(it for mid, it in items.items() if mid in used)
    return catalog, sequences


def _read_json_lines(path):
    opener = open
    if str(path).endswith(".gz"):
        import gzip
        opener = gzip.open
    with opener(path, "rt", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError:
                # older Amazon dumps are python-literal dicts
                import ast
                try:
                    yield lineno, ast.literal_eval(line)
                except (ValueError, SyntaxError):
                    raise FormatError(path, lineno, "not a JSON record") from None


def _flatten_categories(cats) -> list[str]:
    out = []
    for c in cats or ():
        if isinstance(c, (list, tuple)):
            out.extend(str(x) for x in c[1:] or c)
        else:
            out.append(str(c))
    return out


def parse_amazon(reviews_path, meta_path, report: IngestReport | None = None):
    """Line-delimited Amazon reviews plus metadata; attributes = categories + brand."""
    report = report if report is not None else IngestReport()
    meta = {}
    for _lineno, rec in _read_json_lines(meta_path):
        asin = rec.get("asin")
        if not asin:
            report.skipped_missing_field += 1
            continue
        title = str(rec.get("title") or asin).strip() or asin
        attrs = _flatten_categories(rec.get("categories") or rec.get("category"))
        if rec.get("brand"):
            attrs.append(str(rec["brand"]))
        meta[asin] = Item(asin, title, tuple(a.strip() for a in attrs if str(a).strip()))

    user_events: dict[str, list] = defaultdict(list)
    for lineno, rec in _read_json_lines(reviews_path):
        user, asin = rec.get("reviewerID"), rec.get("asin")
        ts = rec.get("unixReviewTime", rec.get("timestamp"))
        if not user or not asin or ts is None:
            report.skipped_missing_field += 1
            continue
        if asin not in meta:
            meta[asin] = Item(asin, asin)
        user_events[user].append((float(ts), lineno, asin))

    ordered = _dedup_sorted(user_events, report)
    sequences = [InteractionSequence(u, tuple(ordered[u])) for u in sorted(ordered)]
    used = {e for s in sequences for e in s.events}
    catalog = Catalog(it for asin, it in meta.items() if asin in used)
    return catalog, sequences


def min_interaction_filter(sequences, min_user: int = 5, min_item: int = 5):
    """Iterated k-core style filter: drop rare items and short users until stable."""
    seqs = list(sequences)
    while True:
        counts = Counter(e for s in seqs for e in s.events)
        filtered = []
        for s in seqs:
            events = tuple(e for e in s.events if counts[e] >= min_item)
            if len(events) >= min_user:
                filtered.append(InteractionSequence(s.user_id, events, s.attributes))
        if sum(map(len, filtered)) == sum(map(len, seqs)) and len(filtered) == len(seqs):
            return filtered
        seqs = filtered


@dataclass(frozen=True)
class UserSplit:
    """Leave-one-out view of one user.

    ``prefix`` is every event but the last; ``target`` is the last event;
    ``input`` is the most recent ``l_tru`` events of the prefix.  The training
    example shifts everything one step back (``train_input`` -> ``train_target``).
    """
    user_id: str
    attributes: tuple[str, ...]
    prefix: tuple[str, ...]
    target: str
    input: tuple[str, ...]

    @property
    def train_target(self) -> str | None:
        return self.prefix[-1] if len(self.prefix) >= 2 else None

    def train_input(self, l_tru: int) -> tuple[str, ...]:
        return self.prefix[:-1][-l_tru:]


@dataclass
class LeaveOneOutSplit:
    l_tru: int
    users: list[UserSplit] = field(default_factory=list)
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.users)

    def by_user(self) -> dict[str, UserSplit]:
        return {u.user_id: u for u in self.users}

    def to_dict(self) -> dict:
        return {"l_tru": self.l_tru, "dropped": self.dropped,
                "users": [{"user_id": u.user_id, "attributes": list(u.attributes),
                           "prefix": list(u.prefix), "target": u.target} for u in self.users]}

    @classmethod
    def from_dict(cls, data: dict) -> "LeaveOneOutSplit":
        l_tru = data["l_tru"]
        users = [UserSplit(d["user_id"], tuple(d["attributes"]), tuple(d["prefix"]),
                           d["target"], tuple(d["prefix"])[-l_tru:]) for d in data["users"]]
        return cls(l_tru, users, data.get("dropped", 0))


def build_split(sequences, l_tru: int) -> LeaveOneOutSplit:
    """Hold out each user's last event; users with fewer than two events are dropped."""
    if l_tru < 1:
        raise ValueError("l_tru must be >= 1")
    split = LeaveOneOutSplit(l_tru)
    for s in sequences:
        if len(s.events) < 2:
            split.dropped += 1
            continue
        prefix = s.events[:-1]
        split.users.append(UserSplit(s.user_id, s.attributes, prefix, s.events[-1],
                                     prefix[-l_tru:]))
    return split


# dataset directory layout: catalog.json, sequences.jsonl, split.json

def save_dataset(directory, catalog: Catalog, sequences, split: LeaveOneOutSplit | None = None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "catalog.json", "w", encoding="utf-8") as fh:
        json.dump(catalog.to_dict(), fh, indent=1, ensure_ascii=False)
    with open(d / "sequences.jsonl", "w", encoding="utf-8") as fh:
        for s in sequences:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")
    if split is not None:
        save_split(d / "split.json", split)


def save_split(path, split: LeaveOneOutSplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_dict(), fh, ensure_ascii=False)


def load_split(path) -> LeaveOneOutSplit:
    if os.path.isdir(path):
        path = Path(path) / "split.json"
    with open(path, encoding="utf-8") as fh:
        return LeaveOneOutSplit.from_dict(json.load(fh))


def load_dataset(directory):
    d = Path(directory)
    with open(d / "catalog.json", encoding="utf-8") as fh:
        catalog = Catalog.from_dict(json.load(fh))
    with open(d / "sequences.jsonl", encoding="utf-8") as fh:
        sequences = [InteractionSequence.from_dict(json.loads(ln)) for ln in fh if ln.strip()]
    return catalog, sequences


def stats_dict(stats: DatasetStats) -> dict:
    return asdict(stats)
