"""Leave-one-out ranking metrics and the multi-seed experiment runner."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from .validation import check_rank

logger = logging.getLogger(__name__)

METRICS = ("HR@5", "HR@10", "NDCG@5", "NDCG@10")


def hr_at_n(rank: int, n: int) -> int:
    check_rank(rank, n)
    return int(rank <= n)


def ndcg_at_n(rank: int, n: int) -> float:
    """Single relevant item, so the ideal DCG is 1."""
    check_rank(rank, n)
    return 1.0 / math.log2(rank + 1) if rank <= n else 0.0


def rank_of_target(scores, target: int) -> int:
    """1-based rank over the full item set; ties go to the lower index."""
    scores = np.asarray(scores)
    s = scores[target]
    return int(np.sum(scores > s) + np.sum(scores[:target] == s) + 1)


def metrics_from_ranks(ranks) -> dict[str, float]:
    ranks = list(ranks)
    if not ranks:
        return {m: 0.0 for m in METRICS}
    return {
        "HR@5": float(np.mean([hr_at_n(r, 5) for r in ranks])),
        "HR@10": float(np.mean([hr_at_n(r, 10) for r in ranks])),
        "NDCG@5": float(np.mean([ndcg_at_n(r, 5) for r in ranks])),
        "NDCG@10": float(np.mean([ndcg_at_n(r, 10) for r in ranks])),
    }


@dataclass
class MetricsReport:
    """Per-seed metric values with mean and (population) standard deviation."""
    name: str = "model"
    per_seed: dict[int, dict[str, float]] = field(default_factory=dict)
    excluded_users: int = 0

    @property
    def mean(self) -> dict[str, float]:
        return {m: float(np.mean([v[m] for v in self.per_seed.values()])) if self.per_seed else 0.0
                for m in METRICS}

    @property
    def std(self) -> dict[str, float]:
        return {m: float(np.std([v[m] for v in self.per_seed.values()])) if self.per_seed else 0.0
                for m in METRICS}

    def to_dict(self) -> dict:
        return {"name": self.name, "excluded_users": self.excluded_users,
                "per_seed": {str(s): v for s, v in sorted(self.per_seed.items())},
                "mean": self.mean, "std": self.std}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(data.get("name", "model"),
                   {int(s): v for s, v in data.get("per_seed", {}).items()},
                   data.get("excluded_users", 0))

    def table(self) -> str:
        header = f"{'Model':<16}" + "".join(f"{m:>18}" for m in METRICS)
        mean, std = self.mean, self.std
        row = f"{self.name:<16}" + "".join(f"{mean[m]:>10.4f} ± {std[m]:<6.4f}" for m in METRICS)
        return header + "\n" + row

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", *METRICS])
        for s, v in sorted(self.per_seed.items()):
            w.writerow([s, *(f"{v[m]:.6f}" for m in METRICS)])
        return buf.getvalue()


def evaluate(model, split, seeds=(1, 2, 3, 4, 5), *, graphs=None, catalog=None,
             name: str | None = None) -> MetricsReport:
    """Retrain a clone of ``model`` per seed and score the held-out items.

    Users lacking graphs are excluded and counted.
    """
    report = MetricsReport(name or getattr(model, "variant", "model"))
    for seed in seeds:
        est = clone(model).set_params(seed=seed)
        est.fit(split, graphs=graphs, catalog=catalog)
        ranks, missing = est.ranks(split, graphs)
        report.excluded_users = missing
        report.per_seed[int(seed)] = metrics_from_ranks(ranks[u] for u in sorted(ranks))
        logger.info("seed %s: %s", seed, report.per_seed[int(seed)])
    return report


def format_reports(reports) -> str:
    lines = []
    for i, r in enumerate(reports):
        t = r.table().splitlines()
        lines.extend(t if i == 0 else t[1:])
    return "\n".join(lines)
