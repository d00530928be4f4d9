import csv
import io
import json
import math

import pytest

from llmrg.evaluate import (
    METRICS,
    MetricsReport,
    evaluate,
    format_reports,
    hr_at_n,
    metrics_from_ranks,
    ndcg_at_n,
    rank_of_target,
)
from llmrg.recommend import LLMRGRecommender


def test_three_user_hand_example():
    m = metrics_from_ranks([1, 4, 11])
    assert m["HR@5"] == pytest.approx(2 / 3) and m["HR@10"] == pytest.approx(2 / 3)
    assert m["NDCG@5"] == pytest.approx((1 + 1 / math.log2(5)) / 3)
    assert m["NDCG@10"] == m["NDCG@5"]


def test_single_values_and_errors():
    assert ndcg_at_n(3, 5) == 0.5
    assert ndcg_at_n(1, 1) == 1.0 and ndcg_at_n(6, 5) == 0.0
    assert hr_at_n(10, 10) == 1 and hr_at_n(11, 10) == 0
    for bad in ((0, 5), (1, 0), (2.5, 5)):
        with pytest.raises((ValueError, TypeError)):
            ndcg_at_n(*bad)


def test_monotone_in_rank_and_cutoff():
    for n in (5, 10):
        vals = [ndcg_at_n(r, n) for r in range(1, 30)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
    for r in range(1, 30):
        assert hr_at_n(r, 5) <= hr_at_n(r, 10) and ndcg_at_n(r, 5) <= ndcg_at_n(r, 10)


def test_rank_of_target_ties():
    assert rank_of_target([0.1, 0.9, 0.5], 2) == 2
    assert rank_of_target([0.5, 0.5, 0.5], 0) == 1
    assert rank_of_target([0.5, 0.5, 0.5], 2) == 3


def test_empty_ranks():
    assert metrics_from_ranks([]) == {m: 0.0 for m in METRICS}


def test_report_outputs():
    r = MetricsReport("full", {1: dict.fromkeys(METRICS, 0.5), 2: dict.fromkeys(METRICS, 0.7)}, 3)
    assert r.mean["HR@10"] == pytest.approx(0.6) and r.std["HR@10"] == pytest.approx(0.1)
    data = json.loads(r.to_json())
    assert MetricsReport.from_dict(data).to_dict() == r.to_dict()
    rows = list(csv.reader(io.StringIO(r.to_csv())))
    assert rows[0] == ["seed", *METRICS] and rows[1][0] == "1" and len(rows) == 3
    assert "full" in r.table() and "0.6000" in r.table()
    two = format_reports([r, MetricsReport("base", r.per_seed)])
    assert len(two.splitlines()) == 3


def test_evaluate_is_deterministic(tiny_world):
    catalog, split, views = tiny_world
    model = LLMRGRecommender(d_g=4, d_b=4, l_tru=10, epochs=2, batch_size=8, n_buckets=64)
    a = evaluate(model, split, (1, 2), graphs=views, catalog=catalog)
    b = evaluate(model, split, (1, 2), graphs=views, catalog=catalog)
    assert a.to_dict() == b.to_dict() and sorted(a.per_seed) == [1, 2]
    assert model.get_params()["seed"] == 1  # the template is not mutated
