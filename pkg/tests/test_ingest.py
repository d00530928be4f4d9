import json

import pytest

from llmrg.domain import InteractionSequence
from llmrg.ingest import (
    DatasetStats,
    FormatError,
    IngestReport,
    build_split,
    load_dataset,
    load_split,
    min_interaction_filter,
    parse_amazon,
    parse_movielens,
    save_dataset,
)

MOVIES = "1::Toy Story (1995)::Animation|Children's|Comedy\n2::Heat (1995)::Action|Crime\n"


def _ml(tmp_path, ratings, movies=MOVIES):
    r, m = tmp_path / "ratings.dat", tmp_path / "movies.dat"
    r.write_text(ratings, encoding="latin-1")
    m.write_text(movies, encoding="latin-1")
    return r, m


def test_movielens_dedup_keeps_earliest(tmp_path):
    r, m = _ml(tmp_path, "1::2::5::300\n1::1::3::100\n1::2::4::200\n")
    report = IngestReport()
    catalog, seqs = parse_movielens(r, m, report)
    assert [s.events for s in seqs] == [("1", "2")]  # heat kept at t=200
    assert report.duplicates_removed == 1
    assert catalog["1"].attributes == ("Animation", "Children's", "Comedy")


def test_movielens_ties_keep_file_order(tmp_path):
    r, m = _ml(tmp_path, "7::2::5::100\n7::1::5::100\n")
    _, seqs = parse_movielens(r, m)
    assert seqs[0].events == ("2", "1")


def test_movielens_empty_and_errors(tmp_path):
    r, m = _ml(tmp_path, "")
    catalog, seqs = parse_movielens(r, m)
    assert seqs == [] and len(catalog) == 0
    r, m = _ml(tmp_path, "1::1::5::100\nbroken line\n")
    with pytest.raises(FormatError, match=":2:"):
        parse_movielens(r, m)


def test_movielens_unknown_movie_skipped(tmp_path):
    r, m = _ml(tmp_path, "1::1::5::100\n1::99::5::200\n")
    report = IngestReport()
    _, seqs = parse_movielens(r, m, report)
    assert seqs[0].events == ("1",) and report.skipped_unknown_item == 1


def test_amazon_fixture(tmp_path):
    reviews = [
        {"reviewerID": "B", "asin": "p2", "unixReviewTime": 20},
        {"reviewerID": "A", "asin": "p1", "unixReviewTime": 30},
        {"reviewerID": "A", "asin": "p2", "unixReviewTime": 10},
        {"reviewerID": "A", "asin": "p1", "unixReviewTime": 40},
        {"reviewerID": "B", "asin": "p3"},  # missing timestamp
    ]
    meta = [
        {"asin": "p1", "title": "Lip Balm", "categories": [["Beauty", "Lips", "Balm"]],
         "brand": "Acme"},
        {"asin": "p2", "title": "Shampoo", "categories": [["Beauty", "Hair"]]},
        {"title": "orphan"},
    ]
    (tmp_path / "r.json").write_text("\n".join(json.dumps(x) for x in reviews))
    (tmp_path / "m.json").write_text("\n".join(json.dumps(x) for x in meta))
    report = IngestReport()
    catalog, seqs = parse_amazon(tmp_path / "r.json", tmp_path / "m.json", report)
    assert {s.user_id: s.events for s in seqs} == {"A": ("p2", "p1"), "B": ("p2",)}
    assert report.skipped_missing_field == 2 and report.duplicates_removed == 1
    assert catalog["p1"].attributes == ("Lips", "Balm", "Acme")
    assert catalog.ids == ["p1", "p2"]


def test_stats_identity():
    seqs = [InteractionSequence("a", ("1", "2", "3")), InteractionSequence("b", ("2",))]
    st = DatasetStats.compute(seqs)
    assert (st.n_users, st.n_items, st.n_actions) == (2, 3, 4)
    assert st.avg_length == 2.0
    assert abs(st.sparsity - (1 - st.n_actions / (st.n_users * st.n_items))) < 1e-9
    table = st.table("toy")
    for col in ("# Users", "# Items", "# Avg.Length", "# Actions", "Sparsity"):
        assert col in table


def test_split_definitions():
    seqs = [InteractionSequence("u", ("a", "b", "c")),
            InteractionSequence("long", tuple(f"i{k}" for k in range(200))),
            InteractionSequence("short", ("z",))]
    split = build_split(seqs, l_tru=10)
    u = split.by_user()["u"]
    assert u.input == ("a", "b") and u.target == "c"
    assert u.train_input(10) == ("a",) and u.train_target == "b"
    assert split.dropped == 1 and "short" not in split.by_user()
    long = build_split(seqs[1:2], l_tru=50).users[0]
    assert long.input == tuple(f"i{k}" for k in range(149, 199))
    assert long.target == "i199"


def test_split_over_corpus_matches_brute_force():
    seqs = [InteractionSequence(f"u{i}", tuple(f"i{j}" for j in range(2 + i % 7)))
            for i in range(100)]
    split = build_split(seqs, 4)
    assert len(split) == 100
    for s, u in zip(seqs, split.users):
        assert u.target == s.events[-1]
        assert u.prefix + (u.target,) == s.events
        assert len(u.input) <= 4 and u.prefix[len(u.prefix) - len(u.input):] == u.input


def test_min_interaction_filter_converges():
    seqs = [InteractionSequence(f"u{i}", ("a", "b", "c") + ((f"x{i}",) if i < 2 else ()))
            for i in range(3)]
    out = min_interaction_filter(seqs, min_user=3, min_item=3)
    assert [s.events for s in out] == [("a", "b", "c")] * 3


def test_dataset_round_trip(tmp_path, film_catalog):
    seqs = [InteractionSequence("u1", ("1", "2", "3"), ("sci-fi",))]
    split = build_split(seqs, 5)
    save_dataset(tmp_path, film_catalog, seqs, split)
    catalog, back = load_dataset(tmp_path)
    assert catalog == film_catalog and back == seqs
    assert load_split(tmp_path).to_dict() == split.to_dict()
