"""Shared oracles for the numeric tests: toy instances and finite differences."""

import numpy as np

from llmrg.ingest import build_split
from llmrg.kbase import KnowledgeBase
from llmrg.llm import MockBackend, MockOracleConfig
from llmrg.pipeline import GraphBuilder
from llmrg.recommend import init_params, loss_and_grads, make_example, total_loss
from llmrg.synthetic import make_synthetic


def toy_examples(n_users=5, n_items=20, seed=0, l_tru=12, n_buckets=64, variant="full"):
    """Training examples with real mock-built graphs for a tiny synthetic corpus."""
    catalog, seqs, knowledge = make_synthetic(n_users, n_items, n_tastes=2, pool_hits=3,
                                              noise=(2, 4), seed=seed)
    llm = MockBackend(MockOracleConfig(knowledge=knowledge, fidelity=0.8, seed=seed,
                                       hallucination_rate=0.3))
    split = build_split(seqs, l_tru)
    builder = GraphBuilder(l_tru=l_tru, seed=seed).fit(catalog=catalog, llm=llm,
                                                       kbase=KnowledgeBase())
    views = builder.build_split_views(split)
    examples = [make_example(u.user_id, u.train_input(l_tru), u.train_target,
                             views[u.user_id]["train"], catalog, n_buckets, variant)
                for u in split.users]
    return catalog, examples


def central_difference(f, x, idx, h=1e-5):
    old = x[idx]
    x[idx] = old + h
    up = f()
    x[idx] = old - h
    down = f()
    x[idx] = old
    return (up - down) / (2 * h)


def relative_error(a, n, floor=1e-5):
    # floor sits above the central-difference roundoff (eps * |loss| / h ~ 1e-10)
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_model_gradients(examples, params, rng, per_tensor=12, T=2, tie_items=True):
    """Worst elementwise relative error between analytic and central-difference
    gradients of the summed loss, over a random sample of entries of every tensor.
    Embedding tables are sampled only on rows the data touches; the analytic
    gradient on untouched rows must be exactly zero."""
    _, grads = loss_and_grads(examples, params, T, tie_items)
    dense = grads.to_dense()

    def f():
        return total_loss(examples, params, T, tie_items)

    used = {"item": set(), "pos": set(), "ori.emb": set(), "div.emb": set()}
    for ex in examples:
        used["item"].update(int(e) for e in ex.events)
        used["pos"].update(range(len(ex.events)))
        for enc, g in (("ori", ex.g_ori), ("div", ex.g_div)):
            used[f"{enc}.emb"].update(int(b) for b, r in zip(g.buckets, g.item_rows)
                                      if r < 0 or not tie_items)
            if tie_items:
                used["item"].update(int(r) for r in g.item_rows if r >= 0)
    worst, groups = 0.0, set()
    for name, arr in params.items():
        if name in used:
            rows = sorted(used[name])
            if name != "item":  # every item row receives the output-layer gradient
                untouched = np.setdiff1d(np.arange(arr.shape[0]), rows)
                assert not np.any(dense[name][untouched]), f"{name}: unused rows got gradient"
            if not rows:
                continue
            picks = [(int(rng.choice(rows)), int(rng.integers(arr.shape[1])))
                     for _ in range(per_tensor)]
        else:
            flat = rng.choice(arr.size, min(per_tensor, arr.size), replace=False)
            picks = [np.unravel_index(int(i), arr.shape) for i in flat]
        for idx in picks:
            num = central_difference(f, arr, idx)
            worst = max(worst, relative_error(dense[name][idx], num))
        groups.add(name.split(".")[0] if "." in name else name)
    return worst, groups


def toy_params(catalog, seed, d=4, l_tru=12, n_buckets=64, variant="full"):
    rng = np.random.default_rng(seed)
    params = init_params(len(catalog), d, d, l_tru, rng, scale=0.5, n_buckets=n_buckets,
                         variant=variant)
    # perturb the structured initial values so every path carries gradient
    for k in ("ln1_g", "ln2_g", "ln1_b", "ln2_b", "W_f"):
        params[k] = params[k] + rng.normal(0, 0.3, params[k].shape)
    for k, v in params.items():
        if k.endswith((".b_in", ".b_out", ".b_a", ".b_u", ".c", "f1b", "f2b")):
            params[k] = v + rng.normal(0, 0.3, v.shape)
    return params
