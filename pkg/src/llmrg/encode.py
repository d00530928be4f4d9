"""Gated graph encoder mapping a reasoning graph to a fixed-size embedding.

Session-graph style: nodes start from embedding rows, exchange messages
along normalized in/out adjacency for ``T`` steps through a GRU cell, and
are read out by softmax attention anchored on the graph's most recent item.
Forward caches activations; :func:`backward` is the exact hand-derived
adjoint.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .domain import ReasoningGraph, UserGraphs

N_BUCKETS = 2 ** 14

PARAM_SHAPES = {
    # name -> shape as a function of d
    "W_in": lambda d: (d, d), "b_in": lambda d: (d,),
    "W_out": lambda d: (d, d), "b_out": lambda d: (d,),
    "W_a": lambda d: (2 * d, 3 * d), "b_a": lambda d: (3 * d,),
    "U": lambda d: (d, 3 * d), "b_u": lambda d: (3 * d,),
    "W1": lambda d: (d, d), "W2": lambda d: (d, d), "c": lambda d: (d,), "q": lambda d: (d,),
    "W3": lambda d: (2 * d, d),
}


def bucket_of(key: str, n_buckets: int = N_BUCKETS) -> int:
    h = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little") % n_buckets


@dataclass(frozen=True)
class AdjacencyPair:
    A_in: np.ndarray
    A_out: np.ndarray


def _row_normalize(M: np.ndarray) -> np.ndarray:
    deg = M.sum(axis=1, keepdims=True)
    return np.divide(M, deg, out=np.zeros_like(M), where=deg > 0)


def adjacency_from_edges(n: int, edges) -> AdjacencyPair:
    M = np.zeros((n, n))
    for i, j in edges:
        M[i, j] = 1.0
    return AdjacencyPair(A_in=_row_normalize(M.T), A_out=_row_normalize(M))


def build_adjacency(graph: ReasoningGraph, order=None) -> AdjacencyPair:
    """Row-normalized adjacency over ``order`` (default: sorted node keys)."""
    keys = list(order) if order is not None else sorted(graph.nodes)
    pos = {k: i for i, k in enumerate(keys)}
    return adjacency_from_edges(len(keys), [(pos[s], pos[d]) for s, d in graph.edges])


@dataclass(frozen=True)
class CompiledGraph:
    """Index form of a graph: per node a bucket row and an optional catalog row."""
    keys: tuple[str, ...]
    buckets: np.ndarray
    item_rows: np.ndarray  # catalog position, -1 for non-item nodes
    adj: AdjacencyPair
    anchor: int

    @property
    def n(self) -> int:
        return len(self.keys)

    def permuted(self, perm) -> "CompiledGraph":
        """Same graph with nodes reordered by ``perm`` (new i = old perm[i])."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return CompiledGraph(tuple(self.keys[p] for p in perm), self.buckets[perm],
                             self.item_rows[perm],
                             AdjacencyPair(self.adj.A_in[np.ix_(perm, perm)],
                                           self.adj.A_out[np.ix_(perm, perm)]),
                             int(inv[self.anchor]) if self.anchor >= 0 else -1)


EMPTY = CompiledGraph((), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                      AdjacencyPair(np.zeros((0, 0)), np.zeros((0, 0))), -1)


def _anchor_key(graph: ReasoningGraph, anchor_item: str | None) -> str | None:
    if graph.divergent:
        best = None
        for c in graph.chains:
            if c.terminal.kind == "item" and (best is None or c.score > best.score):
                best = c
        return best.terminal.key if best is not None else None
    for n in graph.nodes.values():
        if n.kind == "item" and n.item_ref == anchor_item:
            return n.key
    return None


def compile_graph(graph: ReasoningGraph, catalog_index: dict[str, int] | None = None,
                  anchor_item: str | None = None, n_buckets: int = N_BUCKETS) -> CompiledGraph:
    """Anchor: node of ``anchor_item`` for G_rea, best-scored terminal for G_div,
    falling back to the first item node, then to node 0."""
    if not graph.nodes:
        return EMPTY
    keys = sorted(graph.nodes)
    catalog_index = catalog_index or {}
    buckets = np.array([bucket_of(k, n_buckets) for k in keys], dtype=np.int64)
    rows = np.array([catalog_index.get(graph.nodes[k].item_ref, -1) if graph.nodes[k].kind == "item"
                     else -1 for k in keys], dtype=np.int64)
    akey = _anchor_key(graph, anchor_item)
    if akey is None:
        akey = next((k for k in keys if graph.nodes[k].kind == "item"), keys[0])
    return CompiledGraph(tuple(keys), buckets, rows, build_adjacency(graph, keys), keys.index(akey))


def compile_user(graphs: UserGraphs, catalog_index, n_buckets: int = N_BUCKETS):
    return (compile_graph(graphs.reasoning, catalog_index, graphs.anchor_item, n_buckets),
            compile_graph(graphs.divergent, catalog_index, graphs.anchor_item, n_buckets))


def init_encoder_params(d: int, rng: np.random.Generator, scale: float = 0.1,
                        n_buckets: int = N_BUCKETS) -> dict[str, np.ndarray]:
    """Embedding rows ~ N(0, scale^2); weights fan-in scaled; biases zero."""
    params = {"emb": rng.normal(0.0, scale, (n_buckets, d))}
    for name, shape in PARAM_SHAPES.items():
        shp = shape(d)
        if name.startswith("b") or name == "c":
            params[name] = np.zeros(shp)
        else:
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(shp[0]), shp)
    return params


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class EncoderCache:
    graphs: list
    steps: list = field(default_factory=list)
    H: np.ndarray | None = None
    m: np.ndarray | None = None
    alpha: np.ndarray | None = None
    concat: np.ndarray | None = None
    batch: "_Batch | None" = None


@dataclass
class _Batch:
    """Disjoint union of the non-empty graphs of a batch."""
    live: np.ndarray       # positions (in the batch) of non-empty graphs
    starts: np.ndarray     # first node of each live graph
    seg: np.ndarray        # live-graph index of every node
    anchors: np.ndarray    # global anchor node per live graph
    buckets: np.ndarray
    item_rows: np.ndarray
    A_in: sparse.csr_matrix
    A_out: sparse.csr_matrix


def _union(graphs) -> _Batch:
    live = [i for i, g in enumerate(graphs) if g.n]
    sizes = np.array([graphs[i].n for i in live], dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    seg = np.repeat(np.arange(len(live)), sizes)
    anchors = starts + np.array([graphs[i].anchor for i in live], dtype=np.int64)
    return _Batch(
        np.array(live, dtype=np.int64), starts, seg, anchors,
        np.concatenate([graphs[i].buckets for i in live]),
        np.concatenate([graphs[i].item_rows for i in live]),
        sparse.block_diag([graphs[i].adj.A_in for i in live], format="csr"),
        sparse.block_diag([graphs[i].adj.A_out for i in live], format="csr"))


def initial_states(g: CompiledGraph, params, item_table=None) -> np.ndarray:
    return _initial(g.buckets, g.item_rows, params, item_table)


def _initial(buckets, item_rows, params, item_table):
    H0 = params["emb"][buckets].copy()
    if item_table is not None:
        mask = item_rows >= 0
        H0[mask] = item_table[item_rows[mask]]
    return H0


def forward(g: CompiledGraph, params, T: int = 2, item_table=None, return_cache: bool = False):
    """Embedding of ``g``; when ``item_table`` is given, item nodes read their
    initial state from it instead of the hashed table."""
    out, cache = forward_batch([g], params, T, item_table)
    return (out[0], cache) if return_cache else out[0]


def forward_batch(graphs, params, T: int = 2, item_table=None):
    """Embeddings of several graphs at once (rows of the result); empty graphs map to 0."""
    if T < 1:
        raise ValueError("T must be >= 1")
    d = params["W_in"].shape[0]
    out = np.zeros((len(graphs), d))
    cache = EncoderCache(list(graphs))
    if not any(g.n for g in graphs):
        return out, cache
    b = cache.batch = _union(graphs)
    H = _initial(b.buckets, b.item_rows, params, item_table)
    for _ in range(T):
        AH_in, AH_out = b.A_in @ H, b.A_out @ H
        a = np.concatenate([AH_in @ params["W_in"] + params["b_in"],
                            AH_out @ params["W_out"] + params["b_out"]], axis=1)
        gi = a @ params["W_a"] + params["b_a"]
        gh = H @ params["U"] + params["b_u"]
        r = _sigmoid(gi[:, :d] + gh[:, :d])
        z = _sigmoid(gi[:, d:2 * d] + gh[:, d:2 * d])
        hn = gh[:, 2 * d:]
        cand = np.tanh(gi[:, 2 * d:] + r * hn)
        cache.steps.append((H, AH_in, AH_out, a, r, z, hn, cand))
        H = cand + z * (H - cand)
    h_l = H[b.anchors]
    m = _sigmoid((h_l @ params["W1"])[b.seg] + H @ params["W2"] + params["c"])
    logits = m @ params["q"]
    e = np.exp(logits - np.maximum.reduceat(logits, b.starts)[b.seg])
    alpha = e / np.add.reduceat(e, b.starts)[b.seg]
    s_g = np.add.reduceat(alpha[:, None] * H, b.starts, axis=0)
    concat = np.concatenate([h_l, s_g], axis=1)
    out[b.live] = concat @ params["W3"]
    cache.H, cache.m, cache.alpha, cache.concat = H, m, alpha, concat
    return out, cache


@dataclass
class EncoderGrads:
    """Dense gradients for small tensors; embedding rows kept sparse."""
    dense: dict[str, np.ndarray]
    emb_rows: np.ndarray
    emb_grads: np.ndarray
    item_rows: np.ndarray
    item_grads: np.ndarray


def backward(cache: EncoderCache, params, upstream: np.ndarray, item_table=None) -> EncoderGrads:
    """Gradients given ``upstream`` = dLoss/dOutput (one row per graph, or a vector
    for a single graph)."""
    d = params["W_in"].shape[0]
    dense = {name: np.zeros(shape(d)) for name, shape in PARAM_SHAPES.items()}
    b = cache.batch
    if b is None:
        empty = np.zeros(0, dtype=np.int64)
        return EncoderGrads(dense, empty, np.zeros((0, d)), empty, np.zeros((0, d)))
    H, m, alpha = cache.H, cache.m, cache.alpha
    dout = np.asarray(upstream, dtype=float).reshape(len(cache.graphs), d)[b.live]

    # readout
    dense["W3"] += cache.concat.T @ dout
    dconcat = dout @ params["W3"].T
    dh_l, ds_g = dconcat[:, :d].copy(), dconcat[:, d:]
    ds_node = ds_g[b.seg]
    dH = alpha[:, None] * ds_node
    dalpha = np.einsum("ij,ij->i", H, ds_node)
    dlogit = alpha * (dalpha - np.add.reduceat(alpha * dalpha, b.starts)[b.seg])
    dense["q"] += m.T @ dlogit
    dpre = np.outer(dlogit, params["q"]) * m * (1.0 - m)
    dsum = np.add.reduceat(dpre, b.starts, axis=0)
    dense["W2"] += H.T @ dpre
    dH += dpre @ params["W2"].T
    dense["W1"] += H[b.anchors].T @ dsum
    dense["c"] += dsum.sum(axis=0)
    dh_l += dsum @ params["W1"].T
    dH[b.anchors] += dh_l

    A_inT, A_outT = b.A_in.T.tocsr(), b.A_out.T.tocsr()
    for H_prev, AH_in, AH_out, a, r, z, hn, cand in reversed(cache.steps):
        dcand = dH * (1.0 - z)
        dz = dH * (H_prev - cand)
        dH_prev = dH * z
        dpre_n = dcand * (1.0 - cand ** 2)
        dpre_r = dpre_n * hn * r * (1.0 - r)
        dpre_z = dz * z * (1.0 - z)
        dgi = np.concatenate([dpre_r, dpre_z, dpre_n], axis=1)
        dgh = np.concatenate([dpre_r, dpre_z, dpre_n * r], axis=1)
        dense["W_a"] += a.T @ dgi
        dense["b_a"] += dgi.sum(axis=0)
        da = dgi @ params["W_a"].T
        dense["U"] += H_prev.T @ dgh
        dense["b_u"] += dgh.sum(axis=0)
        dH_prev += dgh @ params["U"].T
        da_in, da_out = da[:, :d], da[:, d:]
        dense["W_in"] += AH_in.T @ da_in
        dense["b_in"] += da_in.sum(axis=0)
        dense["W_out"] += AH_out.T @ da_out
        dense["b_out"] += da_out.sum(axis=0)
        dH_prev += A_inT @ (da_in @ params["W_in"].T)
        dH_prev += A_outT @ (da_out @ params["W_out"].T)
        dH = dH_prev

    tied = (b.item_rows >= 0) if item_table is not None else np.zeros(len(H), dtype=bool)
    emb_rows, emb_grads = _reduce_rows(b.buckets[~tied], dH[~tied], d)
    item_rows, item_grads = _reduce_rows(b.item_rows[tied], dH[tied], d)
    return EncoderGrads(dense, emb_rows, emb_grads, item_rows, item_grads)


def _reduce_rows(rows: np.ndarray, grads: np.ndarray, d: int):
    """Sum gradient rows that share an index (hash collisions, repeated items)."""
    if rows.size == 0:
        return rows.astype(np.int64), np.zeros((0, d))
    uniq, inv = np.unique(rows, return_inverse=True)
    out = np.zeros((uniq.size, d))
    np.add.at(out, inv, grads)
    return uniq, out


__all__ = ["AdjacencyPair", "CompiledGraph", "EMPTY", "EncoderCache", "EncoderGrads",
           "N_BUCKETS", "PARAM_SHAPES", "adjacency_from_edges", "backward", "bucket_of",
           "build_adjacency", "compile_graph", "compile_user", "forward", "forward_batch",
           "init_encoder_params",
           "initial_states"]
