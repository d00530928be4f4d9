"""Base sequential model, fusion head and training loop.

The base model is one causal self-attention block over item + position
embeddings; only the final position is needed, so only that query row is
computed. The fusion head projects ``[e_ori, e_div, e_base]`` to the item
space and scores against the (tied) item table.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import encode
from .domain import Catalog, EmbeddingBundle, UserGraphs
from .evaluate import rank_of_target
from .ingest import LeaveOneOutSplit, UserSplit
from .validation import check_choice, check_non_negative, check_positive_int

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
_GELU_K = math.sqrt(2.0 / math.pi)
VARIANTS = ("full", "no-div", "base")
ENCODERS = ("ori", "div")


class TrainingDiverged(RuntimeError):
    pass


# --- small numeric pieces -------------------------------------------------

def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def log_softmax(x: np.ndarray) -> np.ndarray:
    s = x - np.max(x)
    return s - np.log(np.exp(s).sum())


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + 0.044715 * x ** 3)))


def gelu_grad(x):
    t = np.tanh(_GELU_K * (x + 0.044715 * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * _GELU_K * (1.0 + 3 * 0.044715 * x ** 2)


def layer_norm(x, g, b):
    mu = x.mean()
    sigma = math.sqrt(((x - mu) ** 2).mean() + LN_EPS)
    xhat = (x - mu) / sigma
    return g * xhat + b, (xhat, sigma)


def layer_norm_backward(dy, g, cache):
    xhat, sigma = cache
    dxhat = dy * g
    dx = (dxhat - dxhat.mean() - xhat * (dxhat * xhat).mean()) / sigma
    return dx, dy * xhat, dy.copy()


# --- parameters -----------------------------------------------------------

def init_params(n_items: int, d_g: int, d_b: int, l_tru: int, rng: np.random.Generator,
                scale: float | None = None, n_buckets: int = encode.N_BUCKETS,
                variant: str = "full", emb_scale: float = 1.0) -> dict[str, np.ndarray]:
    """Flat name -> array map; encoder tensors are prefixed ``ori.`` / ``div.``.

    Item/position rows use ``scale`` (default 1/sqrt(d_b)); hashed node rows use
    ``emb_scale``, kept large so graph identity survives the readout average.
    """
    scale = 1.0 / math.sqrt(d_b) if scale is None else scale
    p = {
        "item": rng.normal(0.0, scale, (n_items, d_b)),
        "pos": rng.normal(0.0, scale, (l_tru, d_b)),
        "Wq": rng.normal(0.0, 1.0 / math.sqrt(d_b), (d_b, d_b)),
        "Wk": rng.normal(0.0, 1.0 / math.sqrt(d_b), (d_b, d_b)),
        "Wv": rng.normal(0.0, 1.0 / math.sqrt(d_b), (d_b, d_b)),
        "Wo": rng.normal(0.0, 1.0 / math.sqrt(d_b), (d_b, d_b)),
        "ln1_g": np.ones(d_b), "ln1_b": np.zeros(d_b),
        "F1": rng.normal(0.0, 1.0 / math.sqrt(d_b), (d_b, d_b)), "f1b": np.zeros(d_b),
        "F2": rng.normal(0.0, 1.0 / math.sqrt(d_b), (d_b, d_b)), "f2b": np.zeros(d_b),
        "ln2_g": np.ones(d_b), "ln2_b": np.zeros(d_b),
    }
    W_f = np.zeros((2 * d_g + d_b, d_b))
    W_f[2 * d_g:] = np.eye(d_b)
    if variant != "base":
        W_f[: 2 * d_g] = rng.normal(0.0, 1.0 / math.sqrt(2 * d_g), (2 * d_g, d_b))
    p["W_f"] = W_f
    if variant != "base":
        for enc in ENCODERS:
            for name, arr in encode.init_encoder_params(d_g, rng, emb_scale, n_buckets).items():
                p[f"{enc}.{name}"] = arr
    return p


def encoder_view(params: dict, enc: str) -> dict:
    prefix = enc + "."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


# --- base model -----------------------------------------------------------

def base_forward(events: np.ndarray, params: dict, return_cache: bool = False):
    """e_base for a sequence of catalog positions (oldest first)."""
    events = np.asarray(events, dtype=np.int64)
    L = events.size
    if not 1 <= L <= params["pos"].shape[0]:
        raise ValueError(f"input length {L} outside 1..{params['pos'].shape[0]}")
    d = params["item"].shape[1]
    X = params["item"][events] + params["pos"][:L]
    x_last = X[-1]
    q = x_last @ params["Wq"]
    K = X @ params["Wk"]
    V = X @ params["Wv"]
    att = softmax(K @ q / math.sqrt(d))
    o = att @ V
    attn_out = o @ params["Wo"]
    h1, ln1 = layer_norm(x_last + attn_out, params["ln1_g"], params["ln1_b"])
    u = h1 @ params["F1"] + params["f1b"]
    f = gelu(u) @ params["F2"] + params["f2b"]
    h2, ln2 = layer_norm(h1 + f, params["ln2_g"], params["ln2_b"])
    if not return_cache:
        return h2
    return h2, dict(events=events, X=X, q=q, K=K, V=V, att=att, o=o, h1=h1, ln1=ln1, u=u, ln2=ln2)


def base_backward(cache: dict, params: dict, de: np.ndarray, grads: "Gradients") -> None:
    d = params["item"].shape[1]
    dpre2 = _ln_acc(grads, "ln2", de, params["ln2_g"], cache["ln2"])
    dh1 = dpre2.copy()
    df = dpre2
    gu = gelu(cache["u"])
    grads.add("F2", np.outer(gu, df))
    grads.add("f2b", df)
    du = (df @ params["F2"].T) * gelu_grad(cache["u"])
    grads.add("F1", np.outer(cache["h1"], du))
    grads.add("f1b", du)
    dh1 += du @ params["F1"].T
    dpre1 = _ln_acc(grads, "ln1", dh1, params["ln1_g"], cache["ln1"])
    dx_last = dpre1.copy()
    dattn = dpre1
    grads.add("Wo", np.outer(cache["o"], dattn))
    do = dattn @ params["Wo"].T
    att, V, K, q, X = cache["att"], cache["V"], cache["K"], cache["q"], cache["X"]
    datt = V @ do
    dV = np.outer(att, do)
    ds = att * (datt - att @ datt) / math.sqrt(d)
    dq = K.T @ ds
    dK = np.outer(ds, q)
    grads.add("Wq", np.outer(X[-1], dq))
    dx_last += params["Wq"] @ dq
    grads.add("Wk", X.T @ dK)
    grads.add("Wv", X.T @ dV)
    dX = dK @ params["Wk"].T + dV @ params["Wv"].T
    dX[-1] += dx_last
    L = X.shape[0]
    grads.add_rows("item", cache["events"], dX)
    grads.add_rows("pos", np.arange(L), dX)


def _ln_acc(grads, name, dy, g, cache):
    dx, dg, db = layer_norm_backward(dy, g, cache)
    grads.add(f"{name}_g", dg)
    grads.add(f"{name}_b", db)
    return dx


# --- fusion ---------------------------------------------------------------

def fuse(e_ori, e_div, e_base, W_f) -> np.ndarray:
    return np.concatenate([e_ori, e_div, e_base]) @ W_f


def fuse_and_score(e_ori, e_div, e_base, W_f, item_table) -> np.ndarray:
    """Unnormalized scores over every catalog item."""
    return item_table @ fuse(e_ori, e_div, e_base, W_f)


# --- gradients container --------------------------------------------------

class Gradients:
    """Dense accumulators plus row-sparse ones for the large embedding tables."""

    def __init__(self, params: dict):
        self.shapes = {k: v.shape for k, v in params.items()}
        self.dense: dict[str, np.ndarray] = {}
        self.rows: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}

    def add(self, name, g):
        if name in self.dense:
            self.dense[name] += g
        else:
            self.dense[name] = np.array(g, dtype=float)

    def add_rows(self, name, rows, g):
        if len(rows):
            self.rows.setdefault(name, []).append((np.asarray(rows, dtype=np.int64), np.asarray(g)))

    def to_dense(self) -> dict[str, np.ndarray]:
        out = {k: np.zeros(s) for k, s in self.shapes.items()}
        for k, v in self.dense.items():
            out[k] += v
        for k, parts in self.rows.items():
            for r, g in parts:
                np.add.at(out[k], r, g)
        return out

    def apply(self, params: dict, lr: float, scale: float = 1.0) -> None:
        step = lr * scale
        for k, v in self.dense.items():
            params[k] -= step * v
        for k, parts in self.rows.items():
            for r, g in parts:
                np.add.at(params[k], r, -step * g)


# --- examples -------------------------------------------------------------

@dataclass(frozen=True)
class Example:
    user_id: str
    events: np.ndarray
    target: int
    g_ori: encode.CompiledGraph
    g_div: encode.CompiledGraph


def make_example(user_id, events, target, graphs: UserGraphs | None, catalog: Catalog,
                 n_buckets: int = encode.N_BUCKETS, variant: str = "full") -> Example:
    idx = catalog.index
    ev = np.array([idx[e] for e in events], dtype=np.int64)
    tgt = idx[target] if target is not None else -1
    if graphs is None or variant == "base":
        return Example(user_id, ev, tgt, encode.EMPTY, encode.EMPTY)
    g_ori, g_div = encode.compile_user(graphs, idx, n_buckets)
    if variant == "no-div":
        g_div = encode.EMPTY
    return Example(user_id, ev, tgt, g_ori, g_div)


def _graph_embeddings(examples, params, T, tie_items):
    """E_ori and E_div rows for a batch, plus encoder caches (None when absent)."""
    d_g = (params["W_f"].shape[0] - params["item"].shape[1]) // 2
    item_table = params["item"] if tie_items else None
    out, caches = [], {}
    for enc, attr in (("ori", "g_ori"), ("div", "g_div")):
        graphs = [getattr(ex, attr) for ex in examples]
        if f"{enc}.W_in" not in params or not any(g.n for g in graphs):
            out.append(np.zeros((len(examples), d_g)))
            caches[enc] = None
            continue
        emb, caches[enc] = encode.forward_batch(graphs, encoder_view(params, enc), T, item_table)
        out.append(emb)
    return out[0], out[1], caches


def embed_batch(examples, params, T: int = 2, tie_items: bool = True):
    """``(E_ori, E_div, E_base)`` with one row per example."""
    e_ori, e_div, _ = _graph_embeddings(examples, params, T, tie_items)
    e_base = np.stack([base_forward(ex.events, params) for ex in examples])
    return e_ori, e_div, e_base


def bundle(ex: Example, params: dict, T: int = 2, tie_items: bool = True) -> EmbeddingBundle:
    e_ori, e_div, e_base = (x[0] for x in embed_batch([ex], params, T, tie_items))
    return EmbeddingBundle(e_ori, e_div, e_base, fuse(e_ori, e_div, e_base, params["W_f"]))


def batch_scores(examples, params: dict, T: int = 2, tie_items: bool = True) -> np.ndarray:
    e_ori, e_div, e_base = embed_batch(examples, params, T, tie_items)
    return np.concatenate([e_ori, e_div, e_base], axis=1) @ params["W_f"] @ params["item"].T


def example_scores(ex: Example, params: dict, T: int = 2, tie_items: bool = True) -> np.ndarray:
    return batch_scores([ex], params, T, tie_items)[0]


def loss_and_grads(examples, params: dict, T: int = 2, tie_items: bool = True,
                   grads: Gradients | None = None) -> tuple[float, Gradients]:
    """Summed softmax cross-entropy over ``examples`` (one Example or a list) and
    its gradient w.r.t. every parameter."""
    if isinstance(examples, Example):
        examples = [examples]
    grads = grads if grads is not None else Gradients(params)
    e_ori, e_div, enc_caches = _graph_embeddings(examples, params, T, tie_items)
    base = [base_forward(ex.events, params, return_cache=True) for ex in examples]
    e_base = np.stack([b[0] for b in base])
    concat = np.concatenate([e_ori, e_div, e_base], axis=1)
    W_f, item = params["W_f"], params["item"]
    e_f = concat @ W_f
    scores = e_f @ item.T
    targets = np.array([ex.target for ex in examples])
    rows = np.arange(len(examples))
    shifted = scores - scores.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -float(logp[rows, targets].sum())
    ds = np.exp(logp)
    ds[rows, targets] -= 1.0
    grads.add_rows("item", np.arange(item.shape[0]), ds.T @ e_f)
    de_f = ds @ item
    grads.add("W_f", concat.T @ de_f)
    dconcat = de_f @ W_f.T
    d_g = e_ori.shape[1]
    item_table = item if tie_items else None
    for k, enc in enumerate(ENCODERS):
        cache = enc_caches[enc]
        if cache is None:
            continue
        eg = encode.backward(cache, encoder_view(params, enc),
                             dconcat[:, k * d_g:(k + 1) * d_g], item_table)
        for name, g in eg.dense.items():
            grads.add(f"{enc}.{name}", g)
        grads.add_rows(f"{enc}.emb", eg.emb_rows, eg.emb_grads)
        grads.add_rows("item", eg.item_rows, eg.item_grads)
    for i, (_, cache) in enumerate(base):
        base_backward(cache, params, dconcat[i, 2 * d_g:], grads)
    return loss, grads


def total_loss(examples, params, T: int = 2, tie_items: bool = True) -> float:
    scores = batch_scores(list(examples), params, T, tie_items)
    return -sum(float(log_softmax(s)[ex.target]) for s, ex in zip(scores, examples))


def train_params(examples: list[Example], params: dict, *, lr: float, epochs: int,
                 batch_size: int, seed: int, T: int = 2, tie_items: bool = True) -> list[float]:
    """Plain minibatch SGD on mean cross-entropy; returns per-epoch mean loss."""
    rng = np.random.default_rng(seed)
    history = []
    n = len(examples)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            loss, grads = loss_and_grads([examples[i] for i in batch], params, T, tie_items)
            total += loss
            if not math.isfinite(total):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch} "
                                       f"(lr={lr}); lower the learning rate")
            grads.apply(params, lr, 1.0 / len(batch))
        history.append(total / max(n, 1))
        logger.debug("epoch %d loss %.4f", epoch, history[-1])
    return history


def top_n(scores: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` best scores; equal scores keep the lower index first."""
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:n]


# --- checkpoints ----------------------------------------------------------

CKPT_MAGIC = b"LLMRGCK1"


def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    """Magic, u64 header length, JSON header (names, shapes, offsets, dtype f64), raw data."""
    names = sorted(params)
    tensors, offset = [], 0
    for k in names:
        arr = np.ascontiguousarray(params[k], dtype="<f8")
        tensors.append({"name": k, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = json.dumps({"dtype": "f64", "tensors": tensors, "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for k in names:
            fh.write(np.ascontiguousarray(params[k], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        blob = fh.read()
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=t["offset"])
        params[t["name"]] = arr.reshape(t["shape"]).astype(np.float64)
    return params, header["meta"]


# --- estimator ------------------------------------------------------------

def _as_users(X) -> list[UserSplit]:
    if isinstance(X, LeaveOneOutSplit):
        return list(X.users)
    users = list(X)
    if not all(isinstance(u, UserSplit) for u in users):
        raise TypeError("expected a LeaveOneOutSplit or a list of UserSplit")
    return users


class LLMRGRecommender(BaseEstimator):
    """Graph-augmented next-item recommender.

    ``variant`` selects the embedding sources: ``full`` (both graph encoders),
    ``no-div`` (reasoning graph only) or ``base`` (sequence model alone).
    ``fit`` takes the leave-one-out split plus prebuilt graphs
    (``{user: {"train": UserGraphs, "test": UserGraphs}}``) and the catalog.
    """

    def __init__(self, variant="full", d_g=64, d_b=64, T=2, l_tru=50, lr=0.1, epochs=20,
                 batch_size=32, seed=1, init_scale=None, emb_scale=1.0,
                 n_buckets=encode.N_BUCKETS, tie_items=True):
        self.variant = variant
        self.d_g = d_g
        self.d_b = d_b
        self.T = T
        self.l_tru = l_tru
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.init_scale = init_scale
        self.emb_scale = emb_scale
        self.n_buckets = n_buckets
        self.tie_items = tie_items

    @classmethod
    def from_config(cls, config, variant: str = "full") -> "LLMRGRecommender":
        return cls(variant=variant, d_g=config.d_g, d_b=config.d_b, T=config.steps,
                   l_tru=config.l_tru, lr=config.lr, epochs=config.epochs,
                   batch_size=config.batch_size, seed=config.seed, init_scale=config.init_scale,
                   emb_scale=config.emb_scale, n_buckets=config.n_buckets)

    def _validate(self):
        check_choice(self.variant, VARIANTS, "variant")
        for name in ("d_g", "d_b", "T", "l_tru", "epochs", "batch_size", "n_buckets"):
            check_positive_int(getattr(self, name), name)
        check_non_negative(self.lr, "lr")
        check_non_negative(self.emb_scale, "emb_scale")

    @property
    def _tied(self) -> bool:
        return bool(self.tie_items) and self.d_g == self.d_b

    def _examples(self, users, graphs, view: str) -> tuple[list[Example], int]:
        out, missing = [], 0
        for u in users:
            if view == "train":
                events, target = u.train_input(self.l_tru), u.train_target
                if target is None or not events:
                    continue
            else:
                events, target = u.input[-self.l_tru:], u.target
            g = None
            if self.variant != "base":
                g = (graphs or {}).get(u.user_id, {}).get(view)
                if g is None:
                    missing += 1
                    continue
            out.append(make_example(u.user_id, events, target, g, self.catalog_, self.n_buckets,
                                    self.variant))
        return out, missing

    def fit(self, X, y=None, *, graphs=None, catalog: Catalog):
        self._validate()
        self.catalog_ = catalog
        users = _as_users(X)
        examples, missing = self._examples(users, graphs, "train")
        if not examples:
            raise ValueError("no training examples")
        if missing:
            logger.warning("%d users without train graphs were skipped", missing)
        rng = np.random.default_rng(self.seed)
        self.params_ = init_params(len(catalog), self.d_g, self.d_b, self.l_tru, rng,
                                   self.init_scale, self.n_buckets, self.variant, self.emb_scale)
        self.loss_history_ = train_params(examples, self.params_, lr=self.lr, epochs=self.epochs,
                                          batch_size=self.batch_size, seed=self.seed, T=self.T,
                                          tie_items=self._tied)
        self.n_train_ = len(examples)
        return self

    def test_examples(self, X, graphs=None) -> tuple[list[Example], int]:
        check_is_fitted(self, "params_")
        return self._examples(_as_users(X), graphs, "test")

    def decision_function(self, X, graphs=None) -> np.ndarray:
        """Scores over the full catalog for each user's test input."""
        examples, _ = self.test_examples(X, graphs)
        if not examples:
            return np.zeros((0, len(self.catalog_)))
        return batch_scores(examples, self.params_, self.T, self._tied)

    def predict(self, X, graphs=None, n: int = 10) -> list[list[str]]:
        ids = self.catalog_.ids
        return [[ids[i] for i in top_n(s, n)] for s in self.decision_function(X, graphs)]

    def ranks(self, X, graphs=None) -> tuple[dict[str, int], int]:
        """1-based rank of each user's held-out item, and the count of skipped users."""
        examples, missing = self.test_examples(X, graphs)
        if not examples:
            return {}, missing
        scores = batch_scores(examples, self.params_, self.T, self._tied)
        return {ex.user_id: rank_of_target(s, ex.target) for ex, s in zip(examples, scores)}, missing

    def score(self, X, y=None, graphs=None, n: int = 10) -> float:
        ranks, _ = self.ranks(X, graphs)
        return float(np.mean([r <= n for r in ranks.values()])) if ranks else 0.0

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        meta = {"estimator": self.get_params(), "catalog": self.catalog_.to_dict(),
                "loss_history": self.loss_history_,
                "data_paths": getattr(self, "data_paths_", {})}
        save_checkpoint(path, self.params_, meta)

    @classmethod
    def load(cls, path) -> "LLMRGRecommender":
        params, meta = load_checkpoint(path)
        model = cls(**meta["estimator"])
        model.params_ = params
        model.catalog_ = Catalog.from_dict(meta["catalog"])
        model.loss_history_ = meta.get("loss_history", [])
        model.data_paths_ = meta.get("data_paths", {})
        return model
