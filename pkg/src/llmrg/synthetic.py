"""Synthetic corpus with planted attribute-driven structure.

Items are partitioned into hidden taste pools and carry only a neutral era
attribute; each user owns one taste (their attribute) and their sequence mixes off-taste noise with items from the
pool, always ending on pool items. The matching knowledge table lets the
mock oracle reason about tastes, so graph-derived signal is genuinely
informative while the raw sequence only carries it implicitly.
"""

from __future__ import annotations

import numpy as np

from .domain import Catalog, InteractionSequence, Item
from .llm import KnowledgeEntry, KnowledgeTable

_ADJ = ("amber", "brass", "cobalt", "dusky", "emerald", "frosted", "gilded", "hollow",
        "ivory", "jade", "kindled", "lunar", "molten", "northern", "opal", "pale",
        "quiet", "russet", "silver", "tidal", "umber", "velvet", "wild", "yonder")
_NOUN = ("anchor", "bridge", "canyon", "delta", "engine", "forest", "garden", "harbor",
         "island", "jungle", "kettle", "lantern", "meadow", "nebula", "orchard", "prairie",
         "quarry", "river", "summit", "temple", "valley", "willow", "yard", "zenith")
_TASTES = ("noir", "space opera", "folk horror", "heist", "coming of age", "courtroom",
           "kaiju", "cyberpunk", "western", "musical", "war epic", "romcom", "mockumentary",
           "survival", "spy thriller", "fairy tale", "sports drama", "time travel",
           "disaster", "biopic", "slasher", "road movie", "martial arts", "satire")
_ERAS = ("silent era", "golden age", "new wave", "blockbuster era", "streaming era")
_MOODS = ("craving for {}", "fondness for {} tropes", "nostalgia for {} classics")


def make_synthetic(n_users: int = 500, n_items: int = 200, n_tastes: int = 20,
                   pool_hits: int = 4, noise: tuple[int, int] = (4, 10), seed: int = 0):
    """Return ``(catalog, sequences, knowledge)``.

    Every sequence is ``pool_hits`` shuffled pool items mixed into off-taste
    noise, followed by two more pool items (the training and test targets).
    """
    if n_tastes > len(_TASTES) or n_items % n_tastes:
        raise ValueError("n_items must be a multiple of n_tastes <= %d" % len(_TASTES))
    if n_items > len(_ADJ) * len(_NOUN):
        raise ValueError("too many items for the title vocabulary")
    pool_size = n_items // n_tastes
    if pool_hits + 2 > pool_size:
        raise ValueError("pool_hits + 2 must fit inside one taste pool")
    rng = np.random.default_rng(seed)
    combos = [(a, n) for a in _ADJ for n in _NOUN]
    picks = rng.choice(len(combos), n_items, replace=False)
    width = len(str(n_items))
    tastes = _TASTES[:n_tastes]
    items, owner = [], {}
    for i, c in enumerate(picks):
        adj, noun = combos[c]
        taste = tastes[i // pool_size]
        items.append(Item(f"i{i + 1:0{width}d}", f"The {adj.title()} {noun.title()}",
                          (_ERAS[int(rng.integers(len(_ERAS)))],)))
        owner[items[-1].id] = taste
    catalog = Catalog(items)
    pools = {t: [i for i, o in owner.items() if o == t] for t in tastes}

    knowledge = KnowledgeTable({
        t: KnowledgeEntry(tuple(m.format(t) for m in _MOODS),
                          tuple(catalog.label_of(i) for i in pools[t]))
        for t in tastes})

    sequences = []
    uw = len(str(n_users))
    for u in range(n_users):
        taste = tastes[u % n_tastes]
        pool = rng.permutation(pools[taste])[: pool_hits + 2].tolist()
        off = [i for t in tastes if t != taste for i in pools[t]]
        n_noise = int(rng.integers(noise[0], noise[1] + 1))
        body = rng.choice(off, n_noise, replace=False).tolist() + pool[:pool_hits]
        body = [body[j] for j in rng.permutation(len(body))]
        events = tuple(body + pool[pool_hits:])
        sequences.append(InteractionSequence(f"u{u + 1:0{uw}d}", events, (taste,)))
    return catalog, sequences, knowledge
