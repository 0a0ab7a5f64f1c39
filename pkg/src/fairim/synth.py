"""Synthetic ground truth: homophilous graphs, IC cascades, attribute flipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import AttributeSchema, Attribute, Cascade, CascadeLog, ProfileTable
from .exceptions import DataError
from .fairness import population_counts, score_users


@dataclass
class SynthConfig:
    n_nodes: int = 5000
    n_influencers: int = 50
    marginals: Mapping[str, Mapping[str, float]] = field(
        default_factory=lambda: {"gender": {"male": 0.47, "female": 0.53}}
    )
    homophily: float = 0.5
    homophily_attr: str | None = None
    edge_prob: float = 0.002
    activation_prob: float = 0.1
    influencer_degree: int | tuple[int, int] | None = None
    vary_hub_homophily: bool = False
    homophilous_categories: tuple[str, ...] | None = None
    cascades_per_influencer: int | tuple[int, int] = 10
    start_spacing: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name, dist in self.marginals.items():
            if len(dist) < 2:
                raise ValueError(f"attribute {name!r} needs at least 2 categories")
            if any(p < 0 for p in dist.values()) or abs(sum(dist.values()) - 1.0) > 1e-9:
                raise ValueError(f"marginals of {name!r} must be non-negative and sum to 1")
        for name, p in (("homophily", self.homophily), ("edge_prob", self.edge_prob),
                        ("activation_prob", self.activation_prob)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.influencer_degree is not None:
            lo, hi = np.broadcast_to(np.asarray(self.influencer_degree), (2,))
            if not 0 <= lo <= hi < self.n_nodes:
                raise ValueError("influencer_degree must lie in [0, n_nodes)")
        if self.n_nodes < 2 or not 1 <= self.n_influencers <= self.n_nodes:
            raise ValueError("need n_nodes >= 2 and 1 <= n_influencers <= n_nodes")
        if self.homophily_attr is None:
            self.homophily_attr = next(iter(self.marginals))
        if self.homophily_attr not in self.marginals:
            raise ValueError(f"unknown homophily attribute {self.homophily_attr!r}")
        if self.homophilous_categories is not None:
            unknown = set(self.homophilous_categories) - set(self.marginals[self.homophily_attr])
            if unknown:
                raise ValueError(f"unknown homophilous categories {sorted(unknown)}")

    @property
    def schema(self) -> AttributeSchema:
        return AttributeSchema(tuple(Attribute(k, tuple(v)) for k, v in self.marginals.items()))


def _region_marginal(n=36):
    w = np.array([1.0 / (i + 2) ** 0.8 for i in range(n)])
    w /= w.sum()
    w = np.round(w, 6)
    w[0] += 1.0 - w.sum()
    return {f"r{i + 1:02d}": float(x) for i, x in enumerate(w)}


PRESETS = {
    "weibo-like": dict(
        marginals={"gender": {"male": 0.47, "female": 0.53}, "region": _region_marginal()},
    ),
    "digg-like": dict(
        marginals={
            "gender": {"male": 0.65, "female": 0.35},
            "age": {"18-24": 0.12, "25-34": 0.27, "35-44": 0.25, "45-54": 0.18,
                    "55-64": 0.11, "65+": 0.07},
        },
    ),
}


def preset(name: str, **overrides) -> SynthConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return SynthConfig(**base)


@dataclass
class Graph:
    """Directed graph in CSR form over ``ids``."""

    ids: tuple[str, ...]
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.ids)

    @property
    def n_edges(self) -> int:
        return int(self.indices.size)

    def successors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def edges(self):
        src = np.repeat(np.arange(self.n_nodes), np.diff(self.indptr))
        return src, self.indices

    def to_edgelist(self) -> str:
        src, dst = self.edges()
        return "".join(f"{self.ids[a]}\t{self.ids[b]}\n" for a, b in zip(src, dst))

    @classmethod
    def from_edges(cls, ids, src, dst) -> "Graph":
        src = np.asarray(src, np.int64)
        dst = np.asarray(dst, np.int64)
        pairs = np.unique(np.stack([src, dst], axis=1), axis=0) if src.size else np.zeros((0, 2), np.int64)
        src, dst = pairs[:, 0], pairs[:, 1]
        indptr = np.zeros(len(ids) + 1, np.int64)
        np.add.at(indptr, src + 1, 1)
        return cls(tuple(ids), np.cumsum(indptr), dst)


def _node_ids(n):
    width = len(str(n - 1))
    return tuple(f"n{i:0{width}d}" for i in range(n))


def gen_graph(config: SynthConfig, rng: np.random.Generator | None = None) -> tuple[Graph, ProfileTable]:
    """Random directed graph with homophily on one attribute, plus i.i.d. profiles.

    Same-group edges have probability ``p(1+h)``, cross-group ``p(1-h)``, both
    rescaled per source node so that its expected out-degree stays ``p(n-1)``.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    n = config.n_nodes
    ids = _node_ids(n)
    schema = config.schema
    codes = np.column_stack([
        rng.choice(len(dist), size=n, p=np.asarray(list(dist.values())))
        for dist in config.marginals.values()
    ])
    h = config.homophily
    p = config.edge_prob
    group = codes[:, schema.position(config.homophily_attr)]
    members = [np.flatnonzero(group == g) for g in range(len(schema[config.homophily_attr]))]
    sizes = np.array([m.size for m in members])
    src_all, dst_all = [], []
    for u in range(n):
        g = group[u]
        same = sizes[g] - 1
        other = n - sizes[g]
        denom = (1 + h) * same + (1 - h) * other
        scale = (n - 1) / denom if denom > 0 else 0.0
        for gg, mem in enumerate(members):
            prob = min(1.0, p * scale * ((1 + h) if gg == g else (1 - h)))
            pool = mem.size - (1 if gg == g else 0)
            if prob <= 0 or pool <= 0:
                continue
            cnt = rng.binomial(pool, prob)
            if cnt == 0:
                continue
            cand = mem[mem != u] if gg == g else mem
            dst = rng.choice(cand, size=cnt, replace=False)
            src_all.append(np.full(cnt, u, np.int64))
            dst_all.append(dst)
    src = np.concatenate(src_all) if src_all else np.zeros(0, np.int64)
    dst = np.concatenate(dst_all) if dst_all else np.zeros(0, np.int64)
    return Graph.from_edges(ids, src, dst), ProfileTable(schema, ids, codes)


def _ic_run(graph: Graph, seeds: np.ndarray, prob: float, rng: np.random.Generator):
    """One IC diffusion; returns (node index, activation round) in activation order."""
    active = np.zeros(graph.n_nodes, bool)
    active[seeds] = True
    order = [(int(s), 0) for s in seeds]
    frontier = np.asarray(seeds, np.int64)
    rnd = 0
    while frontier.size and prob > 0:
        rnd += 1
        starts, ends = graph.indptr[frontier], graph.indptr[frontier + 1]
        if (ends - starts).sum() == 0:
            break
        nbrs = np.concatenate([graph.indices[a:b] for a, b in zip(starts, ends)])
        hit = nbrs[rng.random(nbrs.size) < prob]
        new = np.unique(hit[~active[hit]])
        active[new] = True
        order.extend((int(v), rnd) for v in new)
        frontier = new
    return order


def simulate_ic_cascades(
    graph: Graph,
    prob: float,
    n_per_influencer,
    rng: np.random.Generator,
    influencers: Sequence[str] | None = None,
    start_spacing: int = 1000,
) -> CascadeLog:
    """IC cascades, interleaved in time across influencers.

    ``n_per_influencer`` is a count or one count per influencer. Round ``r``
    holds one cascade from every influencer with more than ``r`` cascades.
    Cascade ``j`` starts at ``j * start_spacing``; each participant's
    timestamp is the start plus its activation round.
    """
    if not 0.0 <= prob <= 1.0:
        raise ValueError("activation probability must lie in [0, 1]")
    if influencers is None:
        influencers = graph.ids
    counts = np.broadcast_to(np.asarray(n_per_influencer, np.int64), (len(influencers),))
    if (counts < 0).any():
        raise ValueError("cascade counts must be non-negative")
    index = {v: i for i, v in enumerate(graph.ids)}
    total = int(counts.sum())
    width = len(str(max(total - 1, 0)))
    cascades = []
    j = 0
    for r in range(int(counts.max(initial=0))):
        for u, n_u in zip(influencers, counts):
            if n_u <= r:
                continue
            start = j * start_spacing
            run = _ic_run(graph, np.array([index[u]]), prob, rng)
            events = tuple((graph.ids[v], start + t) for v, t in run)
            cascades.append(Cascade(f"c{j:0{width}d}", events))
            j += 1
    return CascadeLog(tuple(cascades))


def add_hub_edges(graph: Graph, profiles: ProfileTable, hubs: Sequence[str], degree,
                  homophily, attr: str, rng: np.random.Generator) -> Graph:
    """Give every hub ``degree`` extra out-edges (followers), drawn with homophily on ``attr``.

    A follower in the hub's own group is ``(1+h)/(1-h)`` times as likely as one
    outside it. ``degree`` and ``homophily`` are scalars or one value per hub.
    """
    index = {v: i for i, v in enumerate(graph.ids)}
    group = profiles.codes[:, profiles.schema.position(attr)]
    hs = np.broadcast_to(np.asarray(homophily, np.float64), (len(hubs),))
    degs = np.broadcast_to(np.asarray(degree, np.int64), (len(hubs),))
    src, dst = graph.edges()
    new_src, new_dst = [src], [dst]
    for hub, h, degree in zip(hubs, hs, degs):
        u = index[hub]
        w = np.where(group == group[u], 1.0 + h, 1.0 - h)
        w[u] = 0.0
        if w.sum() <= 0:
            continue
        m = min(degree, int(np.count_nonzero(w)))
        picked = rng.choice(graph.n_nodes, size=m, replace=False, p=w / w.sum())
        new_src.append(np.full(m, u, np.int64))
        new_dst.append(picked)
    return Graph.from_edges(graph.ids, np.concatenate(new_src), np.concatenate(new_dst))


def pick_influencers(graph: Graph, n: int, rng: np.random.Generator) -> tuple[str, ...]:
    idx = np.sort(rng.choice(graph.n_nodes, size=n, replace=False))
    return tuple(graph.ids[i] for i in idx)


def generate(config: SynthConfig):
    """Graph, profiles and cascade log for ``config`` (all seeded from ``config.seed``)."""
    rng = np.random.default_rng(config.seed)
    if config.edge_prob == 0 and config.activation_prob > 0 and not config.influencer_degree:
        raise DataError("edge_prob = 0 cannot produce cascades")
    graph, profiles = gen_graph(config, rng)
    infl = pick_influencers(graph, config.n_influencers, rng)
    if config.influencer_degree:
        h = np.full(len(infl), config.homophily)
        if config.vary_hub_homophily:
            h = rng.uniform(0.0, config.homophily, size=len(infl))
        if config.homophilous_categories is not None:
            attr = config.schema[config.homophily_attr]
            keep = [attr.index(c) for c in config.homophilous_categories]
            hub_cat = profiles.categories_of(infl, config.homophily_attr)
            h = np.where(np.isin(hub_cat, keep), h, 0.0)
        deg = config.influencer_degree
        if not np.isscalar(deg):
            deg = rng.integers(deg[0], deg[1], size=len(infl), endpoint=True)
        graph = add_hub_edges(graph, profiles, infl, deg, h, config.homophily_attr, rng)
    counts = config.cascades_per_influencer
    if not np.isscalar(counts):
        counts = rng.integers(counts[0], counts[1], size=len(infl), endpoint=True)
    log = simulate_ic_cascades(graph, config.activation_prob, counts, rng, infl, config.start_spacing)
    return graph, profiles, log


def random_cascade_log(
    n_influencers: int,
    n_nodes: int,
    n_cascades: int,
    mean_participants: float,
    rng: np.random.Generator,
) -> CascadeLog:
    """Graph-free log in which every one of ``n_nodes`` users appears at least once.

    Used for scale tests; participants are spread uniformly.
    """
    if n_nodes <= n_influencers:
        raise ValueError("need more nodes than influencers")
    ids = _node_ids(n_nodes)
    infl_idx = np.arange(n_influencers)
    others = rng.permutation(np.arange(n_influencers, n_nodes))
    owner = np.repeat(infl_idx, -(-n_cascades // n_influencers))[:n_cascades]
    owner = rng.permutation(owner)
    # cover every non-influencer once, then top up at random
    base = np.array_split(others, n_cascades)
    extra = rng.poisson(max(mean_participants - len(others) / n_cascades, 0.0), size=n_cascades)
    width = len(str(n_cascades - 1))
    cascades = []
    for j in range(n_cascades):
        parts = set(base[j].tolist())
        if extra[j]:
            parts.update(rng.integers(n_influencers, n_nodes, size=extra[j]).tolist())
        parts = sorted(parts)
        start = j * 1000
        times = start + rng.integers(1, 500, size=len(parts))
        events = ((ids[owner[j]], start),) + tuple((ids[p], int(t)) for p, t in zip(parts, times))
        cascades.append(Cascade(f"c{j:0{width}d}", events))
    return CascadeLog(tuple(cascades))


# ---------------------------------------------------------------------------
# attribute flipping
# ---------------------------------------------------------------------------


def flip_attribute(
    log: CascadeLog,
    profiles: ProfileTable,
    attr: str,
    from_category: str,
    to_category: str,
    rng: np.random.Generator,
    frac_influencers: float = 0.5,
    frac_participants: float = 0.5,
) -> tuple[ProfileTable, dict]:
    """Move a share of ``from_category`` users reached by a random influencer subset.

    A ``frac_influencers`` share of initiators forms the working group. Among
    the union of their cascades' participants currently in ``from_category``,
    a ``frac_participants`` share is flipped to ``to_category`` in the global
    profile table. Returns the new table and an audit record.
    """
    if from_category == to_category:
        raise DataError("from and to categories must differ")
    for f in (frac_influencers, frac_participants):
        if not 0.0 <= f <= 1.0:
            raise ValueError("fractions must lie in [0, 1]")
    a = profiles.schema[attr]
    src, dst = a.index(from_category), a.index(to_category)
    col = profiles.schema.position(attr)
    infl = sorted(log.influencers)
    n_sel = math.floor(frac_influencers * len(infl))
    chosen = sorted(rng.choice(len(infl), size=n_sel, replace=False).tolist()) if n_sel else []
    working = [infl[i] for i in chosen]
    audience = set()
    for u in working:
        for c in log.by_initiator[u]:
            audience.update(c.participants)
    eligible = sorted(v for v in audience if v in profiles and profiles.category(v, attr) == src)
    n_flip = math.floor(frac_participants * len(eligible) + 0.5)
    picked = sorted(rng.choice(len(eligible), size=n_flip, replace=False).tolist()) if n_flip else []
    flipped = [eligible[i] for i in picked]
    codes = profiles.codes.copy()
    rows = {u: i for i, u in enumerate(profiles.users)}
    for v in flipped:
        codes[rows[v], col] = dst
    audit = {
        "attr": attr,
        "from": from_category,
        "to": to_category,
        "working_group": working,
        "flipped": flipped,
    }
    return profiles.with_codes(codes), audit


def unflip_attribute(profiles: ProfileTable, audit: Mapping) -> ProfileTable:
    """Undo :func:`flip_attribute` using its audit record."""
    a = profiles.schema[audit["attr"]]
    col = profiles.schema.position(audit["attr"])
    src, dst = a.index(audit["from"]), a.index(audit["to"])
    codes = profiles.codes.copy()
    rows = {u: i for i, u in enumerate(profiles.users)}
    for v in audit["flipped"]:
        if codes[rows[v], col] != dst:
            raise DataError(f"user {v!r} is not in the flipped category; audit does not apply")
        codes[rows[v], col] = src
    return profiles.with_codes(codes)


def category_shares(profiles: ProfileTable, attr: str, users=None) -> dict[str, float]:
    counts = population_counts(profiles, attr, users)
    labels = profiles.schema[attr].categories
    total = counts.sum()
    return {labels[i]: float(c / total) for i, c in enumerate(counts)}


# ---------------------------------------------------------------------------
# Monte-Carlo spread oracle
# ---------------------------------------------------------------------------


def monte_carlo_spread(
    graph: Graph,
    seeds: Sequence[str],
    prob: float,
    runs: int,
    rng: np.random.Generator,
    profiles: ProfileTable | None = None,
    attr: str | None = None,
    population=None,
) -> dict:
    """Mean number of nodes influenced beyond the seeds, its standard error and mean fairness."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    index = {v: i for i, v in enumerate(graph.ids)}
    seed_idx = np.array(sorted({index[s] for s in seeds}), np.int64)
    sizes = np.empty(runs)
    fair = []
    if profiles is not None and population is None:
        population = population_counts(profiles, attr)
    for r in range(runs):
        order = _ic_run(graph, seed_idx, prob, rng)
        influenced = [graph.ids[v] for v, rnd in order if rnd > 0]
        sizes[r] = len(influenced)
        if profiles is not None:
            fair.append(score_users(influenced, profiles, attr, population).value)
    return {
        "spread": float(sizes.mean()),
        "stderr": float(sizes.std(ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0,
        "fairness": float(np.mean(fair)) if fair else None,
        "runs": runs,
    }
