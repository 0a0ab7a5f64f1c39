"""Seed selection from a trained embedding model.

Every candidate influencer ``u`` claims the ``lam[u]`` not-yet-claimed nodes
with the highest diffusion probability ``D[u, v]``; their probability mass is
``omega``. Candidates are ranked by ``(1 - alpha) * scaled(omega) + alpha * F[u]``
where ``scaled`` min-max maps omega onto the range of ``F``. The lazy selector
re-evaluates a candidate only when its cached entry is stale, CELF style.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import CascadeLog, ProfileTable
from .embedding import EmbeddingModel
from .fairness import influencer_fairness, population_counts

_EPS32 = float(np.finfo(np.float32).eps)


@dataclass(frozen=True)
class SelectionInputs:
    D: np.ndarray
    lam: np.ndarray
    F: np.ndarray
    influencers: tuple[str, ...] = ()
    nodes: tuple[str, ...] = ()

    def __post_init__(self):
        D = np.asarray(self.D)
        if D.ndim != 2:
            raise ValueError("D must be a matrix")
        n_i, n_v = D.shape
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=np.int64))
        object.__setattr__(self, "F", np.asarray(self.F, dtype=np.float64))
        if not self.influencers:
            object.__setattr__(self, "influencers", tuple(str(i) for i in range(n_i)))
        if not self.nodes:
            object.__setattr__(self, "nodes", tuple(str(j) for j in range(n_v)))
        if self.lam.shape != (n_i,) or self.F.shape != (n_i,):
            raise ValueError("lam and F must have one entry per influencer")
        if len(self.influencers) != n_i or len(self.nodes) != n_v:
            raise ValueError("id tables do not match D")

    def check(self) -> None:
        """Raise ``ValueError`` if a documented invariant does not hold."""
        if not ((self.D > 0) & (self.D < 1)).all():
            raise ValueError("D entries must lie in (0, 1)")
        n_i, n_v = self.D.shape
        if (self.lam < 1).any() or (self.lam > n_v).any():
            raise ValueError("lam entries must lie in [1, |V|]")
        if not ((self.F > 0) & (self.F <= 1)).all():
            raise ValueError("F entries must lie in (0, 1]")


@dataclass(frozen=True)
class SeedStep:
    id: str
    omega: float
    omega_scaled: float
    fairness: float
    claimed: tuple[str, ...]


@dataclass
class SeedSet:
    alpha: float
    k: int
    steps: list[SeedStep] = field(default_factory=list)
    evaluations: int = 0

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.steps]

    def __len__(self):
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "k": self.k,
            "seeds": [
                {
                    "id": s.id,
                    "omega": s.omega,
                    "omega_scaled": s.omega_scaled,
                    "fairness": s.fairness,
                    "claimed": list(s.claimed),
                }
                for s in self.steps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "SeedSet":
        steps = [
            SeedStep(s["id"], float(s["omega"]), float(s["omega_scaled"]), float(s["fairness"]),
                     tuple(s["claimed"]))
            for s in obj["seeds"]
        ]
        return cls(float(obj["alpha"]), int(obj["k"]), steps)


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


def diffusion_matrix(model: EmbeddingModel, include_bias: bool = False, chunk: int = 256) -> np.ndarray:
    """``sigmoid(theta @ tmat)`` as float32, kept strictly inside (0, 1)."""
    n_i = model.theta.shape[0]
    out = np.empty((n_i, len(model.nodes)), dtype=np.float32)
    tmat = model.tmat.astype(np.float64)
    bias = model.bias_b.astype(np.float64) if include_bias else None
    for start in range(0, n_i, chunk):
        z = model.theta[start : start + chunk].astype(np.float64) @ tmat
        if bias is not None:
            z += bias
        out[start : start + chunk] = 0.5 * (1.0 + np.tanh(0.5 * z))
    np.clip(out, np.float32(np.finfo(np.float32).tiny), np.float32(1.0 - _EPS32 / 2), out=out)
    return out


def expected_spread(model_or_theta, n_nodes: int | None = None) -> np.ndarray:
    """Norm-share of ``|V|``: round-half-up, clamped to [1, |V|]."""
    if isinstance(model_or_theta, EmbeddingModel):
        theta = model_or_theta.theta
        n_nodes = len(model_or_theta.nodes) if n_nodes is None else n_nodes
    else:
        theta = np.asarray(model_or_theta)
    if n_nodes is None or n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    norms = np.linalg.norm(np.asarray(theta, dtype=np.float64), axis=1)
    total = norms.sum()
    if not total > 0:
        raise ValueError("every influencer embedding is zero")
    lam = np.floor(norms * n_nodes / total + 0.5).astype(np.int64)
    return np.clip(lam, 1, n_nodes)


def build_selection_inputs(
    model: EmbeddingModel,
    log: CascadeLog,
    profiles: ProfileTable,
    attr: str,
    population=None,
    include_bias: bool = False,
) -> SelectionInputs:
    """D, lam and the per-influencer average cascade fairness F from ``log``."""
    if population is None:
        population = population_counts(profiles, attr, model.nodes)
    fair = influencer_fairness(
        log, profiles, attr, population, "avg",
        [u for u in model.influencers if u in log.by_initiator],
    )
    F = np.array([fair.get(u, 1.0) for u in model.influencers], dtype=np.float64)
    return SelectionInputs(
        diffusion_matrix(model, include_bias), expected_spread(model), F,
        model.influencers, model.nodes,
    )


# ---------------------------------------------------------------------------
# greedy selectors
# ---------------------------------------------------------------------------


class _Scorer:
    """Evaluates candidates against the current pool of unclaimed nodes."""

    def __init__(self, inputs: SelectionInputs, alpha: float, fair: bool = True):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        self.inputs = inputs
        self.alpha = float(alpha)
        self.fair = fair
        self.available = np.ones(inputs.D.shape[1], dtype=bool)
        self._pool = None
        self.evaluations = 0
        self.lb = self.ub = 0.0
        self.f_lb = float(inputs.F.min()) if inputs.F.size else 0.0
        self.f_ub = float(inputs.F.max()) if inputs.F.size else 0.0

    def pool(self) -> np.ndarray:
        if self._pool is None:
            self._pool = np.flatnonzero(self.available)
        return self._pool

    def claim(self, cols: np.ndarray) -> None:
        self.available[cols] = False
        self._pool = None

    def evaluate(self, u: int) -> tuple[float, np.ndarray]:
        self.evaluations += 1
        pool = self.pool()
        row = self.inputs.D[u, pool]
        lam = int(self.inputs.lam[u])
        # top-lam by descending probability, ties to the lower node index
        order = np.argsort(-row, kind="stable")[:lam]
        omega = float(np.sum(row[order], dtype=np.float64))
        return omega, pool[order]

    def set_bounds(self, omegas: Sequence[float]) -> None:
        self.lb, self.ub = float(min(omegas)), float(max(omegas))

    def scaled(self, omega: float) -> float:
        if self.ub == self.lb:
            return (self.f_lb + self.f_ub) / 2.0
        return self.f_lb + (omega - self.lb) / (self.ub - self.lb) * (self.f_ub - self.f_lb)

    def rank(self, u: int, omega: float) -> tuple[float, float, int]:
        """Sort key, larger is better: (objective, omega, -index)."""
        if self.fair:
            obj = (1.0 - self.alpha) * self.scaled(omega) + self.alpha * float(self.inputs.F[u])
        else:
            obj = omega
        return (obj, omega, -u)

    def step(self, u: int, omega: float, cols: np.ndarray) -> SeedStep:
        ins = self.inputs
        return SeedStep(
            ins.influencers[u], omega, self.scaled(omega), float(ins.F[u]),
            tuple(ins.nodes[c] for c in cols),
        )


def _check_k(inputs, k):
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > inputs.D.shape[0]:
        raise ValueError(f"k={k} exceeds the number of influencers ({inputs.D.shape[0]})")


def _lazy(inputs: SelectionInputs, k: int, alpha: float, fair: bool) -> SeedSet:
    _check_k(inputs, k)
    sc = _Scorer(inputs, alpha, fair)
    result = SeedSet(float(alpha), int(k))
    n_i = inputs.D.shape[0]
    if k == 0 or n_i == 0:
        return result
    first = [sc.evaluate(u) for u in range(n_i)]
    sc.set_bounds([om for om, _ in first])
    heap = []
    for u, (om, cols) in enumerate(first):
        obj, om_key, neg_u = sc.rank(u, om)
        heap.append((-obj, -om_key, -neg_u, 0, om, cols))
    heapq.heapify(heap)
    while len(result.steps) < k and heap:
        _, _, u, stamp, om, cols = heapq.heappop(heap)
        if stamp == len(result.steps):
            result.steps.append(sc.step(u, om, cols))
            sc.claim(cols)
        else:
            om, cols = sc.evaluate(u)
            obj, om_key, neg_u = sc.rank(u, om)
            heapq.heappush(heap, (-obj, -om_key, u, len(result.steps), om, cols))
    result.evaluations = sc.evaluations
    return result


def fair_greedy(inputs: SelectionInputs, k: int, alpha: float = 0.2) -> SeedSet:
    """Lazy fairness-aware greedy selection of ``k`` seeds."""
    return _lazy(inputs, k, alpha, fair=True)


def lazy_greedy(inputs: SelectionInputs, k: int) -> SeedSet:
    """Fairness-agnostic lazy greedy: rank by raw omega only."""
    return _lazy(inputs, k, 0.0, fair=False)


def naive_fair_greedy(inputs: SelectionInputs, k: int, alpha: float = 0.2) -> SeedSet:
    """Reference selector: every remaining candidate is re-evaluated at every step."""
    _check_k(inputs, k)
    sc = _Scorer(inputs, alpha, fair=True)
    result = SeedSet(float(alpha), int(k))
    n_i = inputs.D.shape[0]
    remaining = list(range(n_i))
    first = True
    while len(result.steps) < k and remaining:
        evals = {u: sc.evaluate(u) for u in remaining}
        if first:
            sc.set_bounds([om for om, _ in evals.values()])
            first = False
        best = max(remaining, key=lambda u: sc.rank(u, evals[u][0]))
        om, cols = evals[best]
        result.steps.append(sc.step(best, om, cols))
        sc.claim(cols)
        remaining.remove(best)
    result.evaluations = sc.evaluations
    return result


def load_seed_set(path) -> SeedSet:
    with open(path, encoding="utf-8") as fh:
        return SeedSet.from_dict(json.load(fh))


def save_seed_set(seeds: SeedSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(seeds.to_json())
