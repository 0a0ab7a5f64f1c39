"""Equity (demographic-parity) fairness of an influenced population.

The score for one sensitive attribute is ``2 / (1 + exp(CV))`` where CV is the
coefficient of variation of the per-category influenced ratios
``|influenced_i| / |population_i|``. It equals 1 for perfect equity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import Cascade, CascadeLog, ProfileTable
from .exceptions import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroupCounts:
    influenced: tuple[int, ...]
    population: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "influenced", tuple(int(x) for x in self.influenced))
        object.__setattr__(self, "population", tuple(int(x) for x in self.population))
        if len(self.influenced) != len(self.population) or not self.influenced:
            raise ValueError("influenced and population must be non-empty and aligned")
        for om, pop in zip(self.influenced, self.population):
            if om < 0 or pop < 0:
                raise ValueError("counts must be non-negative")
            if om > pop:
                raise ValueError(f"influenced count {om} exceeds population {pop}")


@dataclass(frozen=True)
class FairnessScore:
    value: float
    cv: float
    mu: float
    sigma: float

    @property
    def undefined(self) -> bool:
        """True when nobody was influenced and the score is the mu=0 convention."""
        return self.mu == 0.0

    def __float__(self):
        return self.value


def influenced_ratios(counts: GroupCounts) -> np.ndarray:
    """Per-category influenced ratio; zero-population categories are dropped."""
    om = np.asarray(counts.influenced, dtype=np.float64)
    pop = np.asarray(counts.population, dtype=np.float64)
    keep = pop > 0
    if not keep.all():
        logger.warning("dropping %d zero-population categories", int((~keep).sum()))
        if not keep.any():
            raise DataError("every category has zero population")
    return om[keep] / pop[keep]


def fairness_score(ratios: Sequence[float]) -> FairnessScore:
    r = np.asarray(ratios, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("ratios must be a non-empty vector")
    if np.any(r < 0) or np.any(r > 1) or not np.all(np.isfinite(r)):
        raise ValueError("ratios must lie in [0, 1]")
    mu = float(r.mean())
    # population standard deviation (divide by the number of categories)
    sigma = float(np.sqrt(np.mean((r - mu) ** 2)))
    if mu == 0.0:
        return FairnessScore(1.0, 0.0, 0.0, sigma)
    cv = sigma / mu
    # exact 1.0 for a constant vector, float noise in sigma notwithstanding
    if np.all(r == r[0]):
        cv = 0.0
    return FairnessScore(2.0 / (1.0 + math.exp(cv)), cv, mu, sigma)


def min_fairness(n_categories: int) -> float:
    """Lowest attainable score with ``n`` categories (one positive ratio)."""
    return 2.0 / (1.0 + math.exp(math.sqrt(n_categories - 1)))


def population_counts(profiles: ProfileTable, attr: str, users: Iterable[str] | None = None) -> np.ndarray:
    """Number of users per category of ``attr`` among ``users`` (default: every profiled user).

    Users without a profile are skipped.
    """
    n_cat = len(profiles.schema[attr])
    if users is None:
        codes = profiles.codes[:, profiles.schema.position(attr)]
    else:
        codes = profiles.categories_of([u for u in users if u in profiles], attr)
    return np.bincount(codes, minlength=n_cat).astype(np.int64)


def group_counts(influenced: Iterable[str], profiles: ProfileTable, attr: str, population) -> GroupCounts:
    codes = profiles.categories_of(sorted(set(influenced)), attr)
    om = np.bincount(codes, minlength=len(population))
    return GroupCounts(tuple(om), tuple(population))


def score_users(influenced: Iterable[str], profiles: ProfileTable, attr: str, population) -> FairnessScore:
    return fairness_score(influenced_ratios(group_counts(influenced, profiles, attr, population)))


def cascade_fairness(cascade: Cascade, profiles: ProfileTable, attr: str, population) -> FairnessScore:
    return score_users(cascade.participants, profiles, attr, population)


def _cascades_of(log: CascadeLog, u: str):
    try:
        return log.by_initiator[u]
    except KeyError:
        raise DataError(f"{u!r} is not an initiator in this log") from None


def influencer_fairness_pooled(log: CascadeLog, u: str, profiles: ProfileTable, attr: str, population) -> float:
    """Fairness of the union of participants over every cascade started by ``u``."""
    audience = set()
    for c in _cascades_of(log, u):
        audience.update(c.participants)
    return score_users(audience, profiles, attr, population).value


def influencer_fairness_avg(log: CascadeLog, u: str, profiles: ProfileTable, attr: str, population) -> float:
    """Mean per-cascade fairness over the cascades started by ``u``."""
    cs = _cascades_of(log, u)
    return float(np.mean([cascade_fairness(c, profiles, attr, population).value for c in cs]))


def influencer_fairness(
    log: CascadeLog,
    profiles: ProfileTable,
    attr: str,
    population,
    how: str = "pooled",
    influencers: Sequence[str] | None = None,
) -> dict[str, float]:
    fn = {"pooled": influencer_fairness_pooled, "avg": influencer_fairness_avg}[how]
    if influencers is None:
        influencers = sorted(log.influencers)
    return {u: fn(log, u, profiles, attr, population) for u in influencers}
