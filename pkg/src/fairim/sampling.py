"""Training contexts (initiator, participant) drawn from cascades.

Participants are drawn i.i.d. with replacement, with probability inversely
proportional to the time elapsed since the cascade started. The fairness
penalised variant shrinks the number of draws by the initiator's fairness.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import Cascade

FPS = "fps"
FAC = "fac"


@dataclass(frozen=True)
class ContextSet:
    cascade_id: str
    initiator: str
    participants: tuple[str, ...]
    mode: str

    @property
    def pairs(self) -> list[tuple[str, str]]:
        return [(self.initiator, v) for v in self.participants]

    def __len__(self):
        return len(self.participants)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def temporal_weights(cascade: Cascade) -> tuple[tuple[str, ...], np.ndarray]:
    """Participants of ``cascade`` and their sampling probabilities.

    A participant whose elapsed time is not positive is treated as 1 second late.
    """
    if len(cascade) < 2:
        raise ValueError(f"cascade {cascade.id!r} has no participants")
    t0 = cascade.start
    users = tuple(u for u, _ in cascade.events[1:])
    elapsed = np.array([t - t0 for _, t in cascade.events[1:]], dtype=np.float64)
    elapsed[elapsed <= 0] = 1.0
    inv = 1.0 / elapsed
    return users, inv / inv.sum()


def context_length(n_participants: int, eta_percent: float, fairness: float = 1.0) -> int:
    if n_participants == 0 or fairness <= 0:
        return 0
    return max(1, round_half_up(eta_percent / 100.0 * n_participants * fairness))


def _draw(cascade: Cascade, length: int, rng: np.random.Generator) -> tuple[str, ...]:
    if length == 0:
        return ()
    users, w = temporal_weights(cascade)
    idx = rng.choice(len(users), size=length, replace=True, p=w)
    return tuple(users[i] for i in idx)


def sample_context_fac(cascade: Cascade, eta_percent: float, rng: np.random.Generator) -> ContextSet:
    if eta_percent <= 0:
        raise ValueError("eta_percent must be positive")
    n = len(cascade) - 1
    drawn = _draw(cascade, context_length(n, eta_percent), rng)
    return ContextSet(cascade.id, cascade.initiator, drawn, FAC)


def sample_context_fps(
    cascade: Cascade, f_u: float, eta_percent: float, rng: np.random.Generator
) -> ContextSet:
    """Oversample by ``eta_percent`` then keep a ``f_u`` share, as a single draw."""
    if eta_percent <= 0:
        raise ValueError("eta_percent must be positive")
    if not 0.0 < f_u <= 1.0:
        raise ValueError(f"f_u must lie in (0, 1], got {f_u}")
    n = len(cascade) - 1
    drawn = _draw(cascade, context_length(n, eta_percent, f_u), rng)
    return ContextSet(cascade.id, cascade.initiator, drawn, FPS)


def apply_min_cascade_floor(
    contexts: Mapping[str, Sequence[tuple[Cascade, ContextSet]]],
    eta_percent: float,
    rng: np.random.Generator,
    floor: int = 3,
) -> dict[str, list[tuple[Cascade, ContextSet]]]:
    """Keep at least ``floor`` non-empty contexts per influencer.

    ``contexts`` maps an influencer to its (cascade, context) pairs. When too
    few contexts are non-empty, empty ones are re-drawn without the fairness
    penalty, largest cascade first, until ``floor`` are non-empty. Influencers
    with fewer than ``floor`` cascades keep what they have.
    """
    if floor < 1:
        raise ValueError("floor must be >= 1")
    out = {}
    for u, items in contexts.items():
        items = list(items)
        nonempty = sum(1 for _, ctx in items if len(ctx))
        if nonempty >= floor or len(items) < floor:
            out[u] = items
            continue
        ranked = sorted(range(len(items)), key=lambda i: (-(len(items[i][0]) - 1), items[i][0].id))
        for i in ranked:
            if nonempty >= floor:
                break
            casc, ctx = items[i]
            if len(ctx) or len(casc) < 2:
                continue
            redrawn = _draw(casc, context_length(len(casc) - 1, eta_percent), rng)
            items[i] = (casc, ContextSet(casc.id, casc.initiator, redrawn, ctx.mode))
            nonempty += 1
        out[u] = items
    return out


def cascade_rng(seed: int, epoch: int, cascade_id: str) -> np.random.Generator:
    """Independent, reproducible stream for one cascade in one epoch."""
    return np.random.default_rng([seed, epoch, zlib.crc32(cascade_id.encode("utf-8"))])
