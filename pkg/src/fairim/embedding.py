"""Influencer / susceptible embeddings learned from cascades.

Two branches share the influencer matrix ``theta``:

* spread branch: logit ``theta[u] . tmat[:, v] + bias_b[v]`` trained with
  negative-sampling NCE on (initiator, participant) pairs;
* fairness branch: ``sigmoid(theta[u] . umat + bias_c)`` regressed on the
  influencer's fairness score with squared error.

``fps`` trains only the spread branch on fairness-penalised contexts, ``fac``
trains both branches on plain temporal contexts, ``fps-fac`` combines the
penalised contexts with the fairness branch.
"""

from __future__ import annotations

import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numba import njit

from . import sampling
from .data import CascadeLog, ProfileTable
from .exceptions import DataError, ModelFormatError, NumericalError
from .fairness import influencer_fairness, population_counts

logger = logging.getLogger(__name__)

MODES = ("fps", "fac", "fps-fac", "concat")
TRAIN_MODES = ("fps", "fac", "fps-fac")
MAGIC = b"FIMS"
FORMAT_VERSION = 1


@dataclass(eq=False)
class EmbeddingModel:
    theta: np.ndarray  # (|I|, |E|)
    tmat: np.ndarray  # (|E|, |V|)
    bias_b: np.ndarray  # (|V|,)
    umat: np.ndarray  # (|E|,)
    bias_c: float
    influencers: tuple[str, ...]
    nodes: tuple[str, ...]
    mode: str = "fac"
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.influencers = tuple(self.influencers)
        self.nodes = tuple(self.nodes)
        n_i, dim = self.theta.shape
        if self.tmat.shape != (dim, len(self.nodes)) or n_i != len(self.influencers):
            raise ValueError("parameter shapes do not match the index tables")
        if self.bias_b.shape != (len(self.nodes),) or self.umat.shape != (dim,):
            raise ValueError("bias/fairness parameter shapes are inconsistent")
        if len(set(self.influencers)) != n_i or len(set(self.nodes)) != len(self.nodes):
            raise ValueError("index tables must not contain duplicates")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def embed_dim(self) -> int:
        return self.theta.shape[1]

    @cached_property
    def influencer_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.influencers)}

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.nodes)}

    def row(self, u: str) -> int:
        try:
            return self.influencer_index[u]
        except KeyError:
            raise KeyError(f"{u!r} is not an indexed influencer") from None

    def col(self, v: str) -> int:
        try:
            return self.node_index[v]
        except KeyError:
            raise KeyError(f"{v!r} is not an indexed node") from None

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(
            self.theta.copy(), self.tmat.copy(), self.bias_b.copy(), self.umat.copy(),
            self.bias_c, self.influencers, self.nodes, self.mode, list(self.history),
        )

    def identical(self, other: "EmbeddingModel") -> bool:
        """Bit-for-bit equality of parameters, index tables and mode."""
        return (
            self.mode == other.mode
            and self.influencers == other.influencers
            and self.nodes == other.nodes
            and all(
                a.dtype == b.dtype and a.tobytes() == b.tobytes()
                for a, b in (
                    (self.theta, other.theta),
                    (self.tmat, other.tmat),
                    (self.bias_b, other.bias_b),
                    (self.umat, other.umat),
                )
            )
            and np.float32(self.bias_c).tobytes() == np.float32(other.bias_c).tobytes()
        )

    def all_finite(self) -> bool:
        return bool(
            np.isfinite(self.theta).all()
            and np.isfinite(self.tmat).all()
            and np.isfinite(self.bias_b).all()
            and np.isfinite(self.umat).all()
            and np.isfinite(self.bias_c)
        )

    def fairness_output(self, u: str | None = None):
        """Fairness-branch prediction for ``u`` (or every influencer)."""
        z = self.theta.astype(np.float64) @ self.umat.astype(np.float64) + float(self.bias_c)
        out = 1.0 / (1.0 + np.exp(-z))
        return out if u is None else float(out[self.row(u)])


@dataclass
class TrainConfig:
    embed_dim: int = 50
    epochs: int = 10
    learning_rate: float = 0.1
    negatives: int = 10
    eta_percent: float = 120.0
    mode: str = "fac"
    seed: int = 0
    noise_exponent: float = 0.75
    min_cascades: int = 3
    fairness_target: str = "pooled"

    def __post_init__(self):
        if self.embed_dim < 1 or self.epochs < 1 or self.negatives < 1:
            raise ValueError("embed_dim, epochs and negatives must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.eta_percent > 0:
            raise ValueError("eta_percent must be positive")
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.fairness_target not in ("pooled", "avg"):
            raise ValueError("fairness_target must be 'pooled' or 'avg'")
        if self.min_cascades < 1:
            raise ValueError("min_cascades must be >= 1")


def _ids(spec, prefix):
    if isinstance(spec, (int, np.integer)):
        if spec < 1:
            raise ValueError("dimensions must be >= 1")
        return tuple(f"{prefix}{i}" for i in range(int(spec)))
    return tuple(spec)


def init_model(influencers, nodes, embed_dim: int, rng: np.random.Generator, mode: str = "fac",
               dtype=np.float32) -> EmbeddingModel:
    """Uniform init in [-0.5/|E|, 0.5/|E|] for theta and tmat; zero biases and umat.

    ``influencers`` / ``nodes`` are id sequences or plain counts.
    """
    influencers = _ids(influencers, "i")
    nodes = _ids(nodes, "v")
    if embed_dim < 1 or not influencers or not nodes:
        raise ValueError("dimensions must be >= 1")
    bound = 0.5 / embed_dim
    theta = rng.uniform(-bound, bound, size=(len(influencers), embed_dim)).astype(dtype)
    tmat = rng.uniform(-bound, bound, size=(embed_dim, len(nodes))).astype(dtype)
    return EmbeddingModel(
        theta, tmat, np.zeros(len(nodes), dtype), np.zeros(embed_dim, dtype), 0.0,
        influencers, nodes, mode,
    )


def score_pair(model: EmbeddingModel, u: str, v: str) -> float:
    i, j = model.row(u), model.col(v)
    return float(np.dot(model.theta[i].astype(np.float64), model.tmat[:, j].astype(np.float64))
                 + float(model.bias_b[j]))


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def nce_loss_and_grads(theta_u, t_cols, b_vals):
    """Loss and gradients for one positive (column 0) and its negatives.

    ``t_cols`` is (|E|, 1 + n_neg), ``b_vals`` the matching output biases.
    Returns ``(loss, d_theta_u, d_t_cols, d_b_vals)``.
    """
    z = theta_u @ t_cols + b_vals
    loss = float(-_log_sigmoid(z[0]) - np.sum(_log_sigmoid(-z[1:])))
    g = _sigmoid(z)
    g[0] -= 1.0
    d_theta = t_cols @ g
    d_t = np.outer(theta_u, g)
    return loss, d_theta, d_t, g


def nce_step(model: EmbeddingModel, pair, negatives: Sequence[str], lr: float) -> float:
    """One SGD step on a positive pair and its negatives; updates ``model`` in place."""
    u, v = pair
    i = model.row(u)
    cols = np.array([model.col(v)] + [model.col(n) for n in negatives], dtype=np.int64)
    if cols[0] in cols[1:]:
        raise ValueError("negatives must not contain the positive node")
    return _nce_step_idx(model, i, cols, lr)


def _nce_step_idx(model, i, cols, lr):
    theta_u = model.theta[i]
    loss, d_theta, d_t, d_b = nce_loss_and_grads(theta_u, model.tmat[:, cols], model.bias_b[cols])
    if lr:
        dt = model.tmat.dtype
        np.add.at(model.tmat.T, cols, (-lr * d_t.T).astype(dt))
        np.add.at(model.bias_b, cols, (-lr * d_b).astype(dt))
        model.theta[i] = theta_u - (lr * d_theta).astype(dt)
    return loss


def fairness_loss_and_grads(theta_u, umat, bias_c, target):
    z = float(theta_u @ umat) + bias_c
    o = float(_sigmoid(z))
    loss = (target - o) ** 2
    dz = -2.0 * (target - o) * o * (1.0 - o)
    return loss, dz * umat, dz * theta_u, dz


def fairness_step(model: EmbeddingModel, u: str, target: float, lr: float) -> float:
    if model.mode == "fps":
        raise ValueError("the fairness branch is not trained in fps mode")
    if not 0.0 < target <= 1.0:
        raise ValueError("fairness target must lie in (0, 1]")
    i = model.row(u)
    theta_u = model.theta[i].copy()
    loss, d_theta, d_u, d_c = fairness_loss_and_grads(theta_u, model.umat, float(model.bias_c), target)
    if lr:
        dt = model.theta.dtype
        model.theta[i] = theta_u - (lr * d_theta).astype(dt)
        model.umat[:] = model.umat - (lr * d_u).astype(dt)
        model.bias_c = float(dt.type(model.bias_c - lr * d_c))
    return loss


def build_noise_distribution(contexts, nodes: Sequence[str], exponent: float = 0.75) -> np.ndarray:
    """Unigram^exponent over ``nodes`` from participant frequencies in ``contexts``.

    Nodes that never occur get probability 0.
    """
    index = {v: j for j, v in enumerate(nodes)}
    counts = np.zeros(len(nodes), dtype=np.float64)
    total = 0
    for ctx in contexts:
        for v in ctx.participants:
            counts[index[v]] += 1
            total += 1
    if total == 0:
        raise ValueError("contexts contain no participants")
    seen = counts > 0
    weights = np.zeros_like(counts)
    weights[seen] = counts[seen] ** exponent
    return weights / weights.sum()


# ---------------------------------------------------------------------------
# compiled epoch loop
# ---------------------------------------------------------------------------


@njit(cache=True)
def _log1pexp(x):
    if x > 0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@njit(cache=True)
def _sgd_epoch(theta, t_by_node, bias_b, umat, bias_c, pair_v, negs, casc_ptr, casc_u,
               fair_target, do_fair, lr):
    """Sequential SGD over cascades. ``t_by_node`` is tmat transposed (|V|, |E|).

    ``bias_c`` is a length-1 array. Returns (nce loss sum, pair count, fairness loss sum).
    """
    dim = theta.shape[1]
    n_neg = negs.shape[1]
    cols = np.empty(n_neg + 1, np.int64)
    z = np.empty(n_neg + 1, np.float64)
    g = np.empty(n_neg + 1, np.float64)
    grad = np.empty(dim, np.float64)
    th = np.empty(dim, np.float64)
    nce_total = 0.0
    n_pairs = 0
    fair_total = 0.0
    for ci in range(casc_u.shape[0]):
        u = casc_u[ci]
        for p in range(casc_ptr[ci], casc_ptr[ci + 1]):
            cols[0] = pair_v[p]
            for k in range(n_neg):
                cols[k + 1] = negs[p, k]
            for e in range(dim):
                th[e] = theta[u, e]
            for k in range(n_neg + 1):
                acc = 0.0
                for e in range(dim):
                    acc += th[e] * t_by_node[cols[k], e]
                z[k] = acc + bias_b[cols[k]]
            nce_total += _log1pexp(-z[0])
            g[0] = _sig(z[0]) - 1.0
            for k in range(1, n_neg + 1):
                nce_total += _log1pexp(z[k])
                g[k] = _sig(z[k])
            for e in range(dim):
                acc = 0.0
                for k in range(n_neg + 1):
                    acc += t_by_node[cols[k], e] * g[k]
                grad[e] = acc
            for k in range(n_neg + 1):
                c = cols[k]
                for e in range(dim):
                    t_by_node[c, e] -= lr * (th[e] * g[k])
                bias_b[c] -= lr * g[k]
            for e in range(dim):
                theta[u, e] = th[e] - lr * grad[e]
            n_pairs += 1
        if do_fair:
            acc = 0.0
            for e in range(dim):
                acc += theta[u, e] * umat[e]
            zf = acc + bias_c[0]
            o = _sig(zf)
            diff = fair_target[ci] - o
            fair_total += diff * diff
            dz = -2.0 * diff * o * (1.0 - o)
            for e in range(dim):
                th[e] = theta[u, e]
            for e in range(dim):
                theta[u, e] = th[e] - lr * dz * umat[e]
                umat[e] -= lr * dz * th[e]
            bias_c[0] -= lr * dz
    return nce_total, n_pairs, fair_total


def _draw_negatives(rng, positives, n_neg, noise):
    n_nodes = noise.shape[0]
    cdf = np.cumsum(noise)
    cdf[-1] = 1.0
    negs = np.searchsorted(cdf, rng.random((positives.shape[0], n_neg)), side="right")
    support = int(np.count_nonzero(noise))
    for _ in range(100):
        clash = negs == positives[:, None]
        if not clash.any():
            return negs
        negs[clash] = np.searchsorted(cdf, rng.random(int(clash.sum())), side="right")
    # noise support too small to avoid the positive: fall back to uniform non-positive nodes
    clash = negs == positives[:, None]
    if clash.any():
        if n_nodes < 2:
            raise DataError("need at least two nodes for negative sampling")
        if support > 1:
            logger.debug("negative sampling fell back to uniform draws")
        r = rng.integers(0, n_nodes - 1, size=int(clash.sum()))
        pos = np.broadcast_to(positives[:, None], negs.shape)[clash]
        negs[clash] = r + (r >= pos)
    return negs


def run_epoch(model: EmbeddingModel, pair_v, negs, casc_ptr, casc_u, fair_target, do_fair, lr):
    """Apply one pass of the compiled SGD loop to ``model`` (in place)."""
    t_by_node = np.ascontiguousarray(model.tmat.T)
    c = np.array([model.bias_c], dtype=model.theta.dtype)
    nce, n, fair = _sgd_epoch(
        model.theta, t_by_node, model.bias_b, model.umat, c,
        np.asarray(pair_v, np.int64), np.asarray(negs, np.int64).reshape(len(pair_v), -1),
        np.asarray(casc_ptr, np.int64), np.asarray(casc_u, np.int64),
        np.asarray(fair_target, np.float64), bool(do_fair), float(lr),
    )
    model.tmat[...] = t_by_node.T
    model.bias_c = float(c[0])
    return nce, n, fair


# ---------------------------------------------------------------------------
# training driver
# ---------------------------------------------------------------------------


def _epoch_contexts(cascades, config, epoch, f_pen):
    penalised = config.mode in ("fps", "fps-fac")
    grouped: dict[str, list] = {}
    for c in cascades:
        rng = sampling.cascade_rng(config.seed, epoch, c.id)
        if penalised:
            ctx = sampling.sample_context_fps(c, f_pen[c.initiator], config.eta_percent, rng)
        else:
            ctx = sampling.sample_context_fac(c, config.eta_percent, rng)
        grouped.setdefault(c.initiator, []).append((c, ctx))
    if penalised:
        floored = {}
        for u, items in grouped.items():
            rng = sampling.cascade_rng(config.seed, epoch, "floor:" + u)
            floored.update(sampling.apply_min_cascade_floor({u: items}, config.eta_percent, rng,
                                                            config.min_cascades))
        grouped = floored
    return {c.id: ctx for items in grouped.values() for c, ctx in items}


def contexts_jsonl(log: CascadeLog, profiles: ProfileTable, attr: str, config: TrainConfig,
                   population=None, epoch: int = 0) -> str:
    """The contexts ``train`` would sample at ``epoch``, one JSON object per cascade."""
    influencers = tuple(sorted(log.influencers))
    if population is None:
        population = population_counts(profiles, attr, sorted(log.nodes))
    f_pen = influencer_fairness(log, profiles, attr, population, "pooled", influencers)
    contexts = _epoch_contexts(log.cascades, config, epoch, f_pen)
    lines = [
        json.dumps({"cascade": c.id, "initiator": c.initiator, "mode": config.mode,
                    "fairness": f_pen[c.initiator], "context": list(contexts[c.id].participants)})
        for c in log.cascades
    ]
    return "".join(line + "\n" for line in lines)


def train(
    log: CascadeLog,
    profiles: ProfileTable | None,
    attr: str | None,
    config: TrainConfig,
    nodes: Sequence[str] | None = None,
    population=None,
) -> EmbeddingModel:
    """Train an embedding model on ``log`` (the training split).

    ``nodes`` fixes the node universe (default: nodes of ``log``); it must cover
    every user in ``log``. ``population`` gives per-category counts for the
    fairness scores (default: every node in ``nodes`` with a profile).
    """
    if len(log) == 0:
        raise DataError("empty training split")
    influencers = tuple(sorted(log.influencers))
    nodes = tuple(sorted(log.nodes)) if nodes is None else tuple(nodes)
    missing = log.nodes.difference(nodes)
    if missing:
        raise DataError(f"{len(missing)} log users are not in the node universe")

    if profiles is None or attr is None:
        raise DataError("profiles and attr are required for training")
    if population is None:
        population = population_counts(profiles, attr, nodes)
    f_pen = influencer_fairness(log, profiles, attr, population, "pooled", influencers)
    f_target = (
        f_pen
        if config.fairness_target == "pooled"
        else influencer_fairness(log, profiles, attr, population, "avg", influencers)
    )

    rng = np.random.default_rng([config.seed, 0x1A17])
    model = init_model(influencers, nodes, config.embed_dim, rng, mode=config.mode)
    row, col = model.influencer_index, model.node_index
    do_fair = config.mode in ("fac", "fps-fac")
    cascades = log.cascades
    noise = None

    for epoch in range(config.epochs):
        contexts = _epoch_contexts(cascades, config, epoch, f_pen)
        if noise is None:
            noise = build_noise_distribution(contexts.values(), nodes, config.noise_exponent)
        order = np.random.default_rng([config.seed, epoch, 0x5F]).permutation(len(cascades))
        casc_u = np.empty(len(cascades), np.int64)
        fair_t = np.empty(len(cascades), np.float64)
        ptr = np.zeros(len(cascades) + 1, np.int64)
        pair_v = []
        for k, ci in enumerate(order):
            c = cascades[ci]
            ctx = contexts[c.id]
            casc_u[k] = row[c.initiator]
            fair_t[k] = f_target[c.initiator] if do_fair else 0.0
            pair_v.extend(col[v] for v in ctx.participants)
            ptr[k + 1] = len(pair_v)
        pair_v = np.asarray(pair_v, np.int64)
        negs = _draw_negatives(np.random.default_rng([config.seed, epoch, 0x4E]), pair_v,
                               config.negatives, noise)
        nce, n_pairs, fair = run_epoch(model, pair_v, negs, ptr, casc_u, fair_t, do_fair,
                                       config.learning_rate)
        stats = {
            "epoch": epoch,
            "pairs": int(n_pairs),
            "nce_loss": nce / n_pairs if n_pairs else 0.0,
            "fairness_loss": fair / len(cascades) if do_fair else None,
        }
        model.history.append(stats)
        logger.info("epoch %d: %s", epoch, stats)
        if not (np.isfinite(nce) and np.isfinite(fair) and model.all_finite()):
            raise NumericalError(f"non-finite loss or parameters at epoch {epoch}")
    return model


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sII QQQ")


def model_to_bytes(model: EmbeddingModel) -> bytes:
    out = io.BytesIO()
    n_i, dim = model.theta.shape
    out.write(_HEADER.pack(MAGIC, FORMAT_VERSION, MODES.index(model.mode), n_i, len(model.nodes), dim))
    for arr in (model.theta, model.tmat, model.bias_b, model.umat, np.array([model.bias_c])):
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    for table in (model.influencers, model.nodes):
        for ident in table:
            raw = ident.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
    return out.getvalue()


def model_from_bytes(buf: bytes) -> EmbeddingModel:
    if len(buf) < _HEADER.size:
        raise ModelFormatError("truncated model file (header)")
    magic, version, mode_tag, n_i, n_v, dim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}; not a model file")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    if mode_tag >= len(MODES):
        raise ModelFormatError(f"unknown mode tag {mode_tag}")
    pos = _HEADER.size
    arrays = []
    for shape in ((n_i, dim), (dim, n_v), (n_v,), (dim,), (1,)):
        nbytes = 4 * int(np.prod(shape))
        if pos + nbytes > len(buf):
            raise ModelFormatError("truncated model file (parameters)")
        arrays.append(np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos)
                      .astype(np.float32).reshape(shape))
        pos += nbytes
    tables = []
    for count in (n_i, n_v):
        ids = []
        for _ in range(count):
            if pos + 4 > len(buf):
                raise ModelFormatError("truncated model file (id tables)")
            (length,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + length > len(buf):
                raise ModelFormatError("truncated model file (id tables)")
            ids.append(buf[pos : pos + length].decode("utf-8"))
            pos += length
        tables.append(tuple(ids))
    if pos != len(buf):
        raise ModelFormatError("trailing bytes after model payload")
    theta, tmat, b, umat, c = arrays
    return EmbeddingModel(theta, tmat, b, umat, float(c[0]), tables[0], tables[1], MODES[mode_tag])


def save_model(model: EmbeddingModel, path) -> None:
    data = model_to_bytes(model)
    with open(path, "wb") as fh:
        fh.write(data)


def load_model(path) -> EmbeddingModel:
    with open(os.fspath(path), "rb") as fh:
        return model_from_bytes(fh.read())


def inspect_model(model: EmbeddingModel, top: int = 10) -> dict:
    norms = np.linalg.norm(model.theta.astype(np.float64), axis=1)
    order = np.lexsort((np.arange(len(norms)), -norms))[:top]
    return {
        "mode": model.mode,
        "influencers": len(model.influencers),
        "nodes": len(model.nodes),
        "embed_dim": model.embed_dim,
        "theta_norm": {
            "min": float(norms.min()), "max": float(norms.max()), "mean": float(norms.mean()),
        },
        "tmat_norm": float(np.linalg.norm(model.tmat.astype(np.float64))),
        "bias_c": float(model.bias_c),
        "top_influencers": [
            {"id": model.influencers[i], "norm": float(norms[i]),
             "fairness_output": float(model.fairness_output()[i])}
            for i in order
        ],
    }
