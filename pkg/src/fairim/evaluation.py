"""Held-out scoring of seed sets, parameter sweeps and report writers."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .data import CascadeLog, DatasetSplit, ProfileTable
from .embedding import EmbeddingModel
from .fairness import FairnessScore, group_counts, influenced_ratios, fairness_score, population_counts
from .selection import SeedSet, SeedStep, build_selection_inputs, fair_greedy

CSV_COLUMNS = ("mode", "attr", "k", "alpha", "dni", "fairness", "runtime_ms")


def dni(seeds, test: CascadeLog) -> tuple[int, set[str]]:
    """Distinct participants over the test cascades started by ``seeds``.

    ``seeds`` is a :class:`SeedSet` or an iterable of influencer ids.
    Initiators are not counted.
    """
    ids = set(seeds.ids if isinstance(seeds, SeedSet) else seeds)
    influenced: set[str] = set()
    for u in ids:
        for c in test.by_initiator.get(u, ()):
            influenced.update(c.participants)
    return len(influenced), influenced


def spread_fairness(influenced: Iterable[str], profiles: ProfileTable, attr: str, population) -> FairnessScore:
    counts = group_counts(influenced, profiles, attr, population)
    return fairness_score(influenced_ratios(counts))


def avg_cascade_baseline(train: CascadeLog, k: int) -> SeedSet:
    """Top-``k`` initiators by mean participant count (ties by id)."""
    if k > len(train.influencers):
        raise ValueError(f"k={k} exceeds the number of influencers ({len(train.influencers)})")
    means = {
        u: float(np.mean([len(c) - 1 for c in cs])) for u, cs in train.by_initiator.items()
    }
    ranked = sorted(means, key=lambda u: (-means[u], u))[:k]
    return SeedSet(float("nan"), k, [SeedStep(u, means[u], means[u], float("nan"), ()) for u in ranked])


def concat_models(models: Sequence[EmbeddingModel]) -> EmbeddingModel:
    """Stack per-attribute embeddings along the embedding axis.

    ``theta`` rows and ``tmat`` columns are concatenated, output biases summed.
    The fairness branch of the result is zero.
    """
    if not models:
        raise ValueError("no models to concatenate")
    first = models[0]
    for m in models[1:]:
        if m.influencers != first.influencers or m.nodes != first.nodes:
            raise ValueError("models must share influencer and node index tables")
    theta = np.concatenate([m.theta for m in models], axis=1)
    tmat = np.concatenate([m.tmat for m in models], axis=0)
    bias = np.sum([m.bias_b.astype(np.float64) for m in models], axis=0).astype(first.bias_b.dtype)
    return EmbeddingModel(
        theta, tmat, bias, np.zeros(theta.shape[1], theta.dtype), 0.0,
        first.influencers, first.nodes, "concat",
    )


@dataclass
class ReportRow:
    mode: str
    attr: str
    k: int
    alpha: float
    dni: int
    fairness: float
    runtime_ms: float
    groups: dict[str, int] = field(default_factory=dict)
    seeds: list[str] = field(default_factory=list)
    fairness_undefined: bool = False


@dataclass
class EvaluationReport:
    rows: list[ReportRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def group_labels(self) -> list[str]:
        labels: list[str] = []
        for r in self.rows:
            for g in r.groups:
                if g not in labels:
                    labels.append(g)
        return labels

    def to_csv(self) -> str:
        labels = self.group_labels()
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(list(CSV_COLUMNS) + [f"group_{g}" for g in labels])
        for r in self.rows:
            w.writerow(
                [r.mode, r.attr, r.k, _fmt(r.alpha), r.dni, _fmt(r.fairness), _fmt(r.runtime_ms)]
                + [r.groups.get(g, "") for g in labels]
            )
        return out.getvalue()

    def to_json(self) -> str:
        rows = [
            {
                "mode": r.mode, "attr": r.attr, "k": r.k, "alpha": r.alpha, "dni": r.dni,
                "fairness": r.fairness, "runtime_ms": r.runtime_ms,
                **{f"group_{g}": n for g, n in r.groups.items()},
                "fairness_undefined": r.fairness_undefined, "seeds": r.seeds,
            }
            for r in self.rows
        ]
        return json.dumps({"columns": list(CSV_COLUMNS), "rows": rows}, indent=1) + "\n"

    def to_svg(self, attr: str | None = None) -> str:
        return scatter_svg([r for r in self.rows if attr is None or r.attr == attr],
                           title=f"fairness vs DNI ({attr})" if attr else "fairness vs DNI")


def read_report_csv(text: str) -> EvaluationReport:
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for rec in reader:
        groups = {k[len("group_"):]: int(v) for k, v in rec.items() if k.startswith("group_") and v != ""}
        rows.append(ReportRow(rec["mode"], rec["attr"], int(rec["k"]), float(rec["alpha"]),
                              int(rec["dni"]), float(rec["fairness"]), float(rec["runtime_ms"]), groups))
    return EvaluationReport(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def scatter_svg(rows: Sequence[ReportRow], title: str = "", width: int = 480, height: int = 360) -> str:
    """Fairness (y) against DNI (x), one circle per row, colour by mode."""
    pad = 50
    xs = [r.dni for r in rows] or [0]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    y_lo, y_hi = 0.0, 1.0
    modes = sorted({r.mode for r in rows})
    colour = {m: _PALETTE[i % len(_PALETTE)] for i, m in enumerate(modes)}
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">DNI</text>',
        f'<text x="15" y="{height / 2}" font-size="12" transform="rotate(-90 15 {height / 2})">fairness</text>',
    ]
    for r in rows:
        cx = pad + (r.dni - x_lo) / (x_hi - x_lo) * (width - 2 * pad)
        cy = height - pad - (r.fairness - y_lo) / (y_hi - y_lo) * (height - 2 * pad)
        lines.append(
            f'<circle class="point" cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{colour[r.mode]}">'
            f"<title>{escape(r.mode)} k={r.k} alpha={r.alpha:g} dni={r.dni} "
            f"fairness={r.fairness:.4f}</title></circle>"
        )
    for i, m in enumerate(modes):
        y = pad + 15 * i
        lines.append(f'<rect x="{width - pad - 70}" y="{y - 8}" width="8" height="8" fill="{colour[m]}"/>')
        lines.append(f'<text x="{width - pad - 58}" y="{y}" font-size="10">{escape(m)}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def evaluate_seeds(seeds, test: CascadeLog, profiles: ProfileTable, attr: str, population):
    n, influenced = dni(seeds, test)
    score = spread_fairness(influenced, profiles, attr, population)
    counts = group_counts(influenced, profiles, attr, population)
    labels = profiles.schema[attr].categories
    return n, score, {labels[i]: c for i, c in enumerate(counts.influenced)}


def sweep(
    splits: DatasetSplit,
    profiles: ProfileTable,
    attrs: Sequence[str],
    models: Mapping[str, EmbeddingModel | Mapping[str, EmbeddingModel]],
    k_values: Sequence[int],
    alpha_values: Sequence[float],
    population: Mapping[str, np.ndarray] | None = None,
    include_bias: bool = False,
    timing: bool = True,
) -> EvaluationReport:
    """One row per (mode, attr, k, alpha).

    ``models`` maps a mode label to a model, or to a per-attribute mapping of
    models. Selection inputs use the training split; scores use the test split.
    ``timing=False`` writes zero runtimes so reports are byte-reproducible.
    """
    report = EvaluationReport()
    nodes = sorted(splits.nodes)
    for mode, entry in models.items():
        for attr in attrs:
            model = entry[attr] if isinstance(entry, Mapping) else entry
            pop = (population or {}).get(attr)
            if pop is None:
                pop = population_counts(profiles, attr, nodes)
            inputs = build_selection_inputs(model, splits.train, profiles, attr, pop, include_bias)
            for k in k_values:
                for alpha in alpha_values:
                    t0 = time.perf_counter()
                    seeds = fair_greedy(inputs, min(k, len(model.influencers)), alpha)
                    elapsed = (time.perf_counter() - t0) * 1000.0 if timing else 0.0
                    n, score, groups = evaluate_seeds(seeds, splits.test, profiles, attr, pop)
                    report.rows.append(ReportRow(
                        mode, attr, int(k), float(alpha), n, score.value, elapsed, groups,
                        seeds.ids, score.undefined,
                    ))
    return report


def report_emit(report: EvaluationReport, out_dir, formats=("csv", "json", "svg")) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        p = out_dir / "report.csv"
        p.write_text(report.to_csv(), encoding="utf-8")
        written.append(p)
    if "json" in formats:
        p = out_dir / "report.json"
        p.write_text(report.to_json(), encoding="utf-8")
        written.append(p)
    if "svg" in formats:
        for attr in sorted({r.attr for r in report.rows}):
            p = out_dir / f"scatter_{attr}.svg"
            p.write_text(report.to_svg(attr), encoding="utf-8")
            written.append(p)
    return written
