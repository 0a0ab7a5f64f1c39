"""``fairim`` command-line interface.

Option precedence: built-in defaults < ``--config`` file < environment
(``FIM_SEED``, ``FIM_THREADS``) < command-line flags. Every command echoes
its fully resolved options to ``run_config.resolved`` next to its output.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import data as dm
from . import synth
from .embedding import TrainConfig, contexts_jsonl, inspect_model, load_model, save_model, train
from .evaluation import ReportRow, avg_cascade_baseline, evaluate_seeds, report_emit, sweep
from .exceptions import DataError, FairIMError, ModelFormatError, NumericalError
from .fairness import population_counts
from .selection import (
    build_selection_inputs,
    fair_greedy,
    load_seed_set,
    naive_fair_greedy,
    save_seed_set,
)

logger = logging.getLogger("fairim")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(FairIMError):
    pass


# ---------------------------------------------------------------------------
# option tables: dest -> (flag, type, default, help)
# ---------------------------------------------------------------------------


def _floats(s):
    return [float(x) for x in str(s).split(",") if x.strip()]


def _ints(s):
    return [int(x) for x in str(s).split(",") if x.strip()]


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


SEED = ("--seed", int, 0, "random seed")
THREADS = ("--threads", int, 1, "worker threads (only 1 is deterministic)")

OPTIONS = {
    "ingest": {
        "cascades": ("--cascades", str, None, "cascade file"),
        "profiles": ("--profiles", str, None, "profiles TSV"),
        "schema": ("--schema", str, None, "schema file"),
        "out": ("--out", str, None, "output directory"),
        "format": ("--format", str, "jsonl", "cascade format: jsonl or tsv"),
        "ratios": ("--ratios", _floats, [0.6, 0.2, 0.2], "train,val,test fractions"),
        "dedupe": ("--dedupe", _bool, False, "keep the earliest event of repeated users"),
    },
    "train": {
        "data": ("--data", str, None, "ingested data directory"),
        "mode": ("--mode", str, "fac", "fps, fac or fps-fac"),
        "attr": ("--attr", str, "gender", "attribute, or comma-separated attributes to combine"),
        "dim": ("--dim", int, 50, "embedding dimension"),
        "epochs": ("--epochs", int, 10, "training epochs"),
        "lr": ("--lr", float, 0.1, "learning rate"),
        "eta": ("--eta", float, 120.0, "oversampling percentage"),
        "neg": ("--neg", int, 10, "negatives per positive pair"),
        "noise_exponent": ("--noise-exponent", float, 0.75, "unigram exponent of the noise distribution"),
        "min_cascades": ("--min-cascades", int, 3, "per-influencer cascade floor in fps"),
        "fairness_target": ("--fairness-target", str, "pooled", "pooled or avg"),
        "seed": SEED,
        "threads": THREADS,
        "dump_contexts": ("--dump-contexts", str, None, "write epoch-0 contexts as JSONL here"),
        "out": ("--out", str, None, "model file"),
    },
    "select": {
        "model": ("--model", str, None, "model file"),
        "data": ("--data", str, None, "ingested data directory"),
        "attr": ("--attr", str, "gender", "attribute(s) for the fairness vector"),
        "k": ("--k", int, 10, "number of seeds"),
        "alpha": ("--alpha", float, 0.2, "aversion to unfairness in [0, 1]"),
        "include_bias": ("--include-bias", _bool, False, "add output bias to diffusion logits"),
        "check_naive": ("--check-naive", _bool, False, "verify against the non-lazy selector"),
        "seed": SEED,
        "threads": THREADS,
        "out": ("--out", str, None, "seed file (JSON)"),
    },
    "evaluate": {
        "seeds": ("--seeds", str, None, "seed file"),
        "data": ("--data", str, None, "ingested data directory"),
        "attr": ("--attr", str, "gender", "comma-separated attributes to score"),
        "seed": SEED,
        "threads": THREADS,
        "out": ("--out", str, None, "result JSON (default: stdout)"),
    },
    "sweep": {
        "data": ("--data", str, None, "ingested data directory"),
        "model": ("--model", str, None, "mode=path[,mode=path...] or a single model path"),
        "attr": ("--attr", str, "gender", "comma-separated attributes (a+b combines)"),
        "k": ("--k", _ints, [5, 10, 20], "seed-set sizes"),
        "alpha": ("--alpha", _floats, [0.0, 0.2, 1.0], "alpha values"),
        "include_bias": ("--include-bias", _bool, False, "add output bias to diffusion logits"),
        "baseline": ("--baseline", _bool, False, "add the average-cascade-size baseline"),
        "timing": ("--timing", _bool, True, "record runtimes (disable for byte-identical reports)"),
        "seed": SEED,
        "threads": THREADS,
        "out": ("--out", str, None, "output directory"),
    },
    "synth": {
        "preset": ("--preset", str, "weibo-like", "weibo-like or digg-like"),
        "nodes": ("--nodes", int, 5000, "number of graph nodes"),
        "influencers": ("--influencers", int, 50, "number of cascade initiators"),
        "cascades_per_influencer": ("--cascades-per-influencer", int, 10, "cascades per initiator"),
        "edge_prob": ("--edge-prob", float, None, "edge probability (default: 10/(n-1))"),
        "activation_prob": ("--activation-prob", float, 0.1, "IC activation probability"),
        "homophily": ("--homophily", float, 0.5, "homophily strength in [0, 1]"),
        "seed": SEED,
        "threads": THREADS,
        "out": ("--out", str, None, "output directory"),
    },
    "flip": {
        "cascades": ("--cascades", str, None, "cascade JSONL"),
        "profiles": ("--profiles", str, None, "profiles TSV"),
        "schema": ("--schema", str, None, "schema file"),
        "attr": ("--attr", str, "gender", "attribute to perturb"),
        "from_category": ("--from", str, "male", "category to flip from"),
        "to_category": ("--to", str, "female", "category to flip to"),
        "frac_influencers": ("--frac-influencers", float, 0.5, "share of initiators in the working group"),
        "frac_participants": ("--frac-participants", float, 0.5, "share of eligible participants flipped"),
        "seed": SEED,
        "threads": THREADS,
        "out": ("--out", str, None, "output directory"),
    },
    "stats": {
        "data": ("--data", str, None, "ingested data directory, or a cascade file"),
    },
    "inspect-model": {
        "model": ("--model", str, None, "model file"),
        "top": ("--top", int, 10, "rows to list"),
        "out": ("--out", str, None, "result JSON (default: stdout)"),
    },
}

REQUIRED = {
    "ingest": ("cascades", "profiles", "schema", "out"),
    "train": ("data", "out"),
    "select": ("model", "data", "out"),
    "evaluate": ("seeds", "data"),
    "sweep": ("data", "model", "out"),
    "synth": ("out",),
    "flip": ("cascades", "profiles", "schema", "out"),
    "stats": ("data",),
    "inspect-model": ("model",),
}


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; dashes in keys equal underscores."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve(command: str, args: argparse.Namespace, env=None) -> dict:
    env = os.environ if env is None else env
    table = OPTIONS[command]
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(cfg) - set(table)
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
    env_map = {"seed": "FIM_SEED", "threads": "FIM_THREADS"}
    resolved = {}
    for dest, (_, typ, default, _) in table.items():
        value = getattr(args, dest)
        if value is None and dest in env_map and env.get(env_map[dest]):
            value = typ(env[env_map[dest]])
        if value is None and dest in cfg:
            value = typ(cfg[dest])
        if value is None:
            value = default
        resolved[dest] = value
    missing = [d for d in REQUIRED[command] if resolved.get(d) in (None, "")]
    if missing:
        raise UsageError(f"{command}: missing required option(s): "
                         + ", ".join(table[d][0] for d in missing))
    return resolved


def _fmt_value(v):
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return "" if v is None else str(v)


def write_resolved(directory, command: str, resolved: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"# fairim {command}"] + [f"{k} = {_fmt_value(v)}" for k, v in sorted(resolved.items())]
    (directory / "run_config.resolved").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _check_threads(opts):
    if opts.get("threads", 1) > 1:
        logger.warning("parallel training is not available; running single-threaded")


# ---------------------------------------------------------------------------
# data directory helpers
# ---------------------------------------------------------------------------


def load_dataset(directory):
    d = Path(directory)
    schema = dm.parse_schema(d / "schema.txt")
    profiles = dm.parse_profiles(d / "profiles.tsv", schema)
    split = dm.DatasetSplit(
        dm.parse_cascade_log(d / "train.jsonl"),
        dm.parse_cascade_log(d / "val.jsonl"),
        dm.parse_cascade_log(d / "test.jsonl"),
    )
    return schema, profiles, split


def resolve_attr(schema, profiles, attr_spec: str):
    names = [a.strip() for a in attr_spec.replace("+", ",").split(",") if a.strip()]
    for n in names:
        if n not in schema:
            raise DataError(f"unknown attribute {n!r}; schema has {schema.names}")
    schema, profiles, name = dm.combine_attributes(schema, names, profiles)
    return schema, profiles, name


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_ingest(o):
    out = Path(o["out"])
    schema = dm.parse_schema(o["schema"])
    profiles = dm.parse_profiles(o["profiles"], schema)
    log = dm.parse_cascade_log(o["cascades"], o["format"],
                               "keep-first" if o["dedupe"] else "error")
    missing = sorted(v for v in log.nodes if v not in profiles)
    if missing:
        logger.warning("%d cascade users have no profile (e.g. %s)", len(missing), missing[0])
    split = dm.split_by_time(log, tuple(o["ratios"]))
    out.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", split.train), ("val", split.validation), ("test", split.test)):
        (out / f"{name}.jsonl").write_text(part.to_jsonl(), encoding="utf-8")
    (out / "profiles.tsv").write_text(profiles.to_tsv(), encoding="utf-8")
    (out / "schema.txt").write_text(schema.to_text(), encoding="utf-8")
    stats = dm.dataset_stats(log)
    stats["splits"] = {n: len(p) for n, p in (("train", split.train), ("val", split.validation),
                                                ("test", split.test))}
    stats["unprofiled_users"] = len(missing)
    (out / "stats.json").write_text(json.dumps(stats, indent=1) + "\n", encoding="utf-8")
    manifest = {n: [c.id for c in p] for n, p in (("train", split.train), ("val", split.validation),
                                                   ("test", split.test))}
    (out / "manifest.json").write_text(json.dumps(manifest) + "\n", encoding="utf-8")
    write_resolved(out, "ingest", o)
    print(_stats_table(stats))


def _stats_table(stats):
    rows = [
        ("influencers", stats["influencers"]),
        ("influencees", stats["nodes"]),
        ("posts (cascades)", stats["cascades"]),
        ("median size of cascades", stats["median_cascade_size"]),
        ("maximal size of cascades", stats["max_cascade_size"]),
    ]
    return "\n".join(f"{k:<26}{v}" for k, v in rows)


def cmd_train(o):
    _check_threads(o)
    schema, profiles, split = load_dataset(o["data"])
    if len(split.train) == 0:
        raise DataError("empty train split")
    schema, profiles, attr = resolve_attr(schema, profiles, o["attr"])
    nodes = sorted(split.nodes)
    config = TrainConfig(
        embed_dim=o["dim"], epochs=o["epochs"], learning_rate=o["lr"], negatives=o["neg"],
        eta_percent=o["eta"], mode=o["mode"], seed=o["seed"], noise_exponent=o["noise_exponent"],
        min_cascades=o["min_cascades"], fairness_target=o["fairness_target"],
    )
    population = population_counts(profiles, attr, nodes)
    if o["dump_contexts"]:
        Path(o["dump_contexts"]).write_text(
            contexts_jsonl(split.train, profiles, attr, config, population), encoding="utf-8")
    model = train(split.train, profiles, attr, config, nodes=nodes, population=population)
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    write_resolved(out.parent, "train", o)
    for h in model.history:
        logger.info("epoch %(epoch)d nce=%(nce_loss).4f", h)
    print(f"trained {o['mode']} model on attribute {attr!r}: "
          f"|I|={len(model.influencers)} |V|={len(model.nodes)} |E|={model.embed_dim} -> {out}")


def cmd_select(o):
    _check_threads(o)
    schema, profiles, split = load_dataset(o["data"])
    schema, profiles, attr = resolve_attr(schema, profiles, o["attr"])
    model = load_model(o["model"])
    pop = population_counts(profiles, attr, sorted(split.nodes))
    inputs = build_selection_inputs(model, split.train, profiles, attr, pop, o["include_bias"])
    if not 0.0 <= o["alpha"] <= 1.0:
        raise UsageError("--alpha must lie in [0, 1]")
    if o["k"] > len(model.influencers) or o["k"] < 0:
        raise UsageError(f"--k {o['k']} exceeds the number of influencers ({len(model.influencers)})")
    seeds = fair_greedy(inputs, o["k"], o["alpha"])
    if o["check_naive"]:
        ref = naive_fair_greedy(inputs, o["k"], o["alpha"])
        if ref.ids != seeds.ids:
            raise NumericalError("lazy and naive selection disagree")
    out = Path(o["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_seed_set(seeds, out)
    write_resolved(out.parent, "select", o)
    print(" ".join(seeds.ids))


def cmd_evaluate(o):
    schema, profiles, split = load_dataset(o["data"])
    seeds = load_seed_set(o["seeds"])
    nodes = sorted(split.nodes)
    result = {"k": len(seeds), "alpha": seeds.alpha, "seeds": seeds.ids, "attributes": {}}
    for spec in o["attr"].split(","):
        sch, prof, attr = resolve_attr(schema, profiles, spec)
        pop = population_counts(prof, attr, nodes)
        n, score, groups = evaluate_seeds(seeds, split.test, prof, attr, pop)
        result["dni"] = n
        result["attributes"][attr] = {"fairness": score.value, "cv": score.cv,
                                      "undefined": score.undefined, "groups": groups}
    text = json.dumps(result, indent=1) + "\n"
    if o["out"]:
        out = Path(o["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        write_resolved(out.parent, "evaluate", o)
    else:
        sys.stdout.write(text)


def _parse_models(spec: str):
    models = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" in part:
            mode, path = part.split("=", 1)
        else:
            path, mode = part, None
        model = load_model(path)
        models[mode or model.mode] = model
    return models


def cmd_sweep(o):
    _check_threads(o)
    schema, profiles, split = load_dataset(o["data"])
    nodes = sorted(split.nodes)
    attrs, pops = [], {}
    for spec in o["attr"].split(","):
        schema, profiles, attr = resolve_attr(schema, profiles, spec.replace("+", ","))
        attrs.append(attr)
        pops[attr] = population_counts(profiles, attr, nodes)
    models = _parse_models(o["model"])
    report = sweep(split, profiles, attrs, models, o["k"], o["alpha"], pops,
                   o["include_bias"], o["timing"])
    if o["baseline"]:
        for attr in attrs:
            for k in o["k"]:
                seeds = avg_cascade_baseline(split.train, min(k, len(split.train.influencers)))
                n, score, groups = evaluate_seeds(seeds, split.test, profiles, attr, pops[attr])
                report.rows.append(ReportRow("avg-cascades", attr, k, 0.0, n, score.value, 0.0,
                                             groups, seeds.ids, score.undefined))
    report_emit(report, o["out"])
    write_resolved(o["out"], "sweep", o)
    print(f"{len(report)} rows -> {o['out']}")


def cmd_synth(o):
    overrides = dict(
        n_nodes=o["nodes"], n_influencers=o["influencers"],
        cascades_per_influencer=o["cascades_per_influencer"],
        edge_prob=o["edge_prob"] if o["edge_prob"] is not None else min(1.0, 10.0 / max(o["nodes"] - 1, 1)),
        activation_prob=o["activation_prob"], homophily=o["homophily"], seed=o["seed"],
    )
    config = synth.preset(o["preset"], **overrides)
    graph, profiles, log = synth.generate(config)
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "cascades.jsonl").write_text(log.to_jsonl(), encoding="utf-8")
    (out / "profiles.tsv").write_text(profiles.to_tsv(), encoding="utf-8")
    (out / "schema.txt").write_text(profiles.schema.to_text(), encoding="utf-8")
    (out / "graph.tsv").write_text(graph.to_edgelist(), encoding="utf-8")
    stats = dm.dataset_stats(log)
    stats["graph_edges"] = graph.n_edges
    stats["marginals"] = {a: synth.category_shares(profiles, a) for a in profiles.schema.names}
    (out / "stats.json").write_text(json.dumps(stats, indent=1) + "\n", encoding="utf-8")
    write_resolved(out, "synth", o)
    print(_stats_table(stats))


def cmd_flip(o):
    schema = dm.parse_schema(o["schema"])
    profiles = dm.parse_profiles(o["profiles"], schema)
    log = dm.parse_cascade_log(o["cascades"])
    flipped, audit = synth.flip_attribute(
        log, profiles, o["attr"], o["from_category"], o["to_category"],
        np.random.default_rng(o["seed"]), o["frac_influencers"], o["frac_participants"],
    )
    out = Path(o["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "profiles.tsv").write_text(flipped.to_tsv(), encoding="utf-8")
    (out / "schema.txt").write_text(schema.to_text(), encoding="utf-8")
    shutil.copyfile(o["cascades"], out / "cascades.jsonl")
    audit["shares_before"] = synth.category_shares(profiles, o["attr"], log.nodes)
    audit["shares_after"] = synth.category_shares(flipped, o["attr"], log.nodes)
    (out / "audit.json").write_text(json.dumps(audit, indent=1) + "\n", encoding="utf-8")
    write_resolved(out, "flip", o)
    print(f"flipped {len(audit['flipped'])} users; {o['attr']} shares now {audit['shares_after']}")


def cmd_stats(o):
    path = Path(o["data"])
    if path.is_dir():
        _, _, split = load_dataset(path)
        log = split.all_cascades()
    else:
        log = dm.parse_cascade_log(path, "tsv" if path.suffix == ".tsv" else "jsonl")
    print(_stats_table(dm.dataset_stats(log)))


def cmd_inspect_model(o):
    info = inspect_model(load_model(o["model"]), o["top"])
    text = json.dumps(info, indent=1) + "\n"
    if o["out"]:
        Path(o["out"]).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "select": cmd_select,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
    "flip": cmd_flip,
    "stats": cmd_stats,
    "inspect-model": cmd_inspect_model,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairim", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, table in OPTIONS.items():
        p = sub.add_parser(name, help=COMMANDS[name].__doc__)
        p.add_argument("--config", help="key = value configuration file")
        for dest, (flag, typ, default, help_) in table.items():
            shown = _fmt_value(default)
            p.add_argument(flag, dest=dest, type=typ, default=None,
                           help=f"{help_} (default: {shown})" if shown else help_)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args.command, args)
        COMMANDS[args.command](opts)
    except UsageError as exc:
        print(f"fairim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"fairim: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ModelFormatError, FileNotFoundError) as exc:
        print(f"fairim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"fairim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
