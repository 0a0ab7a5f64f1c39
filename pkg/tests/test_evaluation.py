import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from fairim.embedding import TrainConfig, init_model, train
from fairim.evaluation import (
    EvaluationReport,
    ReportRow,
    avg_cascade_baseline,
    concat_models,
    dni,
    evaluate_seeds,
    read_report_csv,
    report_emit,
    spread_fairness,
    sweep,
)
from fairim.fairness import population_counts
from fairim.selection import SeedSet

from conftest import make_log


def test_dni_counts_distinct_participants(tiny_world):
    log, _ = tiny_world
    n, who = dni(["a"], log)
    assert who == {"m1", "m2", "f1", "f2"} and n == 4
    assert dni(["b"], log)[0] == 3
    assert dni(SeedSet(0.0, 0), log)[0] == 0
    assert dni(["nobody"], log)[0] == 0


def test_dni_excludes_initiators_of_other_seeds():
    log = make_log([("c1", [("a", 0), ("b", 1)]), ("c2", [("b", 5), ("x", 6)])])
    n, who = dni(["a", "b"], log)
    # b is counted because it participated in a's cascade
    assert who == {"b", "x"} and n == 2


def test_evaluate_seeds(tiny_world):
    log, profiles = tiny_world
    pop = population_counts(profiles, "gender")
    n, score, groups = evaluate_seeds(["b"], log, profiles, "gender", pop)
    assert n == 3 and groups == {"male": 1, "female": 2}
    expected = 2 / (1 + math.exp((1 / 6) / 0.5))
    assert score.value == pytest.approx(expected)
    assert spread_fairness(set(), profiles, "gender", pop).undefined


def test_avg_cascade_baseline(tiny_world):
    log, _ = tiny_world
    # a: sizes 2,1,2 -> 5/3 ; b: 2,1 -> 1.5
    assert avg_cascade_baseline(log, 1).ids == ["a"]
    assert avg_cascade_baseline(log, 2).ids == ["a", "b"]
    with pytest.raises(ValueError):
        avg_cascade_baseline(log, 3)


def test_concat_doubles_squared_norm():
    m = init_model(3, 5, 4, np.random.default_rng(0))
    c = concat_models([m, m])
    assert c.mode == "concat" and c.embed_dim == 8
    np.testing.assert_allclose(
        np.linalg.norm(c.theta, axis=1), math.sqrt(2) * np.linalg.norm(m.theta, axis=1), rtol=1e-6)
    assert not c.umat.any()
    other = init_model(3, 6, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        concat_models([m, other])
    with pytest.raises(ValueError):
        concat_models([])


@pytest.fixture(scope="module")
def swept(small_synth):
    graph, profiles, log, split = small_synth
    model = train(split.train, profiles, "gender", TrainConfig(embed_dim=8, epochs=2, seed=0),
                  nodes=sorted(split.nodes))
    rep = sweep(split, profiles, ["gender"], {"fac": model}, [2, 4], [0.0, 0.5, 1.0], timing=False)
    return rep, split, profiles, model


def test_sweep_shape_and_determinism(swept):
    rep, split, profiles, model = swept
    assert len(rep) == 6
    assert [(r.k, r.alpha) for r in rep.rows] == [(k, a) for k in (2, 4) for a in (0.0, 0.5, 1.0)]
    again = sweep(split, profiles, ["gender"], {"fac": model}, [2, 4], [0.0, 0.5, 1.0], timing=False)
    assert again.to_csv() == rep.to_csv()
    for r in rep.rows:
        assert r.runtime_ms == 0.0
        assert sum(r.groups.values()) == r.dni


def test_report_csv_round_trip(swept):
    rep = swept[0]
    back = read_report_csv(rep.to_csv())
    assert back.to_csv() == rep.to_csv()
    header = rep.to_csv().splitlines()[0].split(",")
    assert header[:7] == ["mode", "attr", "k", "alpha", "dni", "fairness", "runtime_ms"]


def test_svg_has_one_point_per_row(swept):
    rep = swept[0]
    root = ET.fromstring(rep.to_svg("gender"))
    points = [e for e in root.iter() if e.get("class") == "point"]
    assert len(points) == len(rep)


def test_report_emit(tmp_path):
    rep = EvaluationReport([ReportRow("fps", "gender", 5, 0.2, 10, 0.9, 1.5, {"male": 4, "female": 6})])
    paths = report_emit(rep, tmp_path)
    assert sorted(p.name for p in paths) == ["report.csv", "report.json", "scatter_gender.svg"]
