import numpy as np
import pytest

from fairim import synth
from fairim.data import Attribute, AttributeSchema, Cascade, CascadeLog, ProfileTable, split_by_time


def make_profiles(mapping, schema=None):
    """``mapping`` is user -> gender label."""
    schema = schema or AttributeSchema((Attribute("gender", ("male", "female")),))
    users = sorted(mapping)
    attr = schema["gender"]
    codes = np.array([[attr.index(mapping[u])] for u in users], dtype=np.int64)
    return ProfileTable(schema, users, codes)


def make_log(rows):
    """``rows`` is a list of (id, [(user, time), ...])."""
    return CascadeLog(tuple(Cascade(cid, tuple(ev)) for cid, ev in rows))


@pytest.fixture
def gender_schema():
    return AttributeSchema((Attribute("gender", ("male", "female")),))


@pytest.fixture
def tiny_world():
    """Two influencers, four equal-sized gender groups of two."""
    profiles = make_profiles({
        "a": "male", "b": "female",
        "m1": "male", "m2": "male", "f1": "female", "f2": "female",
    })
    log = make_log([
        ("c1", [("a", 0), ("m1", 1), ("f1", 2)]),
        ("c2", [("a", 10), ("m2", 11)]),
        ("c3", [("b", 20), ("f1", 21), ("f2", 22)]),
        ("c4", [("b", 30), ("m1", 31)]),
        ("c5", [("a", 40), ("f2", 42), ("m1", 43)]),
    ])
    return log, profiles


@pytest.fixture(scope="session")
def small_synth():
    cfg = synth.preset(
        "weibo-like", n_nodes=600, n_influencers=20, cascades_per_influencer=10,
        edge_prob=1 / 599, activation_prob=0.1, homophily=0.8, influencer_degree=80, seed=3,
    )
    graph, profiles, log = synth.generate(cfg)
    return graph, profiles, log, split_by_time(log)


# -- acceptance reporting ---------------------------------------------------

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail=""):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
