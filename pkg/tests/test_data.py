import io
import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairim.data import (
    Attribute,
    AttributeSchema,
    Cascade,
    CascadeLog,
    combine_attributes,
    dataset_stats,
    decode_mixed_radix,
    encode_mixed_radix,
    parse_cascade_log,
    parse_profiles,
    parse_schema,
    split_by_time,
    split_sizes,
)
from fairim.exceptions import DataError, MissingProfileError

from conftest import make_log


# -- schema -----------------------------------------------------------------


def test_schema_parse_and_text_round_trip():
    schema = parse_schema(io.StringIO("# demo\ngender=male,female\nage = young, old\n"))
    assert schema.names == ["gender", "age"]
    assert schema["age"].categories == ("young", "old")
    assert parse_schema(io.StringIO(schema.to_text())) == schema


@pytest.mark.parametrize("text", ["gender=male\n", "gender=male,male\n", "gender\n"])
def test_schema_rejects_bad_attributes(text):
    with pytest.raises(DataError):
        parse_schema(io.StringIO(text))


# -- profiles ---------------------------------------------------------------


def test_profile_row(gender_schema):
    table = parse_profiles(io.StringIO("user_id\tgender\nu1\tfemale\n"), gender_schema)
    assert table.label("u1", "gender") == "female"
    assert table.category("u1", "gender") == 1


def test_profile_unknown_label_names_row_and_attribute(gender_schema):
    with pytest.raises(DataError) as exc:
        parse_profiles(io.StringIO("user_id\tgender\nu1\tfemale\nu2\tunknown\n"), gender_schema)
    assert exc.value.line == 3
    assert "gender" in str(exc.value) and "u2" in str(exc.value)


def test_profile_missing_column(gender_schema):
    with pytest.raises(DataError, match="gender"):
        parse_profiles(io.StringIO("user_id\tage\nu1\told\n"), gender_schema)


def test_profile_duplicate_user(gender_schema):
    with pytest.raises(DataError, match="duplicate"):
        parse_profiles(io.StringIO("user_id\tgender\nu1\tmale\nu1\tfemale\n"), gender_schema)


def test_profile_line_count_oracle(tmp_path, gender_schema):
    rng = random.Random(7)
    path = tmp_path / "profiles.tsv"
    with open(path, "w") as fh:
        fh.write("user_id\tgender\n")
        for i in range(1000):
            fh.write(f"u{i}\t{rng.choice(['male', 'female'])}\n")
    with open(path) as fh:
        n_lines = sum(1 for _ in fh) - 1
    table = parse_profiles(path, gender_schema)
    assert len(table) == n_lines == 1000


def test_missing_profile_is_detectable(gender_schema):
    table = parse_profiles(io.StringIO("user_id\tgender\nu1\tmale\n"), gender_schema)
    assert "u2" not in table
    with pytest.raises(MissingProfileError) as exc:
        table.categories_of(["u1", "u2"], "gender")
    assert exc.value.user == "u2"
    assert isinstance(exc.value, KeyError)


def test_profiles_tsv_round_trip(gender_schema):
    text = "user_id\tgender\nu1\tmale\nu2\tfemale\n"
    table = parse_profiles(io.StringIO(text), gender_schema)
    assert parse_profiles(io.StringIO(table.to_tsv()), gender_schema) == table


# -- cascades ---------------------------------------------------------------


def test_minimal_jsonl_line():
    log = parse_cascade_log(io.StringIO('{"id": "c1", "events": [["a", 10], ["b", 12]]}\n'))
    (c,) = log.cascades
    assert c.initiator == "a" and len(c) == 2


def test_events_are_sorted():
    log = parse_cascade_log(io.StringIO('{"id": "c1", "events": [["b", 12], ["a", 10]]}\n'))
    assert log.cascades[0].initiator == "a"
    assert log.cascades[0].participants == ("b",)


def test_tsv_format():
    log = parse_cascade_log(io.StringIO("c1\ta,10\tb,12\nc2\tx,1\n"), format="tsv")
    assert [c.id for c in log] == ["c1", "c2"]
    assert log["c2"].participants == ()


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text('{"id": "c1", "events": [["a", 1]]}\n{"id": "c2", "events": [["a", "x"]]}\n')
    with pytest.raises(DataError) as exc:
        parse_cascade_log(path)
    assert exc.value.line == 2
    assert str(exc.value).startswith(f"{path}:2:")


def test_duplicate_user_in_cascade():
    line = '{"id": "c1", "events": [["a", 1], ["b", 2], ["b", 5]]}\n'
    with pytest.raises(DataError, match="duplicate user"):
        parse_cascade_log(io.StringIO(line))
    log = parse_cascade_log(io.StringIO(line), on_duplicate="keep-first")
    assert log.cascades[0].events == (("a", 1), ("b", 2))


def test_tied_initiator_rejected():
    with pytest.raises(DataError, match="initiator"):
        Cascade("c", (("a", 1), ("b", 1)))


def test_duplicate_cascade_id():
    text = '{"id": "c1", "events": [["a", 1]]}\n{"id": "c1", "events": [["b", 1]]}\n'
    with pytest.raises(DataError, match="duplicate cascade id"):
        parse_cascade_log(io.StringIO(text))


def test_jsonl_and_tsv_round_trip(tiny_world):
    log, _ = tiny_world
    assert parse_cascade_log(io.StringIO(log.to_jsonl())) == log
    assert parse_cascade_log(io.StringIO(log.to_tsv()), format="tsv") == log


def test_counts_match_independent_scan(tmp_path):
    rng = random.Random(11)
    users = [f"u{i}" for i in range(500)]
    initiators = users[:40]
    lines = []
    for j in range(100):
        init = initiators[j % 40]
        parts = rng.sample([u for u in users if u != init], rng.randint(1, 12))
        events = [[init, 0]] + [[p, k + 1] for k, p in enumerate(parts)]
        lines.append(json.dumps({"id": f"c{j}", "events": events}))
    # make sure every user appears at least once
    missing = set(users) - {e[0] for line in lines for e in json.loads(line)["events"]}
    if missing:
        events = [["u0", 0]] + [[u, k + 1] for k, u in enumerate(sorted(missing))]
        lines.append(json.dumps({"id": "c_fill", "events": events}))
    path = tmp_path / "log.jsonl"
    path.write_text("\n".join(lines) + "\n")

    seen_users, seen_init = set(), set()
    with open(path) as fh:
        for line in fh:
            events = json.loads(line)["events"]
            first = min(events, key=lambda e: e[1])
            seen_init.add(first[0])
            seen_users.update(e[0] for e in events)
    log = parse_cascade_log(path)
    assert len(log.influencers) == len(seen_init) == 40
    assert len(log.nodes) == len(seen_users) == 500
    assert log.influencers <= log.nodes


# -- splits -----------------------------------------------------------------


def _timed_log(n):
    return make_log([(f"c{i}", [(f"u{i}", i), (f"p{i}", i + 100)]) for i in range(1, n + 1)])


def test_split_exact_division():
    split = split_by_time(_timed_log(10))
    assert [c.start for c in split.train] == [1, 2, 3, 4, 5, 6]
    assert [c.start for c in split.validation] == [7, 8]
    assert [c.start for c in split.test] == [9, 10]


def test_split_floor_then_remainder():
    assert split_sizes(7, (0.6, 0.2, 0.2)) == (4, 1, 2)


@pytest.mark.parametrize("ratios", [(1, 0, 0), (0.5, 0.5, 0.0), (0.5, 0.3, 0.3)])
def test_split_rejects_bad_ratios(ratios):
    with pytest.raises(ValueError):
        split_sizes(10, ratios)


def test_split_too_small():
    with pytest.raises(DataError):
        split_by_time(_timed_log(2))


@given(st.lists(st.integers(0, 50), min_size=3, max_size=40))
@settings(max_examples=60, deadline=None)
def test_split_partitions_in_time_order(starts):
    log = make_log([(f"c{i:02d}", [(f"u{i}", t), (f"p{i}", t + 1)]) for i, t in enumerate(starts)])
    split = split_by_time(log)
    parts = [split.train, split.validation, split.test]
    ids = [c.id for p in parts for c in p]
    assert sorted(ids) == sorted(c.id for c in log)
    assert all(len(p) >= 1 for p in parts)
    keys = [[(c.start, c.id) for c in p] for p in parts]
    assert max(keys[0]) < min(keys[1]) and max(keys[1]) < min(keys[2])


# -- combined attributes ----------------------------------------------------


def _schema(**attrs):
    return AttributeSchema(tuple(Attribute(k, tuple(v)) for k, v in attrs.items()))


def test_combine_gender_region_72():
    schema = _schema(gender=["m", "f"], region=[f"r{i}" for i in range(36)])
    new, _, name = combine_attributes(schema, ["gender", "region"])
    assert name == "gender_region"
    assert len(new[name]) == 72
    assert new[name].components == ("gender", "region")


def test_combine_gender_age_12():
    schema = _schema(gender=["m", "f"], age=[str(i) for i in range(6)])
    new, _, name = combine_attributes(schema, ["gender", "age"])
    assert len(new[name]) == 12


def test_combine_single_is_identity(tiny_world):
    _, profiles = tiny_world
    schema, table, name = combine_attributes(profiles.schema, ["gender"], profiles)
    assert schema is profiles.schema and table is profiles and name == "gender"


def test_combined_labels_follow_profiles():
    schema = _schema(gender=["m", "f"], age=["y", "o", "x"])
    from fairim.data import ProfileTable

    table = ProfileTable(schema, ["u1", "u2"], np.array([[1, 2], [0, 1]]))
    _, combined, name = combine_attributes(schema, ["gender", "age"], table)
    assert combined.label("u1", name) == "f_x"
    assert combined.label("u2", name) == "m_o"


@given(st.lists(st.integers(2, 6), min_size=1, max_size=4).flatmap(
    lambda radices: st.tuples(st.just(radices), st.tuples(*[st.integers(0, r - 1) for r in radices]))
))
def test_mixed_radix_round_trip(case):
    radices, idx = case
    code = encode_mixed_radix(idx, radices)
    assert 0 <= code < int(np.prod(radices))
    assert decode_mixed_radix(code, radices) == tuple(idx)


# -- stats ------------------------------------------------------------------


def test_stats_empty():
    stats = dataset_stats(CascadeLog(()))
    assert stats["cascades"] == 0 and stats["nodes"] == 0 and stats["influencers"] == 0
    assert stats["median_cascade_size"] is None and stats["median_defined"] is False


def test_stats_sizes():
    rows = []
    for j, size in enumerate((2, 50, 100)):
        rows.append((f"c{j}", [(f"i{j}", 0)] + [(f"v{j}_{k}", k + 1) for k in range(size - 1)]))
    stats = dataset_stats(make_log(rows))
    assert stats["median_cascade_size"] == 50 and stats["max_cascade_size"] == 100


def test_stats_match_generator(small_synth):
    _, _, log, _ = small_synth
    stats = dataset_stats(log)
    assert stats["cascades"] == 20 * 10
    assert stats["influencers"] == 20
    assert stats["max_cascade_size"] == max(len(c) for c in log)
