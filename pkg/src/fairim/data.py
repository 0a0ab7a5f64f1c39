"""Cascades, user profiles, attribute schemas and time-based splits.

All containers are immutable after construction. Parsers accept text or
binary streams as well as paths.
"""

from __future__ import annotations

import io
import json
import math
import os
import statistics
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataError, MissingProfileError


# ---------------------------------------------------------------------------
# attribute schema / profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Attribute:
    name: str
    categories: tuple[str, ...]
    components: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "components", tuple(self.components))
        if not self.name:
            raise DataError("attribute name must be non-empty")
        if len(self.categories) < 2:
            raise DataError(f"attribute {self.name!r} needs at least 2 categories")
        if len(set(self.categories)) != len(self.categories):
            raise DataError(f"attribute {self.name!r} has duplicate category labels")

    def __len__(self):
        return len(self.categories)

    def index(self, label: str) -> int:
        try:
            return self.categories.index(label)
        except ValueError:
            raise DataError(f"unknown category {label!r} for attribute {self.name!r}") from None


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered categorical sensitive attributes."""

    attributes: tuple[Attribute, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise DataError("duplicate attribute names in schema")

    @classmethod
    def from_dict(cls, mapping: dict[str, Sequence[str]]) -> "AttributeSchema":
        return cls(tuple(Attribute(k, tuple(v)) for k, v in mapping.items()))

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def position(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise DataError(f"unknown attribute {name!r}")

    def __getitem__(self, name: str) -> Attribute:
        return self.attributes[self.position(name)]

    def __contains__(self, name) -> bool:
        return name in self.names

    def to_text(self) -> str:
        return "".join(f"{a.name}={','.join(a.categories)}\n" for a in self.attributes)


def parse_schema(source) -> AttributeSchema:
    """Read a ``name=cat1,cat2`` schema file (``#`` starts a comment)."""
    attrs = []
    for lineno, line in enumerate(_text_lines(source), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError("expected 'name=cat1,cat2,...'", line=lineno)
        name, cats = line.split("=", 1)
        labels = tuple(c.strip() for c in cats.split(",") if c.strip())
        try:
            attrs.append(Attribute(name.strip(), labels))
        except DataError as exc:
            raise DataError(str(exc), line=lineno) from None
    return AttributeSchema(tuple(attrs))


class ProfileTable:
    """Per-user category indices, one column per schema attribute.

    Looking up a user that is absent raises :class:`MissingProfileError`.
    """

    def __init__(self, schema: AttributeSchema, users: Sequence[str], codes):
        codes = np.asarray(codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape != (len(users), len(schema.attributes)):
            raise DataError("profile code matrix has wrong shape")
        for j, attr in enumerate(schema.attributes):
            col = codes[:, j]
            if col.size and (col.min() < 0 or col.max() >= len(attr)):
                raise DataError(f"category index out of range for attribute {attr.name!r}")
        self.schema = schema
        self.users = tuple(users)
        self._row = {u: i for i, u in enumerate(self.users)}
        if len(self._row) != len(self.users):
            raise DataError("duplicate user id in profile table")
        codes.setflags(write=False)
        self.codes = codes

    def __len__(self):
        return len(self.users)

    def __contains__(self, user) -> bool:
        return user in self._row

    def __eq__(self, other):
        if not isinstance(other, ProfileTable):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.users == other.users
            and np.array_equal(self.codes, other.codes)
        )

    def category(self, user: str, attr: str) -> int:
        try:
            row = self._row[user]
        except KeyError:
            raise MissingProfileError(user) from None
        return int(self.codes[row, self.schema.position(attr)])

    def label(self, user: str, attr: str) -> str:
        return self.schema[attr].categories[self.category(user, attr)]

    def categories_of(self, users: Iterable[str], attr: str) -> np.ndarray:
        """Vector of category indices for ``users`` under ``attr``."""
        col = self.schema.position(attr)
        rows = []
        for u in users:
            try:
                rows.append(self._row[u])
            except KeyError:
                raise MissingProfileError(u) from None
        return self.codes[np.asarray(rows, dtype=np.int64), col] if rows else np.zeros(0, np.int64)

    def with_codes(self, codes) -> "ProfileTable":
        return ProfileTable(self.schema, self.users, codes)

    def to_tsv(self) -> str:
        out = io.StringIO()
        out.write("\t".join(["user_id", *self.schema.names]) + "\n")
        for i, u in enumerate(self.users):
            labels = [a.categories[c] for a, c in zip(self.schema.attributes, self.codes[i])]
            out.write("\t".join([u, *labels]) + "\n")
        return out.getvalue()


def parse_profiles(source, schema: AttributeSchema) -> ProfileTable:
    lines = _text_lines(source)
    src = _source_name(source)
    header = None
    users, codes = [], []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        cells = line.split("\t")
        if header is None:
            header = cells
            if not header or header[0] != "user_id":
                raise DataError("header must start with 'user_id'", source=src, line=lineno)
            cols = []
            for name in schema.names:
                if name not in header:
                    raise DataError(f"missing column for attribute {name!r}", source=src, line=lineno)
                cols.append(header.index(name))
            continue
        if len(cells) != len(header):
            raise DataError(
                f"expected {len(header)} fields, got {len(cells)}", source=src, line=lineno
            )
        user = cells[0]
        row = []
        for attr, col in zip(schema.attributes, cols):
            label = cells[col]
            if label not in attr.categories:
                raise DataError(
                    f"user {user!r}: unknown label {label!r} for attribute {attr.name!r}",
                    source=src,
                    line=lineno,
                )
            row.append(attr.categories.index(label))
        users.append(user)
        codes.append(row)
    if header is None:
        raise DataError("empty profile file", source=src)
    seen = set()
    for u in users:
        if u in seen:
            raise DataError(f"duplicate user id {u!r}", source=src)
        seen.add(u)
    return ProfileTable(schema, users, np.asarray(codes, dtype=np.int64).reshape(len(users), len(schema.attributes)))


def encode_mixed_radix(indices: Sequence[int], radices: Sequence[int]) -> int:
    code = 0
    for i, r in zip(indices, radices):
        code = code * r + int(i)
    return code


def decode_mixed_radix(code: int, radices: Sequence[int]) -> tuple[int, ...]:
    out = []
    for r in reversed(radices):
        code, rem = divmod(int(code), r)
        out.append(rem)
    return tuple(reversed(out))


def combine_attributes(
    schema: AttributeSchema, names: Sequence[str], profiles: ProfileTable | None = None
) -> tuple[AttributeSchema, ProfileTable | None, str]:
    """Add a cross-product attribute over ``names``.

    Returns the extended schema, the re-indexed profiles (or ``None``) and the
    derived attribute's name. Combining a single attribute returns the inputs
    unchanged.
    """
    names = list(names)
    if not names:
        raise DataError("no attributes to combine")
    if len(set(names)) != len(names):
        raise DataError(f"duplicate attribute in {names}")
    for n in names:
        schema.position(n)
    if len(names) == 1:
        return schema, profiles, names[0]

    comps = [schema[n] for n in names]
    radices = [len(a) for a in comps]
    combined_name = "_".join(names)
    if combined_name in schema:
        new_schema = schema
    else:
        labels = []
        for code in range(math.prod(radices)):
            idx = decode_mixed_radix(code, radices)
            labels.append("_".join(a.categories[i] for a, i in zip(comps, idx)))
        derived = Attribute(combined_name, tuple(labels), components=tuple(names))
        new_schema = AttributeSchema(schema.attributes + (derived,))

    if profiles is None:
        return new_schema, None, combined_name
    cols = [schema.position(n) for n in names]
    code = np.zeros(len(profiles), dtype=np.int64)
    for c, r in zip(cols, radices):
        code = code * r + profiles.codes[:, c]
    if new_schema is schema:
        new_codes = profiles.codes.copy()
        new_codes[:, schema.position(combined_name)] = code
    else:
        new_codes = np.column_stack([profiles.codes, code])
    return new_schema, ProfileTable(new_schema, profiles.users, new_codes), combined_name


# ---------------------------------------------------------------------------
# cascades
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cascade:
    """One diffusion trace. ``events`` is sorted by timestamp; ``events[0]`` is the initiator."""

    id: str
    events: tuple[tuple[str, int], ...]

    def __post_init__(self):
        events = tuple((str(u), int(t)) for u, t in self.events)
        if not events:
            raise DataError(f"cascade {self.id!r} is empty")
        events = tuple(sorted(events, key=lambda e: e[1]))
        users = [u for u, _ in events]
        if len(set(users)) != len(users):
            raise DataError(f"cascade {self.id!r} has duplicate users")
        if len(events) > 1 and events[0][1] == events[1][1]:
            raise DataError(f"cascade {self.id!r} has no unique initiator")
        object.__setattr__(self, "events", events)

    @property
    def initiator(self) -> str:
        return self.events[0][0]

    @property
    def start(self) -> int:
        return self.events[0][1]

    @property
    def participants(self) -> tuple[str, ...]:
        return tuple(u for u, _ in self.events[1:])

    def __len__(self):
        return len(self.events)


@dataclass(frozen=True)
class CascadeLog:
    cascades: tuple[Cascade, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "cascades", tuple(self.cascades))
        by_id = {}
        for c in self.cascades:
            if c.id in by_id:
                raise DataError(f"duplicate cascade id {c.id!r}")
            by_id[c.id] = c
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self):
        return len(self.cascades)

    def __iter__(self):
        return iter(self.cascades)

    def __getitem__(self, cascade_id: str) -> Cascade:
        return self._by_id[cascade_id]

    @cached_property
    def influencers(self) -> frozenset[str]:
        return frozenset(c.initiator for c in self.cascades)

    @cached_property
    def nodes(self) -> frozenset[str]:
        return frozenset(u for c in self.cascades for u, _ in c.events)

    @cached_property
    def by_initiator(self) -> dict[str, tuple[Cascade, ...]]:
        groups: dict[str, list[Cascade]] = {}
        for c in self.cascades:
            groups.setdefault(c.initiator, []).append(c)
        return {u: tuple(cs) for u, cs in groups.items()}

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"id": c.id, "events": [[u, t] for u, t in c.events]}, ensure_ascii=False)
            + "\n"
            for c in self.cascades
        )

    def to_tsv(self) -> str:
        return "".join(
            c.id + "\t" + "\t".join(f"{u},{t}" for u, t in c.events) + "\n" for c in self.cascades
        )


def _dedupe(events, on_duplicate):
    seen = {}
    for u, t in events:
        if u in seen:
            if on_duplicate == "error":
                return None, u
            seen[u] = min(seen[u], t)
        else:
            seen[u] = t
    return list(seen.items()), None


def parse_cascade_log(source, format: str = "jsonl", on_duplicate: str = "error") -> CascadeLog:
    """Parse a cascade log.

    ``on_duplicate`` controls repeated users inside one cascade: ``"error"``
    rejects the line, ``"keep-first"`` keeps the earliest event.
    """
    if format not in ("jsonl", "tsv"):
        raise DataError(f"unknown cascade format {format!r}")
    if on_duplicate not in ("error", "keep-first"):
        raise ValueError("on_duplicate must be 'error' or 'keep-first'")
    src = _source_name(source)
    cascades = []
    seen_ids = set()
    for lineno, line in enumerate(_text_lines(source), 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        try:
            cid, events = (_parse_jsonl_line if format == "jsonl" else _parse_tsv_line)(line)
        except (ValueError, TypeError, KeyError, IndexError) as exc:
            raise DataError(f"malformed line: {exc}", source=src, line=lineno) from None
        if cid in seen_ids:
            raise DataError(f"duplicate cascade id {cid!r}", source=src, line=lineno)
        seen_ids.add(cid)
        if not events:
            raise DataError(f"cascade {cid!r} is empty", source=src, line=lineno)
        events, dup = _dedupe(events, on_duplicate)
        if dup is not None:
            raise DataError(f"cascade {cid!r}: duplicate user {dup!r}", source=src, line=lineno)
        try:
            cascades.append(Cascade(cid, tuple(events)))
        except DataError as exc:
            raise DataError(str(exc), source=src, line=lineno) from None
    return CascadeLog(tuple(cascades))


def _parse_jsonl_line(line):
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    cid = obj["id"]
    if not isinstance(cid, str):
        raise ValueError("'id' must be a string")
    events = []
    for ev in obj["events"]:
        u, t = ev
        if not isinstance(u, str) or isinstance(t, bool) or not isinstance(t, int):
            raise ValueError(f"bad event {ev!r}")
        events.append((u, t))
    return cid, events


def _parse_tsv_line(line):
    cells = line.split("\t")
    cid = cells[0]
    if not cid:
        raise ValueError("empty cascade id")
    events = []
    for cell in cells[1:]:
        u, t = cell.rsplit(",", 1)
        if not u:
            raise ValueError(f"bad event {cell!r}")
        events.append((u, int(t)))
    return cid, events


# ---------------------------------------------------------------------------
# splits and stats
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSplit:
    train: CascadeLog
    validation: CascadeLog
    test: CascadeLog

    @property
    def nodes(self) -> frozenset[str]:
        return self.train.nodes | self.validation.nodes | self.test.nodes

    def all_cascades(self) -> CascadeLog:
        return CascadeLog(self.train.cascades + self.validation.cascades + self.test.cascades)


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floor for train and validation (at least one each), remainder to test."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive fractions, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)!r}")
    if n < 3:
        raise DataError(f"cannot split {n} cascades into 3 parts")
    n_train = max(1, math.floor(ratios[0] * n))
    n_val = max(1, math.floor(ratios[1] * n))
    if n_train + n_val >= n:
        n_train = n - n_val - 1
    return n_train, n_val, n - n_train - n_val


def split_by_time(log: CascadeLog, ratios=(0.6, 0.2, 0.2)) -> DatasetSplit:
    ordered = sorted(log.cascades, key=lambda c: (c.start, c.id))
    n_train, n_val, _ = split_sizes(len(ordered), ratios)
    return DatasetSplit(
        CascadeLog(tuple(ordered[:n_train])),
        CascadeLog(tuple(ordered[n_train : n_train + n_val])),
        CascadeLog(tuple(ordered[n_train + n_val :])),
    )


def dataset_stats(log: CascadeLog) -> dict:
    sizes = [len(c) for c in log.cascades]
    return {
        "influencers": len(log.influencers),
        "nodes": len(log.nodes),
        "cascades": len(log.cascades),
        "median_cascade_size": statistics.median(sizes) if sizes else None,
        "max_cascade_size": max(sizes) if sizes else 0,
        "median_defined": bool(sizes),
    }


# ---------------------------------------------------------------------------
# io helpers
# ---------------------------------------------------------------------------


def _source_name(source):
    if isinstance(source, (str, os.PathLike)):
        return os.fspath(source)
    return getattr(source, "name", None)


def _text_lines(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return fh.read().split("\n")
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data.split("\n")
