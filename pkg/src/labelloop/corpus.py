"""Dataset ingestion, pool management and label-distribution statistics.

Pools are plain lists of :class:`TextInstance` and are treated as immutable
after construction; every operation here returns a new list and never
fabricates instances.

File formats:

* delimited-table: CSV with a header row ``id,text,label`` (``label``
  optional), RFC-4180 quoting.
* record-lines: one JSON object per line with keys ``id``, ``text`` and
  optional ``label``.
* label-set file: record-lines with keys ``name`` and ``description``.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConflictError, ParseError, ValidationError

DELIMITED_TABLE = "delimited-table"
RECORD_LINES = "record-lines"

_FORMAT_ALIASES = {
    "delimited-table": DELIMITED_TABLE,
    "csv": DELIMITED_TABLE,
    "record-lines": RECORD_LINES,
    "jsonl": RECORD_LINES,
}


@dataclass(frozen=True)
class TextInstance:
    """One pool item: a stable id, the raw text, and (in simulation corpora)
    the gold label."""

    id: str
    text: str
    gold_label: str | None = None


@dataclass(frozen=True)
class LabelSet:
    """Ordered labels, each with a non-empty textual description."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if len(self.entries) < 2:
            raise ValidationError("a label set needs at least 2 labels")
        names = [name for name, _ in self.entries]
        if len(set(names)) != len(names):
            raise ValidationError("label names must be unique")
        for name, description in self.entries:
            if not name:
                raise ValidationError("label names must be non-empty")
            if not description or not description.strip():
                raise ValidationError(f"label {name!r} has an empty description")

    @classmethod
    def from_names(cls, names) -> "LabelSet":
        """Build a label set using each name as its own description."""
        return cls(tuple((n, n) for n in names))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.entries)

    @property
    def descriptions(self) -> tuple[str, ...]:
        return tuple(desc for _, desc in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def index_of(self, name: str) -> int:
        for i, (n, _) in enumerate(self.entries):
            if n == name:
                return i
        raise ValidationError(f"unknown label {name!r}")


@dataclass(frozen=True)
class DatasetStats:
    """Relative label frequencies and the uniformness score
    U = sum_l |f(l) - 1/|L||, which is 0 iff the distribution is uniform."""

    frequencies: dict[str, float]
    uniformness: float


@dataclass(frozen=True)
class UnbalanceSpec:
    """Exponential-decay down-sampling: the label ranked r by original
    frequency keeps ``n(top) * decay_base**-r`` instances (capped)."""

    decay_base: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not self.decay_base > 1:
            raise ValidationError("decay_base must be > 1")


def _as_text_stream(source) -> io.TextIOBase:
    if isinstance(source, (str,)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase):
        return source
    if hasattr(source, "read"):  # binary file object
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return io.StringIO(data)
    raise ValidationError(f"unsupported source type {type(source)!r}")


def _coerce_id(value, line: int) -> str:
    if isinstance(value, str):
        if not value:
            raise ParseError("empty id", line)
        return value
    if isinstance(value, int):
        return str(value)
    raise ParseError(f"id must be a string, got {type(value).__name__}", line)


def ingest(source, format: str = RECORD_LINES):
    """Parse a dataset file into a pool.

    Returns ``(instances, label_set_or_none)``. The label set is derived
    from observed gold labels in first-occurrence order, using each name as
    its own description; it is None when fewer than two distinct labels
    occur. Duplicate ids raise :class:`ConflictError`, malformed rows raise
    :class:`ParseError` with the line number.
    """
    fmt = _FORMAT_ALIASES.get(format)
    if fmt is None:
        raise ValidationError(f"unknown format {format!r}")
    stream = _as_text_stream(source)

    instances: list[TextInstance] = []
    seen: set[str] = set()
    label_order: list[str] = []

    def add(iid: str, text, label, line: int):
        if not isinstance(text, str) or not text:
            raise ParseError("text must be a non-empty string", line)
        if label is not None and not isinstance(label, str):
            raise ParseError("label must be a string", line)
        if iid in seen:
            raise ConflictError(f"duplicate id {iid!r} (line {line})")
        seen.add(iid)
        if label is not None and label not in label_order:
            label_order.append(label)
        instances.append(TextInstance(id=iid, text=text, gold_label=label))

    if fmt == DELIMITED_TABLE:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1)
        cols = {name.strip(): i for i, name in enumerate(header)}
        if "id" not in cols or "text" not in cols:
            raise ParseError("header must contain 'id' and 'text' columns", 1)
        label_col = cols.get("label")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < len(cols):
                raise ParseError(f"expected {len(cols)} columns, got {len(row)}", line)
            label = None
            if label_col is not None and row[label_col] != "":
                label = row[label_col]
            add(_coerce_id(row[cols["id"]], line), row[cols["text"]], label, line)
    else:
        for line, raw in enumerate(stream, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line)
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise ParseError("each record needs 'id' and 'text' keys", line)
            label = obj.get("label")
            if label == "":
                label = None
            add(_coerce_id(obj["id"], line), obj["text"], label, line)

    label_set = LabelSet.from_names(label_order) if len(label_order) >= 2 else None
    return instances, label_set


def load_label_set(source) -> LabelSet:
    """Read a record-lines label-set file with keys name/description."""
    stream = _as_text_stream(source)
    entries = []
    for line, raw in enumerate(stream, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line)
        if "name" not in obj or "description" not in obj:
            raise ParseError("each record needs 'name' and 'description' keys", line)
        entries.append((str(obj["name"]), str(obj["description"])))
    return LabelSet(tuple(entries))


def _require_fully_labeled(pool, label_set: LabelSet):
    known = set(label_set.names)
    for inst in pool:
        if inst.gold_label is None:
            raise ValidationError(
                f"instance {inst.id!r} has no gold label; operation requires a fully labeled pool"
            )
        if inst.gold_label not in known:
            raise ValidationError(f"instance {inst.id!r} carries unknown label {inst.gold_label!r}")


def compute_stats(pool, label_set: LabelSet) -> DatasetStats:
    """Relative frequencies and uniformness U over a fully labeled pool."""
    if not pool:
        raise ValidationError("cannot compute stats of an empty pool")
    _require_fully_labeled(pool, label_set)
    counts = {name: 0 for name in label_set.names}
    for inst in pool:
        counts[inst.gold_label] += 1
    total = len(pool)
    frequencies = {name: counts[name] / total for name in label_set.names}
    even = 1.0 / len(label_set)
    uniformness = float(sum(abs(f - even) for f in frequencies.values()))
    return DatasetStats(frequencies=frequencies, uniformness=uniformness)


def make_unbalanced(pool, label_set: LabelSet, spec: UnbalanceSpec):
    """Down-sample labels (without replacement) to an exponentially decaying
    size profile.

    Labels are ranked by original count (ties broken by label-set order,
    rank 0 = most frequent); the rank-r label keeps
    ``min(n(r), max(1, round(n(0) * decay_base**-r)))`` instances. Output
    preserves pool order and is deterministic for a given seed.
    """
    _require_fully_labeled(pool, label_set)
    if not pool:
        raise ValidationError("cannot down-sample an empty pool")
    counts = {name: 0 for name in label_set.names}
    for inst in pool:
        counts[inst.gold_label] += 1
    ranked = sorted(
        (name for name in label_set.names if counts[name] > 0),
        key=lambda name: (-counts[name], label_set.index_of(name)),
    )
    top = counts[ranked[0]]
    rng = np.random.default_rng(spec.seed)
    keep_ids: set[str] = set()
    for rank, name in enumerate(ranked):
        target = int(np.floor(top * spec.decay_base ** (-rank) + 0.5))
        target = min(counts[name], max(1, target))
        ids = [inst.id for inst in pool if inst.gold_label == name]
        if target >= len(ids):
            keep_ids.update(ids)
        else:
            chosen = rng.choice(len(ids), size=target, replace=False)
            keep_ids.update(ids[i] for i in chosen)
    return [inst for inst in pool if inst.id in keep_ids]


def cap_pool(pool, max_size: int = 20000, seed: int = 0):
    """Uniform sample without replacement down to ``max_size`` instances;
    identity when the pool is already small enough. Preserves pool order."""
    if max_size <= 0:
        raise ValidationError("max_size must be positive")
    if len(pool) <= max_size:
        return list(pool)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pool), size=max_size, replace=False)
    mask = np.zeros(len(pool), dtype=bool)
    mask[chosen] = True
    return [inst for inst, keep in zip(pool, mask) if keep]
