"""Binary case records: schema, parsing, serialization and gold-label joining.

A dataset is a list of fully observed cases over named binary attributes,
one of which is the target whose value is audited. Values are stored as
Python bools on the records; :meth:`Dataset.matrix` gives a cached
``uint8`` array view for numeric work.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ANOMALOUS = "anomalous"
NORMAL = "normal"
GOLD_LABELS = (ANOMALOUS, NORMAL)

CASE_ID_COLUMN = "case_id"

_TRUE = {"1", "true"}
_FALSE = {"0", "false"}


class DatasetError(ValueError):
    """Malformed dataset or label input."""


class UnknownCaseIdWarning(UserWarning):
    """A label row referenced a case_id absent from the dataset."""


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[str, ...]
    target_index: int

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.attributes:
            raise DatasetError("schema needs at least one attribute")
        if any(not isinstance(a, str) or not a for a in self.attributes):
            raise DatasetError("attribute names must be nonempty strings")
        if len(set(self.attributes)) != len(self.attributes):
            raise DatasetError("attribute names must be unique")
        if not 0 <= self.target_index < len(self.attributes):
            raise DatasetError(f"target_index {self.target_index} out of range")

    @property
    def arity(self) -> int:
        return len(self.attributes)

    @property
    def target(self) -> str:
        return self.attributes[self.target_index]

    @property
    def context_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.arity) if i != self.target_index)

    @property
    def context_names(self) -> tuple[str, ...]:
        return tuple(self.attributes[i] for i in self.context_indices)

    def index(self, name: str) -> int:
        try:
            return self.attributes.index(name)
        except ValueError:
            raise DatasetError(f"unknown attribute {name!r}") from None


@dataclass(frozen=True)
class CaseRecord:
    values: tuple[bool, ...]
    case_id: str | None = None
    gold_label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(bool(v) for v in self.values))
        if self.gold_label is not None and self.gold_label not in GOLD_LABELS:
            raise DatasetError(f"gold label must be one of {GOLD_LABELS}, got {self.gold_label!r}")


class Dataset:
    """Immutable collection of records conforming to one schema."""

    def __init__(self, schema: AttributeSchema, records: Iterable[CaseRecord], *, _matrix=None):
        self._schema = schema
        self._records = tuple(records)
        seen = set()
        for pos, rec in enumerate(self._records):
            if len(rec.values) != schema.arity:
                raise DatasetError(
                    f"record {pos} has {len(rec.values)} values, schema arity is {schema.arity}"
                )
            if rec.case_id is not None:
                if rec.case_id in seen:
                    raise DatasetError(f"duplicate case_id {rec.case_id!r}")
                seen.add(rec.case_id)
        if _matrix is not None:
            _matrix.setflags(write=False)
        self._matrix = _matrix

    @property
    def schema(self) -> AttributeSchema:
        return self._schema

    @property
    def records(self) -> tuple[CaseRecord, ...]:
        return self._records

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i) -> CaseRecord:
        return self._records[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self._schema == other._schema and self._records == other._records

    def __repr__(self):
        return f"Dataset({len(self)} records, target={self._schema.target!r})"

    def matrix(self) -> np.ndarray:
        """Read-only ``(n, arity)`` uint8 array of record values."""
        if self._matrix is None:
            m = np.array([r.values for r in self._records], dtype=np.uint8)
            m = m.reshape(len(self._records), self._schema.arity)
            m.setflags(write=False)
            self._matrix = m
        return self._matrix

    def context_matrix(self) -> np.ndarray:
        return self.matrix()[:, list(self._schema.context_indices)]

    def target_vector(self) -> np.ndarray:
        return self.matrix()[:, self._schema.target_index]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = list(indices)
        return Dataset(
            self._schema,
            [self._records[i] for i in idx],
            _matrix=self.matrix()[idx] if idx else np.zeros((0, self._schema.arity), np.uint8),
        )

    def without(self, index: int) -> "Dataset":
        return self.subset([i for i in range(len(self)) if i != index])

    def index_of(self, case_id: str) -> int:
        for i, rec in enumerate(self._records):
            if rec.case_id == case_id:
                return i
        raise KeyError(case_id)

    def replace_records(self, records: Iterable[CaseRecord]) -> "Dataset":
        return Dataset(self._schema, records)


def context_of(record: CaseRecord, schema: AttributeSchema) -> tuple[bool, ...]:
    """Record values with the target position dropped, order preserved."""
    return tuple(v for i, v in enumerate(record.values) if i != schema.target_index)


def _parse_cell(cell: str, line: int, column: int, name: str) -> bool:
    token = cell.strip().lower()
    if token in _TRUE:
        return True
    if token in _FALSE:
        return False
    raise DatasetError(
        f"non-binary value {cell!r} at line {line}, column {column} ({name})"
    )


def _as_text(text) -> str:
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    return text


def parse_dataset(text, target_name: str) -> Dataset:
    """Parse CSV text (or a readable stream) into a :class:`Dataset`.

    The header row is mandatory. A leading ``case_id`` column is optional;
    every other cell must be one of ``0``, ``1``, ``true``, ``false``
    (case-insensitive). Line numbers in errors are 1-based and count the
    header.
    """
    rows = list(csv.reader(io.StringIO(_as_text(text))))
    # csv yields [] for blank lines; keep line numbers aligned with the file
    numbered = [(n, row) for n, row in enumerate(rows, start=1) if row]
    if not numbered:
        raise DatasetError("missing header row at line 1")
    _, header = numbered[0]
    header = [h.strip() for h in header]
    has_ids = header[0] == CASE_ID_COLUMN
    names = header[1:] if has_ids else header
    offset = 1 if has_ids else 0

    seen = {}
    for col, name in enumerate(names, start=1 + offset):
        if not name:
            raise DatasetError(f"empty header name at line 1, column {col}")
        if name in seen:
            raise DatasetError(
                f"duplicate header name {name!r} at line 1, columns {seen[name]} and {col}"
            )
        seen[name] = col
    if target_name not in seen:
        raise DatasetError(f"unknown target {target_name!r}; header has {names}")
    schema = AttributeSchema(tuple(names), names.index(target_name))

    records = []
    for line, row in numbered[1:]:
        if len(row) != len(header):
            raise DatasetError(
                f"ragged row at line {line}: expected {len(header)} cells, got {len(row)}"
            )
        case_id = row[0].strip() if has_ids else None
        values = tuple(
            _parse_cell(cell, line, col, name)
            for col, (cell, name) in enumerate(zip(row[offset:], names), start=1 + offset)
        )
        records.append(CaseRecord(values, case_id=case_id))
    try:
        return Dataset(schema, records)
    except DatasetError as exc:
        raise DatasetError(f"{exc} (while reading data rows)") from None


def serialize_dataset(dataset: Dataset) -> str:
    """CSV text accepted by :func:`parse_dataset`; values written as 0/1."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    with_ids = any(r.case_id is not None for r in dataset)
    if with_ids and not all(r.case_id is not None for r in dataset):
        raise DatasetError("cannot serialize a mix of records with and without case_id")
    header = list(dataset.schema.attributes)
    writer.writerow([CASE_ID_COLUMN, *header] if with_ids else header)
    for rec in dataset:
        cells = ["1" if v else "0" for v in rec.values]
        writer.writerow([rec.case_id, *cells] if with_ids else cells)
    return buf.getvalue()


def parse_labels(text) -> list[tuple[str, str]]:
    """Rows of a ``case_id,label`` CSV; the header row is optional."""
    pairs = []
    for line, row in enumerate(csv.reader(io.StringIO(_as_text(text))), start=1):
        if not row:
            continue
        if line == 1 and [c.strip() for c in row] == [CASE_ID_COLUMN, "label"]:
            continue
        if len(row) != 2:
            raise DatasetError(f"label row at line {line} must have 2 cells, got {len(row)}")
        case_id, label = row[0].strip(), row[1].strip().lower()
        if label not in GOLD_LABELS:
            raise DatasetError(f"malformed label {row[1]!r} at line {line}")
        pairs.append((case_id, label))
    return pairs


def attach_labels(dataset: Dataset, labels) -> Dataset:
    """Return a copy of ``dataset`` whose records carry gold labels.

    Label rows naming an unknown case_id are reported through a single
    :class:`UnknownCaseIdWarning`; they are not fatal.
    """
    pairs = parse_labels(labels)
    if not pairs:
        return dataset
    by_id = dict(pairs)
    known = {r.case_id for r in dataset if r.case_id is not None}
    unmatched = [cid for cid, _ in pairs if cid not in known]
    if unmatched:
        warnings.warn(
            UnknownCaseIdWarning(
                f"{len(unmatched)} label row(s) for unknown case_id: {', '.join(unmatched[:10])}"
                + (" ..." if len(unmatched) > 10 else "")
            ),
            stacklevel=2,
        )
    records = [
        CaseRecord(r.values, r.case_id, by_id[r.case_id]) if r.case_id in by_id else r
        for r in dataset
    ]
    return Dataset(dataset.schema, records, _matrix=dataset.matrix())


def serialize_labels(dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([CASE_ID_COLUMN, "label"])
    for rec in dataset:
        if rec.gold_label is not None:
            writer.writerow([rec.case_id, rec.gold_label])
    return buf.getvalue()


# Target first, then the context attributes grouped as in the source table.
PORT_CATEGORIES: dict[str, tuple[str, ...]] = {
    "target": ("Hospitalization",),
    "demographic": ("Age > 50", "Gender male"),
    "co-existing illness": (
        "Congestive heart failure",
        "Cerebrovascular disease",
        "Neoplastic disease",
        "Renal disease",
        "Liver disease",
    ),
    "physical examination": (
        "Pulse >= 125 per min",
        "Respiratory rate >= 30 per min",
        "Sys. blood pressure < 90 mm Hg",
        "Temperature < 35 C or > 40 C",
    ),
    "lab and radiographic": (
        "Blood urea nitrogen >= 30 mg/dl",
        "Glucose >= 250 mg/dl",
        "Hematocrit < 30 %",
        "Sodium < 130 mmol/l",
        "Art. O2 pressure < 60 mm Hg",
        "Arterial pH < 7.35",
        "Pleural effusion",
    ),
}


def port_schema() -> AttributeSchema:
    """The pneumonia admission schema: ``Hospitalization`` plus 18 findings."""
    names = tuple(name for group in PORT_CATEGORIES.values() for name in group)
    return AttributeSchema(names, names.index("Hospitalization"))
