"""Feature schema, dataset containers and file I/O.

Two on-disk formats are supported:

* CSV with a header of the 87 schema names followed by ``label``.  Values are
  written with Python's shortest round-trip ``repr`` so a CSV round trip is
  exact.
* ``ARDS`` binary: 4 magic bytes, ``u32`` version, ``u64`` row count, then one
  packed little-endian record per row (87 x ``f4`` + ``u1`` label).
"""

from __future__ import annotations

import csv
import enum
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

N_FEATURES = 87
N_CONSTITUENTS = 29

ARDS_MAGIC = b"ARDS"
ARDS_VERSION = 1
ARDS_HEADER = struct.Struct("<4sIQ")
RECORD_DTYPE = np.dtype([("x", "<f4", (N_FEATURES,)), ("y", "u1")])

__all__ = [
    "N_FEATURES",
    "FeatureType",
    "FeatureSchema",
    "Sample",
    "Dataset",
    "DataError",
    "SchemaMismatchError",
    "ParseError",
    "LabelError",
    "FormatError",
    "default_schema",
    "load_schema_file",
    "write_schema_file",
    "load_csv",
    "write_csv",
    "read_binary",
    "write_binary",
    "BinaryWriter",
    "CsvWriter",
    "iter_binary_chunks",
    "binary_row_count",
    "load_dataset",
    "open_writer",
    "concat",
]


class DataError(Exception):
    """Base class for dataset construction and I/O failures."""


class SchemaMismatchError(DataError):
    pass


class ParseError(DataError):
    pass


class LabelError(DataError):
    pass


class FormatError(DataError):
    pass


class FeatureType(enum.IntEnum):
    PT = 0
    ETA = 1
    PHI = 2


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered (name, type) columns; always 87 long with unique names."""

    columns: tuple[tuple[str, FeatureType], ...]

    def __post_init__(self):
        cols = tuple((str(n), FeatureType(t)) for n, t in self.columns)
        object.__setattr__(self, "columns", cols)
        if len(cols) != N_FEATURES:
            raise SchemaMismatchError(f"schema must have {N_FEATURES} columns, got {len(cols)}")
        names = [n for n, _ in cols]
        if any(not n for n in names):
            raise SchemaMismatchError("schema column names must be nonempty")
        if len(set(names)) != len(names):
            raise SchemaMismatchError("schema column names must be unique")

    def __len__(self):
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    @property
    def type_index(self) -> np.ndarray:
        """Integer feature type per column, shape (87,)."""
        return np.array([int(t) for _, t in self.columns], dtype=np.intp)

    def to_json(self) -> list[list[str]]:
        return [[n, t.name] for n, t in self.columns]

    @classmethod
    def from_json(cls, obj) -> "FeatureSchema":
        try:
            return cls(tuple((n, FeatureType[t]) for n, t in obj))
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaMismatchError(f"bad schema document: {exc}") from exc


def default_schema() -> FeatureSchema:
    """Interleaved ``pT_i, eta_i, phi_i`` for constituents 0..28."""
    cols = []
    for i in range(N_CONSTITUENTS):
        cols.append((f"pT_{i}", FeatureType.PT))
        cols.append((f"eta_{i}", FeatureType.ETA))
        cols.append((f"phi_{i}", FeatureType.PHI))
    return FeatureSchema(tuple(cols))


def load_schema_file(path) -> FeatureSchema:
    """Read a schema override file: one ``name,TYPE`` line per column."""
    cols = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2 or parts[1] not in FeatureType.__members__:
                raise SchemaMismatchError(f"{path}:{lineno}: expected 'name,PT|ETA|PHI', got {line!r}")
            cols.append((parts[0], FeatureType[parts[1]]))
    return FeatureSchema(tuple(cols))


def write_schema_file(schema: FeatureSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for n, t in schema.columns:
            fh.write(f"{n},{t.name}\n")


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64).reshape(-1)
        if x.shape != (N_FEATURES,):
            raise SchemaMismatchError(f"sample must have {N_FEATURES} features, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise ParseError("sample features must be finite")
        if self.label not in (0, 1):
            raise LabelError(f"label must be 0 or 1, got {self.label!r}")
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "label", int(self.label))


class Dataset:
    """Immutable feature matrix ``X`` (n, 87) float64 plus labels ``y`` (n,) uint8."""

    __slots__ = ("schema", "X", "y")

    def __init__(self, schema: FeatureSchema, X, y, *, copy: bool = True):
        X = np.array(X, dtype=np.float64, copy=copy)
        y = np.array(y, copy=copy)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, N_FEATURES)
        if X.ndim != 2 or X.shape[1] != len(schema):
            raise SchemaMismatchError(f"feature matrix must be (n, {len(schema)}), got {X.shape}")
        if y.shape != (X.shape[0],):
            raise SchemaMismatchError(f"label vector must have length {X.shape[0]}, got {y.shape}")
        if not np.all(np.isfinite(X)):
            r, c = np.argwhere(~np.isfinite(X))[0]
            raise ParseError(f"non-finite value at row {r + 1}, column {schema.names[c]}")
        if y.size and not np.all((y == 0) | (y == 1)):
            r = int(np.flatnonzero((y != 0) & (y != 1))[0])
            raise LabelError(f"label must be 0 or 1 at row {r + 1}, got {y[r]!r}")
        y = y.astype(np.uint8, copy=False)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @classmethod
    def from_samples(cls, schema: FeatureSchema, samples: Iterable[Sample]) -> "Dataset":
        samples = list(samples)
        X = np.array([s.features for s in samples], dtype=np.float64).reshape(len(samples), -1)
        if not samples:
            X = np.empty((0, len(schema)))
        y = np.array([s.label for s in samples], dtype=np.uint8)
        return cls(schema, X, y, copy=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> Sample:
        return Sample(self.X[i], int(self.y[i]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(self.n):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    def __repr__(self):
        return f"Dataset(n={self.n})"

    def subset(self, idx) -> "Dataset":
        return Dataset(self.schema, self.X[idx], self.y[idx], copy=False)


def concat(a: Dataset, b: Dataset, *more: Dataset) -> Dataset:
    parts = (a, b) + more
    for p in parts[1:]:
        if p.schema != a.schema:
            raise SchemaMismatchError("cannot concatenate datasets with different schemas")
    X = np.concatenate([p.X for p in parts])
    y = np.concatenate([p.y for p in parts])
    return Dataset(a.schema, X, y, copy=False)


# -- CSV -------------------------------------------------------------------


def _check_header(header: Sequence[str], schema: FeatureSchema, path) -> None:
    expected = schema.names + ["label"]
    if list(header) != expected:
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        raise SchemaMismatchError(
            f"{path}: header does not match schema (missing={missing[:5]}, extra={extra[:5]})"
        )


def _parse_rows(rows: list[list[str]], schema: FeatureSchema, path, row_offset: int = 0):
    width = len(schema) + 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise SchemaMismatchError(
                f"{path}: row {row_offset + i + 1} has {len(row)} cells, expected {width}"
            )
    try:
        X = np.array([r[:-1] for r in rows], dtype=np.float64).reshape(len(rows), len(schema))
    except ValueError:
        X = None
    if X is None or not np.all(np.isfinite(X)):
        # slow path only to locate the offending cell
        names = schema.names
        for i, row in enumerate(rows):
            for j, cell in enumerate(row[:-1]):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {row_offset + i + 1}, column {names[j]}: not a number: {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(
                        f"{path}: row {row_offset + i + 1}, column {names[j]}: non-finite value {cell!r}"
                    )
    y = np.empty(len(rows), dtype=np.uint8)
    for i, row in enumerate(rows):
        cell = row[-1].strip()
        try:
            lab = int(cell)
        except ValueError:
            raise LabelError(f"{path}: row {row_offset + i + 1}: label {cell!r} is not an integer") from None
        if lab not in (0, 1):
            raise LabelError(f"{path}: row {row_offset + i + 1}: label must be 0 or 1, got {lab}")
        y[i] = lab
    return X, y


def load_csv(path, schema: FeatureSchema | None = None) -> Dataset:
    schema = schema or default_schema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatchError(f"{path}: empty file, no header") from None
        _check_header(header, schema, path)
        rows = [r for r in reader if r]
    if not rows:
        return Dataset(schema, np.empty((0, len(schema))), np.empty(0, dtype=np.uint8))
    X, y = _parse_rows(rows, schema, path)
    return Dataset(schema, X, y, copy=False)


def iter_csv_chunks(path, schema: FeatureSchema | None = None, chunk_rows: int = 65536):
    schema = schema or default_schema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaMismatchError(f"{path}: empty file, no header")
        _check_header(header, schema, path)
        buf, done = [], 0
        for r in reader:
            if not r:
                continue
            buf.append(r)
            if len(buf) == chunk_rows:
                yield _parse_rows(buf, schema, path, done)
                done += len(buf)
                buf = []
        if buf:
            yield _parse_rows(buf, schema, path, done)


def _format_row(x: np.ndarray, label: int) -> str:
    return ",".join(map(repr, x.tolist())) + f",{int(label)}\n"


class CsvWriter:
    """Streaming CSV sink; ``write(X, y)`` appends rows."""

    def __init__(self, path, schema: FeatureSchema):
        self.path = Path(path)
        self.schema = schema
        self.rows = 0
        try:
            self._fh = open(self.path, "w", encoding="utf-8", newline="")
        except OSError as exc:
            raise OSError(f"cannot open {self.path} for writing: {exc}") from exc
        self._fh.write(",".join(schema.names + ["label"]) + "\n")

    def write(self, X: np.ndarray, y: np.ndarray) -> None:
        try:
            self._fh.writelines(_format_row(x, lab) for x, lab in zip(np.asarray(X, dtype=np.float64), y))
        except OSError as exc:
            raise OSError(f"write to {self.path} failed after {self.rows} rows: {exc}") from exc
        self.rows += len(y)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_csv(ds: Dataset, path) -> None:
    with CsvWriter(path, ds.schema) as w:
        w.write(ds.X, ds.y)


# -- ARDS binary -----------------------------------------------------------


class BinaryWriter:
    """Streaming ARDS sink.  The row count is patched into the header on close."""

    def __init__(self, path, schema: FeatureSchema | None = None):
        self.path = Path(path)
        self.schema = schema
        self.rows = 0
        try:
            self._fh = open(self.path, "wb")
        except OSError as exc:
            raise OSError(f"cannot open {self.path} for writing: {exc}") from exc
        self._fh.write(ARDS_HEADER.pack(ARDS_MAGIC, ARDS_VERSION, 0))

    def write(self, X: np.ndarray, y: np.ndarray) -> None:
        rec = np.empty(len(y), dtype=RECORD_DTYPE)
        rec["x"] = X
        rec["y"] = y
        try:
            self._fh.write(rec.tobytes())
        except OSError as exc:
            raise OSError(f"write to {self.path} failed after {self.rows} rows: {exc}") from exc
        self.rows += len(y)

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(ARDS_HEADER.pack(ARDS_MAGIC, ARDS_VERSION, self.rows))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_binary(ds: Dataset, path) -> None:
    with BinaryWriter(path, ds.schema) as w:
        w.write(ds.X, ds.y)


def binary_row_count(path) -> int:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(ARDS_HEADER.size)
    if len(head) < ARDS_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(head)} bytes)")
    magic, version, count = ARDS_HEADER.unpack(head)
    if magic != ARDS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != ARDS_VERSION:
        raise FormatError(f"{path}: unsupported ARDS version {version}")
    expected = ARDS_HEADER.size + count * RECORD_DTYPE.itemsize
    if size < expected:
        raise FormatError(f"{path}: truncated, header claims {count} rows ({expected} bytes), file has {size}")
    return count


def iter_binary_chunks(path, chunk_rows: int = 65536) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    n = binary_row_count(path)
    if n == 0:
        return
    mm = np.memmap(path, dtype=RECORD_DTYPE, mode="r", offset=ARDS_HEADER.size, shape=(n,))
    for start in range(0, n, chunk_rows):
        rec = mm[start:start + chunk_rows]
        yield rec["x"].astype(np.float64), rec["y"].copy()


def read_binary(path, schema: FeatureSchema | None = None) -> Dataset:
    schema = schema or default_schema()
    n = binary_row_count(path)
    if n == 0:
        return Dataset(schema, np.empty((0, N_FEATURES)), np.empty(0, dtype=np.uint8))
    rec = np.fromfile(path, dtype=RECORD_DTYPE, count=n, offset=ARDS_HEADER.size)
    return Dataset(schema, rec["x"].astype(np.float64), rec["y"], copy=False)


# -- format dispatch -------------------------------------------------------


def is_binary_path(path) -> bool:
    return str(path).lower().endswith((".ards", ".bin"))


def load_dataset(path, schema: FeatureSchema | None = None) -> Dataset:
    """Load CSV or ARDS depending on the file extension."""
    if is_binary_path(path):
        return read_binary(path, schema)
    return load_csv(path, schema)


def iter_chunks(path, schema: FeatureSchema | None = None, chunk_rows: int = 65536):
    if is_binary_path(path):
        return iter_binary_chunks(path, chunk_rows)
    return iter_csv_chunks(path, schema, chunk_rows)


def open_writer(path, schema: FeatureSchema, fmt: str | None = None):
    fmt = fmt or ("ards" if is_binary_path(path) else "csv")
    if fmt == "ards":
        return BinaryWriter(path, schema)
    if fmt == "csv":
        return CsvWriter(path, schema)
    raise ValueError(f"unknown format {fmt!r}")
