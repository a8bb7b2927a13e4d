"""Self-describing binary record store.

File layout::

    b"DPS1" | u32 header_len | header (UTF-8 JSON schema) | records...

Each record is, for every schema field in order, a u32 byte length followed by
the payload. Strings are UTF-8, ints are 8-byte little-endian signed. Readers
that project a subset of fields skip the other payloads by seeking over them,
so the bytes of e.g. ``content`` are never decoded.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

MAGIC = b"DPS1"
FIELD_TYPES = ("string", "int")

_U32 = struct.Struct("<I")
_I64 = struct.Struct("<q")


class StoreError(Exception):
    """Raised for malformed store files and ingestion failures."""


class SchemaMismatch(StoreError):
    pass


@dataclass(frozen=True)
class StoreSchema:
    name: str
    fields: tuple[tuple[str, str], ...]
    version: int = 1

    def __post_init__(self):
        names = [f for f, _ in self.fields]
        if len(set(names)) != len(names):
            raise StoreError(f"duplicate field names in schema {self.name!r}")
        for fname, ftype in self.fields:
            if ftype not in FIELD_TYPES:
                raise StoreError(f"field {fname!r} has unsupported type {ftype!r}")

    @property
    def field_names(self) -> list[str]:
        return [f for f, _ in self.fields]

    def type_of(self, name: str) -> str | None:
        for fname, ftype in self.fields:
            if fname == name:
                return ftype
        return None

    def project(self, *names: str) -> "StoreSchema":
        return StoreSchema(self.name, tuple((n, self.type_of(n)) for n in names), self.version)

    def check_reader(self, reader: "StoreSchema") -> None:
        """Raise unless ``reader`` is a subset projection of this (writer) schema."""
        for fname, ftype in reader.fields:
            wtype = self.type_of(fname)
            if wtype is None:
                raise SchemaMismatch(f"field {fname!r} not present in writer schema {self.name!r}")
            if wtype != ftype:
                raise SchemaMismatch(
                    f"field {fname!r} has type {wtype!r} in writer schema, reader expects {ftype!r}"
                )

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "version": self.version,
            "fields": [{"name": n, "type": t} for n, t in self.fields],
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "StoreSchema":
        try:
            doc = json.loads(text)
            fields = tuple((f["name"], f["type"]) for f in doc["fields"])
            return cls(doc["name"], fields, int(doc.get("version", 1)))
        except (ValueError, KeyError, TypeError) as exc:
            raise StoreError(f"invalid schema header: {exc}") from exc


DOCUMENT_SCHEMA = StoreSchema(
    "Bills",
    (
        ("primary_key", "string"),
        ("content", "string"),
        ("year", "int"),
        ("state", "string"),
        ("docversion", "string"),
    ),
)


@dataclass
class DocumentRecord:
    primary_key: str
    content: str
    year: int
    state: str
    docversion: str

    @classmethod
    def build(cls, content: str, year: int, state: str, docversion: str) -> "DocumentRecord":
        return cls(make_key(state, year, docversion), content, int(year), state, docversion)

    def as_dict(self) -> dict:
        return {
            "primary_key": self.primary_key,
            "content": self.content,
            "year": self.year,
            "state": self.state,
            "docversion": self.docversion,
        }


def make_key(state: str, year: int, docversion: str) -> str:
    return f"{state}/{int(year)}/{docversion}"


def state_of(primary_key: str) -> str:
    return primary_key.split("/", 1)[0]


def _encode(value, ftype: str) -> bytes:
    if ftype == "int":
        payload = _I64.pack(int(value))
    else:
        if value is None:
            raise StoreError("string fields may be empty but not absent")
        payload = str(value).encode("utf-8")
    return _U32.pack(len(payload)) + payload


class StoreWriter:
    """Streaming writer. Writes to a temp file and renames on close, so a
    crashed writer never leaves a truncated store behind."""

    def __init__(self, path, schema: StoreSchema, unique_key: str | None = None):
        self.path = Path(path)
        self.schema = schema
        self.unique_key = unique_key
        self.count = 0
        self._seen: set = set()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=self.path.name + ".", suffix=".tmp", dir=self.path.parent)
        self._tmp = Path(tmp)
        self._fh = os.fdopen(fd, "wb")
        header = schema.to_json().encode("utf-8")
        self._fh.write(MAGIC + _U32.pack(len(header)) + header)

    def write(self, row: dict) -> None:
        if self.unique_key is not None:
            key = row[self.unique_key]
            if key in self._seen:
                raise StoreError(f"duplicate key {key!r}")
            self._seen.add(key)
        try:
            parts = [_encode(row[name], ftype) for name, ftype in self.schema.fields]
        except KeyError as exc:
            raise StoreError(f"record missing field {exc.args[0]!r}") from None
        self._fh.write(b"".join(parts))
        self.count += 1

    def close(self) -> None:
        self._fh.close()
        os.replace(self._tmp, self.path)

    def abort(self) -> None:
        self._fh.close()
        self._tmp.unlink(missing_ok=True)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self.abort()
        return False


def write_store(path, schema: StoreSchema, rows: Iterable[dict], unique_key: str | None = None) -> int:
    with StoreWriter(path, schema, unique_key) as w:
        for row in rows:
            w.write(row)
    return w.count


def _read_exact(fh, n: int, path) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise StoreError(f"{path}: truncated record")
    return buf


def read_schema(path) -> StoreSchema:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> StoreSchema:
    if fh.read(4) != MAGIC:
        raise StoreError(f"{path}: not a record store (bad magic)")
    (hlen,) = _U32.unpack(_read_exact(fh, 4, path))
    return StoreSchema.from_json(_read_exact(fh, hlen, path).decode("utf-8"))


def read_projected(path, reader: StoreSchema | Iterable[str] | None = None) -> Iterator[dict]:
    """Yield dicts restricted to the reader schema's fields.

    ``reader`` may be a StoreSchema, a list of field names (types taken from
    the writer), or None for every field.
    """
    with open(path, "rb") as fh:
        writer = _read_header(fh, path)
        if reader is None:
            reader = writer
        elif not isinstance(reader, StoreSchema):
            names = list(reader)
            for n in names:
                if writer.type_of(n) is None:
                    raise SchemaMismatch(f"field {n!r} not present in writer schema {writer.name!r}")
            reader = writer.project(*names)
        writer.check_reader(reader)
        wanted = set(reader.field_names)
        plan = [(name, ftype, name in wanted) for name, ftype in writer.fields]
        while True:
            head = fh.read(4)
            if not head:
                return
            row = {}
            for i, (name, ftype, keep) in enumerate(plan):
                if i:
                    head = _read_exact(fh, 4, path)
                elif len(head) != 4:
                    raise StoreError(f"{path}: truncated record")
                (n,) = _U32.unpack(head)
                if not keep:
                    fh.seek(n, os.SEEK_CUR)
                    continue
                payload = _read_exact(fh, n, path)
                row[name] = _I64.unpack(payload)[0] if ftype == "int" else payload.decode("utf-8")
            yield {name: row[name] for name in reader.field_names}


def read_all(path) -> Iterator[dict]:
    return read_projected(path, None)


def read_documents(path) -> Iterator[DocumentRecord]:
    for row in read_projected(path, DOCUMENT_SCHEMA):
        yield DocumentRecord(**row)


def filter_records(path, predicate: Callable[[dict], bool]) -> Iterator[str]:
    """Primary keys of records whose metadata satisfies ``predicate``.

    The predicate sees only ``year``, ``state`` and ``docversion``.
    """
    for row in read_projected(path, ["primary_key", "year", "state", "docversion"]):
        key = row.pop("primary_key")
        if predicate(row):
            yield key


@dataclass
class ManifestRow:
    path: Path
    state: str
    year: int
    docversion: str


def read_manifest(manifest) -> list[ManifestRow]:
    manifest = Path(manifest)
    base = manifest.parent
    rows = []
    with open(manifest, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"path", "state", "year", "docversion"} - set(reader.fieldnames or [])
        if reader.fieldnames and missing:
            raise StoreError(f"{manifest}: manifest missing columns {sorted(missing)}")
        for line in reader:
            p = Path(line["path"])
            if not p.is_absolute():
                p = base / p
            try:
                year = int(line["year"])
            except ValueError:
                raise StoreError(f"{manifest}: bad year {line['year']!r}") from None
            rows.append(ManifestRow(p, line["state"], year, line["docversion"]))
    return rows


def ingest(manifest, output_store) -> int:
    """Convert the files listed in a CSV manifest into a document store."""
    rows = read_manifest(manifest)
    with StoreWriter(output_store, DOCUMENT_SCHEMA, unique_key="primary_key") as w:
        for row in rows:
            try:
                content = row.path.read_bytes().decode("utf-8")
            except UnicodeDecodeError as exc:
                raise StoreError(f"{row.path}: not valid UTF-8 ({exc.reason})") from None
            except OSError as exc:
                raise StoreError(f"{row.path}: {exc.strerror}") from None
            w.write(DocumentRecord.build(content, row.year, row.state, row.docversion).as_dict())
    return w.count
