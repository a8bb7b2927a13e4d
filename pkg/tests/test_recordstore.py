import struct

import pytest
from hypothesis import given, strategies as st

from polydiff import recordstore as rs
from polydiff.recordstore import DOCUMENT_SCHEMA, DocumentRecord, StoreSchema


def _docs():
    return [
        DocumentRecord.build("An act relating to taxes.", 2005, "FL", "SB436"),
        DocumentRecord.build("An act relating to schools.", 2005, "MI", "SB1046"),
        DocumentRecord.build("Water rights.", 2007, "TX", "HB12"),
    ]


def test_make_key_and_state():
    assert rs.make_key("FL", 2005, "SB436") == "FL/2005/SB436"
    assert rs.state_of("MI/2005/SB1046") == "MI"


def test_round_trip(tmp_path):
    path = tmp_path / "docs.dps"
    rows = [d.as_dict() for d in _docs()]
    assert rs.write_store(path, DOCUMENT_SCHEMA, rows, unique_key="primary_key") == 3
    assert list(rs.read_all(path)) == rows
    assert rs.read_schema(path) == DOCUMENT_SCHEMA
    assert [d.primary_key for d in rs.read_documents(path)] == [r["primary_key"] for r in rows]


def test_file_layout(tmp_path):
    path = tmp_path / "one.dps"
    schema = StoreSchema("t", (("a", "string"), ("n", "int")))
    rs.write_store(path, schema, [{"a": "xy", "n": -3}])
    raw = path.read_bytes()
    assert raw[:4] == b"DPS1"
    (hlen,) = struct.unpack("<I", raw[4:8])
    body = raw[8 + hlen :]
    assert body == struct.pack("<I", 2) + b"xy" + struct.pack("<I", 8) + struct.pack("<q", -3)


def test_projection_skips_fields(tmp_path):
    path = tmp_path / "docs.dps"
    rs.write_store(path, DOCUMENT_SCHEMA, [d.as_dict() for d in _docs()])
    got = list(rs.read_projected(path, ["primary_key", "year"]))
    assert got == [
        {"primary_key": "FL/2005/SB436", "year": 2005},
        {"primary_key": "MI/2005/SB1046", "year": 2005},
        {"primary_key": "TX/2007/HB12", "year": 2007},
    ]


def test_reader_schema_mismatch(tmp_path):
    path = tmp_path / "docs.dps"
    rs.write_store(path, DOCUMENT_SCHEMA, [d.as_dict() for d in _docs()])
    with pytest.raises(rs.SchemaMismatch):
        list(rs.read_projected(path, ["primary_key", "sponsor"]))
    bad = StoreSchema("documents", (("year", "string"),))
    with pytest.raises(rs.SchemaMismatch):
        list(rs.read_projected(path, bad))


def test_duplicate_key_rejected(tmp_path):
    path = tmp_path / "docs.dps"
    d = _docs()[0].as_dict()
    with pytest.raises(rs.StoreError, match="duplicate key 'FL/2005/SB436'"):
        rs.write_store(path, DOCUMENT_SCHEMA, [d, d], unique_key="primary_key")
    assert not path.exists()


def test_filter_records(tmp_path):
    path = tmp_path / "docs.dps"
    rs.write_store(path, DOCUMENT_SCHEMA, [d.as_dict() for d in _docs()])
    keys = list(rs.filter_records(path, lambda r: r["year"] == 2005 and r["state"] != "MI"))
    assert keys == ["FL/2005/SB436"]


def test_truncated_file(tmp_path):
    path = tmp_path / "docs.dps"
    rs.write_store(path, DOCUMENT_SCHEMA, [d.as_dict() for d in _docs()])
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(rs.StoreError):
        list(rs.read_all(path))


def test_bad_magic(tmp_path):
    path = tmp_path / "x.dps"
    path.write_bytes(b"NOPE" + b"\0" * 8)
    with pytest.raises(rs.StoreError):
        rs.read_schema(path)


def test_ingest(tmp_path):
    (tmp_path / "a.txt").write_text("First bill text.", encoding="utf-8")
    (tmp_path / "b.txt").write_text("Second bill text.", encoding="utf-8")
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("path,state,year,docversion\na.txt,FL,2005,SB1\nb.txt,MI,2006,HB2\n")
    out = tmp_path / "records.dps"
    assert rs.ingest(manifest, out) == 2
    docs = list(rs.read_documents(out))
    assert [d.primary_key for d in docs] == ["FL/2005/SB1", "MI/2006/HB2"]
    assert docs[1].content == "Second bill text."


def test_ingest_bad_utf8_names_file(tmp_path):
    (tmp_path / "bad.txt").write_bytes(b"\xff\xfe\xfa")
    manifest = tmp_path / "manifest.csv"
    manifest.write_text("path,state,year,docversion\nbad.txt,FL,2005,SB1\n")
    with pytest.raises(rs.StoreError, match="bad.txt"):
        rs.ingest(manifest, tmp_path / "r.dps")


@given(
    st.lists(
        st.tuples(st.text(max_size=40), st.integers(min_value=-(2**63), max_value=2**63 - 1)),
        max_size=20,
    )
)
def test_round_trip_property(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("rt") / "s.dps"
    schema = StoreSchema("t", (("s", "string"), ("n", "int")))
    data = [{"s": s, "n": n} for s, n in rows]
    rs.write_store(path, schema, data)
    assert list(rs.read_all(path)) == data
    assert list(rs.read_projected(path, ["n"])) == [{"n": n} for _, n in rows]


def _five(tmp_path):
    path = tmp_path / "five.dps"
    docs = _docs() + [DocumentRecord.build("x", 2011, "FL", "HB9"), DocumentRecord.build("y", 2005, "FL", "HB3")]
    rs.write_store(path, DOCUMENT_SCHEMA, [d.as_dict() for d in docs])
    return path


def test_projection_examples(tmp_path):
    path = _five(tmp_path)
    part = list(rs.read_projected(path, ["primary_key", "year", "state"]))
    assert len(part) == 5 and all("content" not in r for r in part)
    assert list(rs.read_projected(path, DOCUMENT_SCHEMA)) == list(rs.read_all(path))


def test_filter_examples(tmp_path):
    path = _five(tmp_path)
    assert len(list(rs.filter_records(path, lambda r: r["year"] == 2005))) == 3
    assert list(rs.filter_records(path, lambda r: r["state"] in set())) == []
    pred = lambda r: r["state"] == "FL" and r["year"] >= 2005  # noqa: E731
    brute = [r["primary_key"] for r in rs.read_all(path) if pred(r)]
    assert list(rs.filter_records(path, pred)) == brute


def test_ingest_round_trip_and_duplicates(tmp_path):
    texts = ["Sec. 1. Short title.\n", "Naïve café, résumé ßñ\r\n", ""]
    for i, t in enumerate(texts):
        (tmp_path / f"{i}.txt").write_bytes(t.encode("utf-8"))
    manifest = tmp_path / "m.csv"
    manifest.write_text("path,state,year,docversion\n0.txt,FL,2005,SB1\n1.txt,FL,2005,SB2\n2.txt,FL,2005,SB3\n")
    assert rs.ingest(manifest, tmp_path / "r.dps") == 3
    assert [r["content"] for r in rs.read_all(tmp_path / "r.dps")] == texts
    manifest.write_text("path,state,year,docversion\n0.txt,FL,2005,SB436\n1.txt,FL,2005,SB436\n")
    with pytest.raises(rs.StoreError, match="duplicate key"):
        rs.ingest(manifest, tmp_path / "r2.dps")
