import json
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from dualwaf.datasets import (CLASSES, LabeledRecord, SourceEntry, balance, clean, from_jsonl,
                              load_manifest, load_manifest_sources, load_payload_csv,
                              load_raw_http_blocks, merge, record_from_request, split, to_jsonl)
from dualwaf.errors import (EmptyFile, MissingColumn, SchemaViolation, SingleClassData,
                            UnmappedLabel)


def rec(payload, l1=0, cls=None, source="t"):
    return LabeledRecord(payload, l1, cls, source)


def test_record_invariants():
    with pytest.raises(ValueError):
        LabeledRecord("x")
    with pytest.raises(ValueError):
        LabeledRecord("x", 0, "sqli")
    with pytest.raises(ValueError):
        LabeledRecord("x", None, "bogus")
    with pytest.raises(ValueError):
        LabeledRecord("x", True)
    assert LabeledRecord("x", None, "sqli").is_attack


def test_raw_blocks_two_gets(tmp_path):
    p = tmp_path / "normal.txt"
    p.write_text("GET /a HTTP/1.1\nHost: x\n\nGET /b?c=1 HTTP/1.1\nHost: x\n\n")
    res = load_raw_http_blocks(p, l1_label=0)
    assert [r.raw_request.path for r in res.records] == ["/a", "/b"]
    assert all(r.l1_label == 0 and r.source == "normal.txt" for r in res.records)
    assert res.skipped == []


def test_raw_blocks_garbage_skipped(tmp_path):
    p = tmp_path / "mixed.txt"
    p.write_text("GET /a HTTP/1.1\nHost: x\n\nthis is not a request\n\n")
    res = load_raw_http_blocks(p, l1_label=1)
    assert len(res.records) == 1 and len(res.skipped) == 1
    assert res.skipped[0].line == 4


def test_raw_blocks_post_body(tmp_path):
    p = tmp_path / "post.txt"
    p.write_text("POST /login HTTP/1.1\nHost: x\nContent-Length: 16\n\nuser=a&pass=%27b\n\n"
                 "GET /next HTTP/1.1\n\n")
    res = load_raw_http_blocks(p, l1_label=1)
    assert len(res.records) == 2
    assert res.records[0].text() == "/login user=a&pass='b"


def test_raw_blocks_empty(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("\n\n")
    with pytest.raises(EmptyFile):
        load_raw_http_blocks(p, l1_label=0)


def csv_entry(**kw):
    base = dict(name="csv", path="p.csv", format="payload_csv", payload_column="payload",
                class_column="label", label_mapping={"SQL_INJECTION": "sqli", "benign": "valid",
                                                     "XSS": "xss"})
    base.update(kw)
    return SourceEntry(**base)


def test_payload_csv(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text('payload,label\n"1\' or 1=1",SQL_INJECTION\n"a,b",benign\n"<b ""x"">",XSS\n')
    recs = load_payload_csv(p, csv_entry())
    assert [r.attack_class for r in recs] == ["sqli", "valid", "xss"]
    assert [r.l1_label for r in recs] == [1, None, 1]
    assert recs[1].payload == "a,b"
    assert recs[2].payload == '<b "x">'


def test_payload_csv_errors(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("text,label\nx,benign\n")
    with pytest.raises(MissingColumn):
        load_payload_csv(p, csv_entry())
    p.write_text("payload,label\nx,weird\n")
    with pytest.raises(UnmappedLabel):
        load_payload_csv(p, csv_entry())


def test_manifest(tmp_path):
    (tmp_path / "p.csv").write_text("payload,label\nx,benign\ny,XSS\n")
    (tmp_path / "n.txt").write_text("GET /a HTTP/1.1\n\n")
    m = {"sources": [
        {"name": "csv", "path": "p.csv", "format": "payload_csv", "payload_column": "payload",
         "class_column": "label", "label_mapping": {"benign": "valid", "XSS": "xss"}},
        {"name": "normal", "path": "n.txt", "format": "raw_http_blocks", "l1_label": 0}]}
    (tmp_path / "m.json").write_text(json.dumps(m))
    lists = load_manifest_sources(load_manifest(tmp_path / "m.json"))
    assert [len(x) for x in lists] == [2, 1]


@pytest.mark.parametrize("bad", [
    {"sources": []},
    {"sources": [{"name": "a", "path": "x", "format": "xml"}]},
    {"sources": [{"name": "a", "path": "x", "format": "payload_csv"}]},
    {"sources": [{"name": "a", "path": "x", "format": "raw_http_blocks"}]},
    {"sources": [{"name": "a", "path": "x", "format": "jsonl", "extra": 1}]},
])
def test_manifest_schema_violations(tmp_path, bad):
    (tmp_path / "m.json").write_text(json.dumps(bad))
    with pytest.raises(SchemaViolation):
        load_manifest(tmp_path / "m.json")


def test_clean_examples():
    out, rep = clean([rec("a"), rec("a"), rec("b")])
    assert [r.payload for r in out] == ["a", "b"] and rep.duplicates == 1
    out, rep = clean([rec("")])
    assert out == [] and rep.missing == 1
    batch = [rec(f"{i:010d}") for i in range(1000)] + [rec("x" * 10**6)]
    out, rep = clean(batch)
    assert len(out) == 1000 and rep.outliers == 1


payload_lists = st.lists(st.sampled_from(["", " ", "a", "b", "ab", "x" * 5000, "y" * 9000, "z" * 20000]),
                         max_size=30)


@given(payload_lists)
def test_clean_idempotent(payloads):
    once, _ = clean([rec(p) for p in payloads])
    twice, rep = clean(once)
    assert twice == once
    assert rep.missing == rep.duplicates == rep.outliers == 0


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 99))
def test_balance_counts(n0, n1, seed):
    recs = [rec(f"n{i}", 0) for i in range(n0)] + [rec(f"a{i}", 1) for i in range(n1)]
    out = balance(recs, seed)
    c = Counter(r.l1_label for r in out)
    assert c[0] == c[1] == min(n0, n1)
    assert not (Counter(r.payload for r in out) - Counter(r.payload for r in recs))
    assert balance(recs, seed) == out


def test_balance_single_class():
    with pytest.raises(SingleClassData):
        balance([rec("a", 0), rec("b", 0)], 1)


def test_merge_and_split():
    a = [rec("a1", source="A"), rec("a2", source="A")]
    b = [rec(f"b{i}", source="B") for i in range(3)]
    m = merge([a, b], 3)
    assert sorted(r.payload for r in m) == sorted(r.payload for r in a + b)
    assert merge([a, b], 3) == m
    recs = [rec(str(i)) for i in range(10)]
    tr, te = split(recs, 0.8, 1)
    assert len(tr) == 8 and len(te) == 2
    assert {r.payload for r in tr} | {r.payload for r in te} == {r.payload for r in recs}
    assert not {r.payload for r in tr} & {r.payload for r in te}
    assert split(recs, 0.8, 1) == (tr, te)


records = st.builds(
    lambda payload, cls, l1, src: LabeledRecord(payload, 1 if cls not in (None, "valid") else l1, cls, src),
    st.text(max_size=30), st.one_of(st.none(), st.sampled_from(CLASSES)), st.sampled_from([0, 1]),
    st.text(max_size=5))


@given(st.lists(records, max_size=20))
def test_jsonl_round_trip(tmp_path_factory, recs):
    p = tmp_path_factory.mktemp("j") / "r.jsonl"
    to_jsonl(recs, p)
    assert from_jsonl(p) == recs


def test_jsonl_round_trip_with_raw(tmp_path):
    r = record_from_request("GET /x?a=%27 HTTP/1.1\r\nCookie: s=1\r\n\r\n", attack_class="path_traversal",
                            l1_label=1, source="s")
    to_jsonl([r], tmp_path / "r.jsonl")
    assert '"path_traversal"' in (tmp_path / "r.jsonl").read_text()
    back = from_jsonl(tmp_path / "r.jsonl")[0]
    assert back == r and back.text() == r.text()


def test_jsonl_bad_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"payload": "a", "l1_label": 0}\n{oops\n')
    with pytest.raises(SchemaViolation) as info:
        from_jsonl(p)
    assert info.value.line == 2
