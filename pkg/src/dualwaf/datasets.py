"""Corpus ingestion and preprocessing into a canonical labeled record stream.

Sources are raw HTTP request dumps (blank-line separated blocks, one label per
file), payload CSVs with a class column, or our own JSON-lines format. The
preprocessing steps are clean, balance, merge, split and JSONL conversion.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (EmptyFile, MalformedRequest, MissingColumn, SchemaViolation,
                     SingleClassData, UnmappedLabel)
from .http_model import (DEFAULT_INSPECTED_HEADERS, DEFAULT_MAX_ROUNDS, HttpRequest,
                         decode_fixpoint, inspection_payload, parse_raw_request)

log = logging.getLogger(__name__)

CLASSES = ("valid", "sqli", "xss", "path_traversal", "command_injection")
FORMATS = ("raw_http_blocks", "payload_csv", "jsonl")

OUTLIER_PERCENTILE = 99.9
MIN_OUTLIER_LENGTH = 4096


@dataclass(frozen=True)
class LabeledRecord:
    payload: str
    l1_label: int | None = None
    attack_class: str | None = None
    source: str = ""
    raw_request: HttpRequest | None = field(default=None, compare=True)

    def __post_init__(self):
        if self.l1_label is None and self.attack_class is None:
            raise ValueError("record needs l1_label or attack_class")
        if self.l1_label not in (None, 0, 1) or isinstance(self.l1_label, bool):
            raise ValueError(f"l1_label must be 0, 1 or None, got {self.l1_label!r}")
        if self.attack_class is not None and self.attack_class not in CLASSES:
            raise ValueError(f"unknown attack_class {self.attack_class!r}")
        if self.attack_class not in (None, "valid") and self.l1_label == 0:
            raise ValueError("attack records cannot carry l1_label 0")

    @property
    def is_attack(self) -> bool | None:
        if self.attack_class is not None:
            return self.attack_class != "valid"
        return None

    def text(self, header_allowlist=DEFAULT_INSPECTED_HEADERS,
             max_rounds: int = DEFAULT_MAX_ROUNDS) -> str:
        """The decoded inspection text both layers see."""
        if self.raw_request is not None:
            return inspection_payload(self.raw_request, header_allowlist, max_rounds).text
        return decode_fixpoint(self.payload, max_rounds)[0]

    def to_json(self) -> dict:
        raw = None
        if self.raw_request is not None:
            raw = self.raw_request.raw.decode("utf-8", "surrogateescape")
        return {
            "payload": self.payload,
            "l1_label": self.l1_label,
            "attack_class": self.attack_class,
            "source": self.source,
            "raw_request": raw,
        }

    @classmethod
    def from_json(cls, obj) -> "LabeledRecord":
        if not isinstance(obj, dict):
            raise ValueError("record must be a JSON object")
        unknown = set(obj) - {"payload", "l1_label", "attack_class", "source", "raw_request"}
        if unknown:
            raise ValueError(f"unknown fields {sorted(unknown)}")
        payload = obj.get("payload")
        if not isinstance(payload, str):
            raise ValueError("payload must be a string")
        source = obj.get("source", "")
        if not isinstance(source, str):
            raise ValueError("source must be a string")
        raw = obj.get("raw_request")
        req = None
        if raw is not None:
            if not isinstance(raw, str):
                raise ValueError("raw_request must be a string or null")
            req = parse_raw_request(raw)
        return cls(payload, obj.get("l1_label"), obj.get("attack_class"), source, req)


def record_from_request(raw: str | bytes, *, l1_label=None, attack_class=None,
                        source: str = "") -> LabeledRecord:
    req = parse_raw_request(raw)
    return LabeledRecord(req.raw.decode("utf-8", "surrogateescape"), l1_label, attack_class,
                         source, req)


# --- loaders -----------------------------------------------------------------

class SkippedBlock(NamedTuple):
    line: int
    reason: str


class LoadResult(NamedTuple):
    records: list[LabeledRecord]
    skipped: list[SkippedBlock]


_REQUEST_START = re.compile(r"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+ \S.* HTTP/\d")


def _chunks(text: str) -> list[tuple[int, list[str]]]:
    """Blank-line separated chunks with their 1-based starting line numbers."""
    chunks, current, start = [], [], 0
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip() == "":
            if current:
                chunks.append((start, current))
                current = []
            continue
        if not current:
            start = lineno
        current.append(line)
    if current:
        chunks.append((start, current))
    return chunks


def load_raw_http_blocks(path: str | os.PathLike, *, l1_label: int | None = None,
                         attack_class: str | None = None, source: str | None = None,
                         eol: str = "\r\n") -> LoadResult:
    """Parse a dump of raw HTTP requests separated by blank lines.

    Every request carries the file-level label. A chunk that follows a request
    declaring a positive Content-Length is taken as that request's body;
    anything else that does not parse is skipped and reported.
    """
    source = source if source is not None else os.path.basename(os.fspath(path))
    with open(path, encoding="utf-8", errors="surrogateescape", newline="") as fh:
        text = fh.read()
    if not text.strip():
        raise EmptyFile(f"{path}: no content")
    records: list[LabeledRecord] = []
    skipped: list[SkippedBlock] = []
    chunks = _chunks(text)
    i = 0
    while i < len(chunks):
        lineno, lines = chunks[i]
        i += 1
        if not _REQUEST_START.match(lines[0]):
            skipped.append(SkippedBlock(lineno, "not an HTTP request"))
            log.warning("%s:%d: skipping block that is not an HTTP request", path, lineno)
            continue
        head = eol.join(lines) + eol + eol
        try:
            req = parse_raw_request(head)
        except MalformedRequest as exc:
            skipped.append(SkippedBlock(lineno, str(exc)))
            log.warning("%s:%d: skipping malformed request: %s", path, lineno, exc)
            continue
        length = req.header("Content-Length")
        if (length and length.strip().isdigit() and int(length) > 0 and i < len(chunks)
                and not _REQUEST_START.match(chunks[i][1][0])):
            head += "\n".join(chunks[i][1])
            i += 1
            req = parse_raw_request(head)
        records.append(LabeledRecord(req.raw.decode("utf-8", "surrogateescape"),
                                     l1_label, attack_class, source, req))
    return LoadResult(records, skipped)


def _map_label(label: str, mapping: dict) -> tuple[str, int | None]:
    if label not in mapping:
        raise UnmappedLabel(f"label {label!r} has no mapping")
    target = mapping[label]
    if isinstance(target, str):
        return target, (None if target == "valid" else 1)
    return target["attack_class"], target.get("l1_label", None if target["attack_class"] == "valid" else 1)


def load_payload_csv(path: str | os.PathLike, entry: "SourceEntry") -> list[LabeledRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (entry.payload_column, entry.class_column):
            if col not in header:
                raise MissingColumn(f"{path}: column {col!r} not in header {header}")
        records = []
        for rowno, row in enumerate(reader, 2):
            label = row[entry.class_column]
            try:
                cls, l1 = _map_label(label, entry.label_mapping)
            except UnmappedLabel as exc:
                raise UnmappedLabel(f"{path}:{rowno}: {exc}") from None
            records.append(LabeledRecord(row[entry.payload_column] or "", l1, cls, entry.name))
    return records


# --- manifest ------------------------------------------------------------------

@dataclass(frozen=True)
class SourceEntry:
    name: str
    path: str
    format: str
    label_mapping: dict = field(default_factory=dict)
    payload_column: str | None = None
    class_column: str | None = None
    l1_label: int | None = None
    attack_class: str | None = None

    def __post_init__(self):
        if self.format not in FORMATS:
            raise SchemaViolation(f"source {self.name!r}: unknown format {self.format!r}")
        if self.format == "payload_csv":
            if not self.payload_column or not self.class_column:
                raise SchemaViolation(f"source {self.name!r}: payload_csv needs payload_column and class_column")
            if not self.label_mapping:
                raise SchemaViolation(f"source {self.name!r}: payload_csv needs label_mapping")
            for k, v in self.label_mapping.items():
                cls = v if isinstance(v, str) else (v.get("attack_class") if isinstance(v, dict) else None)
                if cls not in CLASSES:
                    raise SchemaViolation(f"source {self.name!r}: mapping {k!r} -> {v!r} is not a known class")
        if self.format == "raw_http_blocks" and self.l1_label is None and self.attack_class is None:
            raise SchemaViolation(f"source {self.name!r}: raw_http_blocks needs l1_label or attack_class")


@dataclass(frozen=True)
class CorpusManifest:
    sources: tuple[SourceEntry, ...]
    base_dir: str = "."


def load_manifest(path: str | os.PathLike) -> CorpusManifest:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(data, dict) or not isinstance(data.get("sources"), list) or not data["sources"]:
        raise SchemaViolation("manifest needs a non-empty 'sources' list")
    entries = []
    allowed = set(SourceEntry.__dataclass_fields__)
    for i, src in enumerate(data["sources"]):
        if not isinstance(src, dict):
            raise SchemaViolation(f"source #{i} must be an object")
        extra = set(src) - allowed
        missing = {"name", "path", "format"} - set(src)
        if extra or missing:
            raise SchemaViolation(f"source #{i}: unknown {sorted(extra)} / missing {sorted(missing)}")
        entries.append(SourceEntry(**src))
    return CorpusManifest(tuple(entries), os.path.dirname(os.path.abspath(path)))


def load_source(entry: SourceEntry, base_dir: str = ".") -> list[LabeledRecord]:
    path = entry.path if os.path.isabs(entry.path) else os.path.join(base_dir, entry.path)
    if entry.format == "raw_http_blocks":
        result = load_raw_http_blocks(path, l1_label=entry.l1_label,
                                      attack_class=entry.attack_class, source=entry.name)
        return result.records
    if entry.format == "payload_csv":
        return load_payload_csv(path, entry)
    return from_jsonl(path)


def load_manifest_sources(manifest: CorpusManifest) -> list[list[LabeledRecord]]:
    return [load_source(e, manifest.base_dir) for e in manifest.sources]


# --- preprocessing -------------------------------------------------------------

@dataclass
class CleanReport:
    missing: int = 0
    duplicates: int = 0
    outliers: int = 0
    kept: int = 0
    outlier_threshold: float | None = None

    def to_dict(self) -> dict:
        return {"missing": self.missing, "duplicates": self.duplicates,
                "outliers": self.outliers, "kept": self.kept,
                "outlier_threshold": self.outlier_threshold}


def outlier_threshold(lengths: Sequence[int], percentile: float = OUTLIER_PERCENTILE,
                      floor: int = MIN_OUTLIER_LENGTH) -> float:
    """Length cutoff such that trimming above it is already a fixpoint.

    The percentile is recomputed on the survivors until nothing more would be
    cut, and never drops below ``floor``. That makes cleaning idempotent.
    """
    if not len(lengths):
        return float(floor)
    arr = np.sort(np.asarray(lengths, dtype=np.float64))
    m = arr.size
    while True:
        cut = max(float(np.percentile(arr[:m], percentile)), float(floor))
        new_m = int(np.searchsorted(arr[:m], cut, side="right"))
        if new_m == m:
            return cut
        m = new_m


def clean(records: Iterable[LabeledRecord], *, floor: int = MIN_OUTLIER_LENGTH
          ) -> tuple[list[LabeledRecord], CleanReport]:
    report = CleanReport()
    seen: set[str] = set()
    stage: list[LabeledRecord] = []
    for rec in records:
        if not rec.payload.strip():
            report.missing += 1
            continue
        if rec.payload in seen:
            report.duplicates += 1
            continue
        seen.add(rec.payload)
        stage.append(rec)
    cut = outlier_threshold([len(r.payload) for r in stage], floor=floor)
    report.outlier_threshold = cut
    out = [r for r in stage if len(r.payload) <= cut]
    report.outliers = len(stage) - len(out)
    report.kept = len(out)
    return out, report


def balance(records: Sequence[LabeledRecord], seed: int) -> list[LabeledRecord]:
    """Undersample the majority layer-1 class down to the minority count."""
    if any(r.l1_label is None for r in records):
        raise ValueError("balance needs l1_label on every record")
    normal = [r for r in records if r.l1_label == 0]
    anomaly = [r for r in records if r.l1_label == 1]
    if not normal or not anomaly:
        raise SingleClassData(f"balance needs both classes (normal={len(normal)}, anomaly={len(anomaly)})")
    rng = random.Random(seed)
    k = min(len(normal), len(anomaly))
    picked = []
    for group in (normal, anomaly):
        idx = sorted(rng.sample(range(len(group)), k))
        picked.extend(group[i] for i in idx)
    rng.shuffle(picked)
    return picked


def merge(record_lists: Sequence[Sequence[LabeledRecord]], seed: int) -> list[LabeledRecord]:
    if not record_lists:
        raise ValueError("merge needs at least one list")
    out = [r for lst in record_lists for r in lst]
    random.Random(seed).shuffle(out)
    return out


def split(records: Sequence[LabeledRecord], train_fraction: float, seed: int
          ) -> tuple[list[LabeledRecord], list[LabeledRecord]]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    shuffled = list(records)
    random.Random(seed).shuffle(shuffled)
    cut = int(len(shuffled) * train_fraction)
    return shuffled[:cut], shuffled[cut:]


# --- JSONL -------------------------------------------------------------------

def to_jsonl(records: Iterable[LabeledRecord], path: str | os.PathLike) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=True, sort_keys=True))
            fh.write("\n")
            n += 1
    return n


def from_jsonl(path: str | os.PathLike) -> list[LabeledRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(LabeledRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, ValueError, MalformedRequest) as exc:
                raise SchemaViolation(str(exc), line=lineno) from None
    return records
