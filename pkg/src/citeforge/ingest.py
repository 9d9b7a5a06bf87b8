"""Record ingestion: parse work files, apply record filters, build a catalog.

Input is newline-delimited JSON, one object per work::

    {"work_id": "10.1/x", "year": 2021, "issn": "1234-567X",
     "authors": ["0000-0001-..."], "refs": ["10.1/y"], "pages": 12}

A CSV file with the same columns is also accepted; ``authors`` and ``refs``
are then ``;``-separated lists.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

from . import __version__

log = logging.getLogger(__name__)

ISSN_RE = re.compile(r"^[0-9]{7}[0-9X]$")
VALID_SUBJECTS = frozenset(range(1, 6))
SAMPLE_DIGITS = frozenset("0123456789X")


class IngestError(Exception):
    """Base class for fatal ingestion problems."""


class RecordFormatError(IngestError):
    """Too many rows of a record file failed to parse."""


@dataclass(frozen=True)
class WorkRecord:
    work_id: str
    year: int
    issn: str | None
    authors: tuple[str, ...]
    refs: tuple[str, ...]
    pages: int | None = None

    def to_json(self) -> dict:
        return {
            "work_id": self.work_id,
            "year": self.year,
            "issn": self.issn,
            "authors": list(self.authors),
            "refs": list(self.refs),
            "pages": self.pages,
        }


@dataclass(frozen=True)
class Catalog:
    works: dict[str, WorkRecord]
    author_index: dict[str, list[str]]
    journal_index: dict[str, list[str]]
    subject_map: dict[str, int] = field(default_factory=dict)
    window: tuple[int, int] = (2020, 2024)
    sample_digit: str | None = None
    citable_only: bool = False
    stats: dict = field(default_factory=dict)

    def subject_of(self, work_id: str) -> int | None:
        issn = self.works[work_id].issn
        return self.subject_map.get(issn) if issn else None

    @property
    def authors(self) -> list[str]:
        return sorted(self.author_index)


def normalize_issn(raw) -> str | None:
    """Strip hyphens/whitespace and uppercase the check digit.

    Returns None for values that do not form a valid 8-character ISSN.
    """
    if raw is None:
        return None
    s = re.sub(r"[\s\-]", "", str(raw)).upper()
    if not s:
        return None
    return s if ISSN_RE.match(s) else None


def _as_list(value) -> list[str]:
    if value is None or value == "":
        return []
    if isinstance(value, str):
        return [v.strip() for v in value.split(";") if v.strip()]
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    raise ValueError(f"expected list, got {type(value).__name__}")


def _dedupe(items: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(items))


def _parse_pages(value) -> int | None:
    if value is None or value == "":
        return None
    if isinstance(value, bool):
        raise ValueError("pages must be an integer")
    if isinstance(value, int):
        return value
    s = str(value).strip()
    # page ranges such as "e1234" carry no explicit count
    return int(s) if s.isdigit() else None


def parse_record(row: dict) -> WorkRecord:
    """Build a WorkRecord from a raw mapping; raises ValueError when malformed."""
    work_id = row.get("work_id")
    if work_id is None or not str(work_id).strip():
        raise ValueError("missing work_id")
    year_raw = row.get("year")
    if year_raw is None or year_raw == "" or isinstance(year_raw, bool):
        raise ValueError("missing year")
    year = int(year_raw)
    return WorkRecord(
        work_id=str(work_id).strip(),
        year=year,
        issn=normalize_issn(row.get("issn")),
        authors=_dedupe(_as_list(row.get("authors"))),
        refs=_dedupe(_as_list(row.get("refs"))),
        pages=_parse_pages(row.get("pages")),
    )


def _iter_rows(path: Path) -> Iterator[tuple[int, dict | None, str]]:
    """Yield (line number, mapping or None, raw text) for every data row."""
    if path.suffix.lower() == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                yield lineno, row, ",".join(str(v) for v in row.values())
        return
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError:
                yield lineno, None, text
                continue
            yield lineno, obj if isinstance(obj, dict) else None, text


def build_indexes(
    works: dict[str, WorkRecord], sample_digit: str | None = None
) -> tuple[dict[str, list[str]], dict[str, list[str]]]:
    author_index: dict[str, list[str]] = defaultdict(list)
    journal_index: dict[str, list[str]] = defaultdict(list)
    for wid in sorted(works):
        w = works[wid]
        for a in w.authors:
            if sample_digit is None or a.endswith(sample_digit):
                author_index[a].append(wid)
        if w.issn:
            journal_index[w.issn].append(wid)
    return dict(author_index), dict(journal_index)


def load_records(
    path: str | Path,
    window: tuple[int, int] = (2020, 2024),
    subjects: dict[str, int] | None = None,
) -> Catalog:
    """Parse a record file into a Catalog restricted to ``window`` (inclusive).

    Malformed rows are skipped and counted. More than half malformed is fatal.
    Duplicate work ids: the last record wins.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"cannot read record file: {path}")
    lo, hi = window
    if lo > hi:
        raise ValueError(f"empty window {window}")

    works: dict[str, WorkRecord] = {}
    n_rows = n_bad = n_outside = n_dupes = 0
    offenders: list[str] = []
    try:
        for lineno, row, raw in _iter_rows(path):
            n_rows += 1
            try:
                if row is None:
                    raise ValueError("not a JSON object")
                rec = parse_record(row)
            except (ValueError, TypeError) as exc:
                n_bad += 1
                if len(offenders) < 5:
                    offenders.append(f"line {lineno}: {exc}: {raw[:80]}")
                continue
            if not lo <= rec.year <= hi:
                n_outside += 1
                continue
            if rec.work_id in works:
                n_dupes += 1
                log.warning("duplicate work_id %s at line %d; keeping last", rec.work_id, lineno)
            works[rec.work_id] = rec
    except OSError as exc:
        raise IngestError(f"cannot read record file: {path}: {exc}") from exc

    if n_rows and n_bad > n_rows / 2:
        raise RecordFormatError(
            f"{n_bad} of {n_rows} rows malformed in {path}; e.g. " + "; ".join(offenders)
        )
    if n_bad:
        log.warning("%d malformed rows skipped in %s", n_bad, path)

    author_index, journal_index = build_indexes(works)
    stats = {
        "rows": n_rows,
        "malformed": n_bad,
        "outside_window": n_outside,
        "duplicates": n_dupes,
        "warnings": n_bad + n_dupes,
        "works": len(works),
    }
    return Catalog(
        works=works,
        author_index=author_index,
        journal_index=journal_index,
        subject_map=dict(subjects or {}),
        window=(lo, hi),
        stats=stats,
    )


def load_subjects(path: str | Path) -> dict[str, int]:
    """Read an ``issn,subject`` CSV into a normalized ISSN -> subject map."""
    out: dict[str, int] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            issn = normalize_issn(row.get("issn"))
            try:
                subject = int(row.get("subject", ""))
            except ValueError:
                subject = -1
            if issn is None or subject not in VALID_SUBJECTS:
                log.warning("skipping subject row %r", row)
                continue
            out[issn] = subject
    return out


def filter_citable(catalog: Catalog) -> Catalog:
    """Drop works with an explicit page count of 1; unknown page info is kept."""
    works = {wid: w for wid, w in catalog.works.items() if w.pages != 1}
    author_index, journal_index = build_indexes(works, catalog.sample_digit)
    stats = dict(catalog.stats, non_citable=len(catalog.works) - len(works), works=len(works))
    return replace(
        catalog,
        works=works,
        author_index=author_index,
        journal_index=journal_index,
        citable_only=True,
        stats=stats,
    )


def sample_authors(catalog: Catalog, last_digit: str) -> Catalog:
    """Keep only author ids whose final character is ``last_digit``.

    Works are never removed; they still route citations between other authors.
    """
    last_digit = str(last_digit).upper()
    if last_digit not in SAMPLE_DIGITS:
        raise ValueError(f"last_digit must be one of 0-9 or X, got {last_digit!r}")
    author_index = {
        a: wids for a, wids in catalog.author_index.items() if a.endswith(last_digit)
    }
    stats = dict(catalog.stats, sampled_authors=len(author_index))
    return replace(catalog, author_index=author_index, sample_digit=last_digit, stats=stats)


def save_catalog(catalog: Catalog, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "works.jsonl").open("w", encoding="utf-8") as fh:
        for wid in sorted(catalog.works):
            fh.write(json.dumps(catalog.works[wid].to_json(), sort_keys=True) + "\n")
    with (out / "subjects.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["issn", "subject"])
        for issn in sorted(catalog.subject_map):
            writer.writerow([issn, catalog.subject_map[issn]])
    manifest = {
        "tool": "citeforge",
        "version": __version__,
        "window": list(catalog.window),
        "filters": {"citable_only": catalog.citable_only, "sample_digit": catalog.sample_digit},
        "counts": dict(catalog.stats, authors=len(catalog.author_index), journals=len(catalog.journal_index)),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_catalog(cat_dir: str | Path) -> Catalog:
    """Reload a catalog directory written by :func:`save_catalog`."""
    cat_dir = Path(cat_dir)
    manifest = json.loads((cat_dir / "manifest.json").read_text())
    window = tuple(manifest["window"])
    catalog = load_records(cat_dir / "works.jsonl", window, load_subjects(cat_dir / "subjects.csv"))
    filters = manifest.get("filters", {})
    if filters.get("citable_only"):
        catalog = filter_citable(catalog)
    if filters.get("sample_digit"):
        catalog = sample_authors(catalog, filters["sample_digit"])
    return catalog
