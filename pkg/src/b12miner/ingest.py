"""Query-log parsing and zip-to-region mapping.

Logs arrive as JSONL (canonical) or TSV.  Malformed lines are counted and
skipped; a stream that is mostly malformed aborts, since that almost always
means the wrong --format was declared.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .corpus import default_data_path
from .errors import ConfigError, FormatError

REGIONS = ("Northeast", "Midwest", "South", "West")
UNKNOWN_REGION = "Unknown"

JSONL_KEYS = ("user", "query", "zip", "ts")
TSV_COLUMNS = ("user", "query", "zip", "ts")


@dataclass(frozen=True)
class QueryRecord:
    user_id: str
    text: str
    zip_code: str | None      # exactly 5 ASCII digits when present
    timestamp: int


@dataclass
class ParseStats:
    total: int = 0
    emitted: int = 0
    malformed: int = 0
    by_reason: dict = field(default_factory=dict)

    def count_bad(self, reason: str) -> None:
        self.malformed += 1
        self.by_reason[reason] = self.by_reason.get(reason, 0) + 1


def _valid_zip(z: str) -> bool:
    return len(z) == 5 and z.isascii() and z.isdigit()


def _record_from_fields(user, text, zip_code, ts) -> QueryRecord | None:
    user = str(user).strip()
    text = str(text).strip()
    if not user or not text:
        return None
    zip_code = str(zip_code).strip() if zip_code is not None else ""
    if zip_code == "":
        zc = None
    elif _valid_zip(zip_code):
        zc = zip_code
    else:
        return None
    try:
        ts_val = int(ts)
    except (TypeError, ValueError):
        return None
    return QueryRecord(user, text, zc, ts_val)


def _parse_jsonl_line(line: str) -> QueryRecord | None:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    return _record_from_fields(obj.get("user"), obj.get("query"),
                               obj.get("zip"), obj.get("ts"))


def _parse_tsv_line(line: str) -> QueryRecord | None:
    parts = line.split("\t")
    if len(parts) < 4:
        return None
    return _record_from_fields(parts[0], parts[1], parts[2], parts[3])


def parse_log_stream(lines: Iterable[str], fmt: str,
                     stats: ParseStats | None = None) -> Iterator[QueryRecord]:
    """Yield QueryRecords from an iterable of text lines, in input order.

    Blank lines are ignored.  After exhaustion, raises FormatError if more
    than half of the non-blank lines were malformed.
    """
    if fmt not in ("jsonl", "tsv"):
        raise ConfigError(f"unknown log format '{fmt}'")
    parse = _parse_jsonl_line if fmt == "jsonl" else _parse_tsv_line
    if stats is None:
        stats = ParseStats()
    for line in lines:
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        stats.total += 1
        rec = parse(line)
        if rec is None:
            stats.count_bad("bad_line")
            continue
        stats.emitted += 1
        yield rec
    if stats.total and stats.malformed * 2 > stats.total:
        raise FormatError(
            f"{stats.malformed} of {stats.total} lines malformed; "
            f"is the log really {fmt}?"
        )


def parse_log_file(path, fmt: str, stats: ParseStats | None = None) -> Iterator[QueryRecord]:
    p = Path(path)
    with p.open(encoding="utf-8") as f:
        yield from parse_log_stream(f, fmt, stats)


def serialize_record(rec: QueryRecord, fmt: str) -> str:
    if fmt == "jsonl":
        obj = {"user": rec.user_id, "query": rec.text,
               "zip": rec.zip_code or "", "ts": rec.timestamp}
        return json.dumps(obj, ensure_ascii=False)
    if fmt == "tsv":
        return "\t".join([rec.user_id, rec.text, rec.zip_code or "", str(rec.timestamp)])
    raise ConfigError(f"unknown log format '{fmt}'")


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

class RegionMap:
    """3-digit zip prefix -> census region, loaded from a CSV data file."""

    def __init__(self, prefixes: dict[str, str]):
        for prefix, region in prefixes.items():
            if region not in REGIONS:
                raise ConfigError(f"region map names unknown region '{region}'")
            if len(prefix) != 3 or not prefix.isdigit():
                raise ConfigError(f"bad zip prefix '{prefix}'")
        self._prefixes = dict(prefixes)

    @classmethod
    def load(cls, path=None) -> "RegionMap":
        p = Path(path) if path else default_data_path("zip_regions.csv")
        if not p.exists():
            raise ConfigError(f"region map not found: {p}")
        prefixes: dict[str, str] = {}
        with p.open(newline="") as f:
            for row in csv.DictReader(f):
                prefixes[row["prefix"].strip()] = row["region"].strip()
        return cls(prefixes)

    def zip_to_region(self, zip_code) -> str:
        """Total: any unmapped, empty or absent zip yields Unknown."""
        if not zip_code or not _valid_zip(str(zip_code)):
            return UNKNOWN_REGION
        return self._prefixes.get(str(zip_code)[:3], UNKNOWN_REGION)


_default_region_map: RegionMap | None = None


def zip_to_region(zip_code) -> str:
    """Module-level convenience using the shipped prefix table."""
    global _default_region_map
    if _default_region_map is None:
        _default_region_map = RegionMap.load()
    return _default_region_map.zip_to_region(zip_code)
