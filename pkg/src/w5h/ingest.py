"""Raw-source parsing into six-dimension objects.

Sources are mapped onto dimensions by fixed per-source rules (for email:
Subject/body -> what, From/To/Cc -> who, Date -> when, mailbox/folder -> how).
"""

from __future__ import annotations

import calendar
import datetime as dt
import email.utils
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from email.parser import BytesParser
from email.policy import compat32
from pathlib import Path
from typing import Iterable, Mapping

from dateutil import parser as du_parser

from .core import Dataset, SchemaError, TraceObject, W5HError, TIME_TOKEN
from .textproc import strip_html, tokenize

log = logging.getLogger(__name__)


class MalformedMessage(W5HError):
    pass


# --------------------------------------------------------------------- when

_MONTHS = {m.lower(): i for i, m in enumerate(calendar.month_name) if m}
_MONTHS.update({m.lower(): i for i, m in enumerate(calendar.month_abbr) if m})
_ISO_DATE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})(?:$|[T ])")
_YEAR_MONTH = re.compile(r"^(\d{4})[-/](\d{1,2})$")
_MONTH_YEAR = re.compile(r"^([a-z]+)\.?,?\s+(\d{4})$")
_YEAR = re.compile(r"^(\d{4})$")


def _tokens(year: int, month: int | None = None, day: int | None = None) -> list[str]:
    if month is None:
        return [f"{year:04d}"]
    if not 1 <= month <= 12:
        return []
    out = [f"{year:04d}", f"{year:04d}-{month:02d}"]
    if day is not None:
        try:
            dt.date(year, month, day)
        except ValueError:
            return []
        out.append(f"{year:04d}-{month:02d}-{day:02d}")
    out.append(f"month:{month:02d}")
    return out


def normalize_when(date_text: str) -> list[str]:
    """Normalize a date string into multi-granularity time tokens.

    A full calendar date yields ``[YYYY, YYYY-MM, YYYY-MM-DD, month:MM]``, a
    year-month yields ``[YYYY, YYYY-MM, month:MM]``, a bare year ``[YYYY]`` and
    a bare month name ``[month:MM]``. Anything unparseable yields ``[]``.
    The calendar date is taken in the timezone the text states; no UTC shift.
    """
    s = (date_text or "").strip()
    if not s:
        return []
    low = s.lower()
    if TIME_TOKEN.match(low):
        if low.startswith("month:"):
            return [low] if 1 <= int(low[6:]) <= 12 else []
        parts = [int(p) for p in low.split("-")]
        return _tokens(*parts)
    m = _ISO_DATE.match(s)
    if m:
        return _tokens(int(m[1]), int(m[2]), int(m[3]))
    m = _YEAR_MONTH.match(s)
    if m:
        return _tokens(int(m[1]), int(m[2]))
    m = _MONTH_YEAR.match(low)
    if m and m[1] in _MONTHS:
        return _tokens(int(m[2]), _MONTHS[m[1]])
    if low.rstrip(".") in _MONTHS:
        return [f"month:{_MONTHS[low.rstrip('.')]:02d}"]
    m = _YEAR.match(s)
    if m:
        return _tokens(int(m[1]))
    parsed = email.utils.parsedate_tz(s)
    if parsed is not None and parsed[0] > 0:
        return _tokens(parsed[0], parsed[1], parsed[2])
    # Parse twice with different defaults: a field that changes with the
    # default was absent from the text.
    try:
        a = du_parser.parse(s, default=dt.datetime(1904, 1, 1), fuzzy=False)
        b = du_parser.parse(s, default=dt.datetime(1908, 2, 2), fuzzy=False)
    except (ValueError, OverflowError, TypeError):
        return []
    if a.year != b.year:
        return [f"month:{a.month:02d}"] if a.month == b.month else []
    if a.month != b.month:
        return _tokens(a.year)
    if a.day != b.day:
        return _tokens(a.year, a.month)
    return _tokens(a.year, a.month, a.day)


def finest_time_tokens(tokens: Iterable[str]) -> list[str]:
    """The most specific tokens present (days, else months, else years)."""
    tokens = [t for t in tokens if not t.startswith("month:")]
    for width in (10, 7, 4):
        hit = [t for t in tokens if len(t) == width]
        if hit:
            return hit
    return []


# ------------------------------------------------------------------ entities

_WS = re.compile(r"\s+")
_ADDR_SEP = re.compile(r"[._\-]+")


def canonicalize_entity(name_or_address: str, alias_table: Mapping[str, str] | None = None) -> str:
    """Canonical string for a person/place.

    Email addresses collapse to their local part with ``.``, ``_`` and ``-``
    turned into spaces (``John.Smith@enron.com`` -> ``john smith``). The alias
    table is consulted last, first with the canonical form, then with the full
    lowercased address.
    """
    raw = _WS.sub(" ", (name_or_address or "").strip().strip("'\"").lower())
    canon = raw
    if "@" in raw and " " not in raw:
        local = raw.split("@", 1)[0]
        canon = _WS.sub(" ", _ADDR_SEP.sub(" ", local)).strip() or raw
    if alias_table:
        if canon in alias_table:
            return alias_table[canon]
        if raw in alias_table:
            return alias_table[raw]
    return canon


def load_alias_table(path) -> dict[str, str]:
    """Read ``alias<TAB>canonical`` lines; keys are lowercased and whitespace-collapsed."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise SchemaError("alias table lines need a tab separator", n)
            alias, canon = line.split("\t", 1)
            table[_WS.sub(" ", alias.strip().lower())] = _WS.sub(" ", canon.strip().lower())
    return table


# ------------------------------------------------------------------- records


def _dedup(items: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(i for i in items if i))


def parse_trace_record(line: str, *, line_no: int | None = None,
                       alias_table: Mapping[str, str] | None = None) -> TraceObject:
    """Parse one canonical record line, re-applying every normalization.

    Normalizations are idempotent, so ``parse_trace_record(l).to_record() == l``
    for any canonical line ``l``.
    """
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e.msg}", line_no) from None
    if not isinstance(rec, dict) or "id" not in rec or "dims" not in rec:
        raise SchemaError('record needs "id" and "dims"', line_no)
    dims = rec["dims"]
    if not isinstance(dims, dict):
        raise SchemaError('"dims" must be an object', line_no)
    try:
        for d, v in dims.items():
            if not isinstance(v, list):
                raise SchemaError(f"dimension {d!r} must be a list")
        what = [t for item in dims.get("what", []) for t in tokenize(str(item))]
        who = _dedup(canonicalize_entity(str(x), alias_table) for x in dims.get("who", []))
        where = _dedup(canonicalize_entity(str(x), alias_table) for x in dims.get("where", []))
        when = _dedup(t for x in dims.get("when", []) for t in normalize_when(str(x)))
        how = _dedup(_WS.sub(" ", str(x).strip().lower()) for x in dims.get("how", []))
        extra = set(dims) - {"what", "who", "when", "where", "how", "why"}
        if extra:
            raise SchemaError(f"unknown dimensions {sorted(extra)}")
        return TraceObject(str(rec["id"]), {"what": what, "who": who, "when": when,
                                            "where": where, "how": how, "why": dims.get("why", [])})
    except SchemaError as e:
        if e.line is None and line_no is not None:
            raise SchemaError(str(e), line_no) from None
        raise


# --------------------------------------------------------------------- email


def _message_body(msg) -> str:
    if msg.is_multipart():
        parts = []
        for part in msg.walk():
            if part.is_multipart():
                continue
            ctype = part.get_content_type()
            if ctype in ("text/plain", "text/html"):
                parts.append(_decode_part(part, ctype))
        return "\n".join(parts)
    return _decode_part(msg, msg.get_content_type())


def _decode_part(part, ctype: str) -> str:
    payload = part.get_payload(decode=True)
    if payload is None:
        text = part.get_payload()
        text = text if isinstance(text, str) else ""
    else:
        charset = part.get_content_charset() or "latin-1"
        try:
            text = payload.decode(charset, errors="replace")
        except LookupError:
            text = payload.decode("latin-1", errors="replace")
    return strip_html(text) if ctype == "text/html" else text


def _stable_id(*parts: str) -> str:
    h = hashlib.sha1("\x1f".join(parts).encode("utf-8", errors="surrogateescape"))
    return h.hexdigest()[:16]


def parse_enron_message(raw: bytes, mailbox_owner: str, folder: str, *, path: str | None = None,
                        alias_table: Mapping[str, str] | None = None) -> TraceObject:
    """Map one RFC-822 message onto the six dimensions.

    Raises
    ------
    MalformedMessage
        If there is no blank line between header block and body.
    """
    if b"\n\n" not in raw and b"\r\n\r\n" not in raw:
        raise MalformedMessage("no header/body separator")
    msg = BytesParser(policy=compat32).parsebytes(raw)
    addrs = []
    for hdr in ("From", "To", "Cc"):
        values = [str(v) for v in msg.get_all(hdr, [])]
        for name, addr in email.utils.getaddresses(values):
            ent = addr or name
            if ent:
                addrs.append(canonicalize_entity(ent, alias_table))
    date = msg.get("Date")
    when = normalize_when(str(date)) if date else []
    subject = str(msg.get("Subject") or "")
    what = tokenize(subject + "\n" + _message_body(msg))
    key = path if path is not None else str(msg.get("Message-ID") or hashlib.sha1(raw).hexdigest())
    oid = _stable_id(mailbox_owner, folder, key)
    return TraceObject(oid, {"what": what, "who": _dedup(addrs), "when": _dedup(when),
                             "how": (f"email:{mailbox_owner}/{folder}",)})


@dataclass
class IngestStats:
    seen: int = 0
    parsed: int = 0
    malformed: int = 0
    undated: int = 0
    duplicates: int = 0
    owners: set = field(default_factory=set)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["owners"] = len(self.owners)
        return d


def list_maildir(root, owners: Iterable[str] | None = None) -> list[str]:
    """All message files under an Enron-style ``maildir/<owner>/<folder>/..`` tree, sorted."""
    root = Path(root)
    wanted = set(owners) if owners else None
    out = []
    for owner in sorted(os.listdir(root)):
        if wanted is not None and owner not in wanted:
            continue
        base = root / owner
        if not base.is_dir():
            continue
        for dirpath, dirnames, filenames in os.walk(base):
            dirnames.sort()
            rel = os.path.relpath(dirpath, root)
            for fn in sorted(filenames):
                out.append(os.path.join(rel, fn).replace(os.sep, "/"))
    return out


def select_subset(paths: list[str], max_messages: int | None, seed: int = 0) -> list[str]:
    """Deterministic pseudo-random subset: the ``max_messages`` paths with smallest salted hash."""
    if not max_messages or max_messages >= len(paths):
        return list(paths)
    keyed = sorted(paths, key=lambda p: hashlib.sha1(f"{seed}:{p}".encode()).digest())
    return sorted(keyed[:max_messages])


def ingest_maildir(root, *, max_messages: int | None = None, owners: Iterable[str] | None = None,
                   alias_table: Mapping[str, str] | None = None, seed: int = 0) -> tuple[Dataset, IngestStats]:
    root = Path(root)
    paths = select_subset(list_maildir(root, owners), max_messages, seed)
    stats = IngestStats()
    ds = Dataset()
    seen_ids = set()
    for rel in paths:
        stats.seen += 1
        owner, _, rest = rel.partition("/")
        folder = rest.rsplit("/", 1)[0] if "/" in rest else ""
        raw = (root / rel).read_bytes()
        try:
            obj = parse_enron_message(raw, owner, folder, path=rel, alias_table=alias_table)
        except MalformedMessage:
            stats.malformed += 1
            continue
        if obj.id in seen_ids:
            stats.duplicates += 1
            continue
        seen_ids.add(obj.id)
        if not obj["when"]:
            stats.undated += 1
        stats.owners.add(owner)
        stats.parsed += 1
        ds.add(obj)
    if stats.malformed:
        log.warning("skipped %d malformed messages", stats.malformed)
    return ds.freeze(), stats


def read_records(path, alias_table: Mapping[str, str] | None = None) -> Dataset:
    ds = Dataset()
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                ds.add(parse_trace_record(line, line_no=n, alias_table=alias_table))
    return ds.freeze()
