"""Parsing of CERT-style audit CSVs and aggregation into user-day token sequences.

Every domain file carries at least ``id``, ``date`` and ``user`` columns; the
``logon`` and ``device`` domains additionally carry ``activity``.  Column
positions are resolved from the header so reordered variants parse the same.
"""

from __future__ import annotations

import csv
import sys
from collections import defaultdict
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from datetime import date, datetime
from enum import Enum
from pathlib import Path

from .errors import RowError, SchemaError, VocabularyError

DATE_FORMAT = "%m/%d/%Y %H:%M:%S"
DOMAINS = ("logon", "device", "http", "email", "file")

csv.field_size_limit(min(sys.maxsize, 2**31 - 1))


class EventToken(str, Enum):
    LOGON = "Logon"
    LOGOFF = "Logoff"
    HTTP = "Http"
    EMAIL = "Email"
    FILE = "File"
    CONNECT = "Connect"
    DISCONNECT = "Disconnect"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> EventToken:
        try:
            return _BY_NAME[text.strip()]
        except KeyError:
            raise VocabularyError(f"unknown activity {text!r}") from None


_BY_NAME = {t.value: t for t in EventToken}
TOKEN_ORDER: dict[EventToken, int] = {t: i for i, t in enumerate(EventToken)}

# domains whose token is fixed; the others read it from the activity column
_FIXED_TOKEN = {
    "http": EventToken.HTTP,
    "email": EventToken.EMAIL,
    "file": EventToken.FILE,
}
_ACTIVITY_TOKENS = {
    "logon": {EventToken.LOGON, EventToken.LOGOFF},
    "device": {EventToken.CONNECT, EventToken.DISCONNECT},
}


@dataclass(frozen=True, slots=True)
class AuditEvent:
    event_id: str
    timestamp: datetime
    user_id: str
    token: EventToken


@dataclass(frozen=True, slots=True)
class UserDaySequence:
    user_id: str
    day: date
    tokens: tuple[EventToken, ...]
    label: bool | None = None

    def token_string(self) -> str:
        return " ".join(t.value for t in self.tokens)


def parse_timestamp(text: str) -> datetime:
    """Parse ``MM/DD/YYYY HH:MM:SS``.

    Rearranging into ISO form for ``fromisoformat`` is several times faster
    than ``strptime`` on multi-million row logs; malformed input still raises
    ``ValueError``.
    """
    s = text.strip()
    if len(s) != 19 or s[2] != "/" or s[5] != "/" or s[10] != " " or s[13] != ":" or s[16] != ":":
        raise ValueError(f"bad timestamp {text!r}, expected MM/DD/YYYY HH:MM:SS")
    # separators are pinned above; fromisoformat rejects anything but digits in the fields
    try:
        return datetime.fromisoformat(f"{s[6:10]}-{s[0:2]}-{s[3:5]}T{s[11:]}")
    except ValueError:
        raise ValueError(f"bad timestamp {text!r}, expected MM/DD/YYYY HH:MM:SS") from None


def format_timestamp(ts: datetime) -> str:
    return f"{ts.month:02d}/{ts.day:02d}/{ts.year:04d} {ts.hour:02d}:{ts.minute:02d}:{ts.second:02d}"


def _resolve_columns(header: list[str], domain: str, path: object) -> tuple[int, int, int, int | None]:
    names = [h.strip().lower() for h in header]
    required = ["id", "date", "user"] + (["activity"] if domain in _ACTIVITY_TOKENS else [])
    for col in required:
        if col not in names:
            raise SchemaError(col, path)
    act = names.index("activity") if domain in _ACTIVITY_TOKENS else None
    return names.index("id"), names.index("date"), names.index("user"), act


def iter_domain_csv(path: str | Path, domain: str, columns: list[str] | None = None) -> Iterator[AuditEvent]:
    """Stream events from one domain file.

    ``columns`` supplies column names for headerless dumps; when given, the
    first line is treated as data.
    """
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}; expected one of {DOMAINS}")
    path = Path(path)
    fixed = _FIXED_TOKEN.get(domain)
    allowed = _ACTIVITY_TOKENS.get(domain)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if columns is None:
            header = next(reader, None)
            if header is None:
                raise SchemaError("id", path)
        else:
            header = columns
        i_id, i_date, i_user, i_act = _resolve_columns(header, domain, path)
        width = max(i for i in (i_id, i_date, i_user, i_act) if i is not None) + 1
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) < width:
                raise RowError(line, f"expected at least {width} fields, got {len(row)}", path)
            try:
                ts = parse_timestamp(row[i_date])
            except ValueError as exc:
                raise RowError(line, str(exc), path) from None
            user = row[i_user].strip()
            if not user:
                raise RowError(line, "empty user", path)
            if fixed is not None:
                token = fixed
            else:
                token = EventToken.parse(row[i_act])
                if token not in allowed:
                    raise VocabularyError(f"{path}:{line}: activity {token.value!r} not valid for domain {domain!r}")
            yield AuditEvent(row[i_id], ts, user, token)


def parse_domain_csv(path: str | Path, domain: str, columns: list[str] | None = None) -> list[AuditEvent]:
    return list(iter_domain_csv(path, domain, columns))


def aggregate_user_days(
    events: Iterable[AuditEvent],
    labels: set[tuple[str, date]] | None = None,
) -> list[UserDaySequence]:
    """Group events by (user, calendar day), sorted by timestamp then event id."""
    groups: dict[tuple[str, date], list[tuple[datetime, str, EventToken]]] = defaultdict(list)
    for ev in events:
        groups[(ev.user_id, ev.timestamp.date())].append((ev.timestamp, ev.event_id, ev.token))
    out = []
    for key in sorted(groups):
        items = groups[key]
        # (timestamp, event_id) keys are unique in practice; the token breaks any full tie
        items.sort(key=lambda it: (it[0], it[1], TOKEN_ORDER[it[2]]))
        label = None if labels is None else key in labels
        out.append(UserDaySequence(key[0], key[1], tuple(it[2] for it in items), label))
    return out


def ingest_directory(directory: str | Path, labels_path: str | Path | None = None) -> list[UserDaySequence]:
    """Parse ``<domain>.csv`` for every domain present in ``directory``."""
    directory = Path(directory)
    found = [d for d in DOMAINS if (directory / f"{d}.csv").exists()]
    if not found:
        raise FileNotFoundError(f"no domain CSVs ({', '.join(DOMAINS)}) in {directory}")

    def events() -> Iterator[AuditEvent]:
        for d in found:
            yield from iter_domain_csv(directory / f"{d}.csv", d)

    labels = read_labels(labels_path) if labels_path is not None else None
    return aggregate_user_days(events(), labels)


def read_labels(path: str | Path) -> set[tuple[str, date]]:
    """Read the ``user,day`` sidecar of malicious user-days."""
    path = Path(path)
    out = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        for col in ("user", "day"):
            if col not in header:
                raise SchemaError(col, path)
        iu, iday = header.index("user"), header.index("day")
        for row in reader:
            if not row:
                continue
            try:
                out.add((row[iu].strip(), date.fromisoformat(row[iday].strip())))
            except (ValueError, IndexError) as exc:
                raise RowError(reader.line_num, str(exc), path) from None
    return out


def write_labels(path: str | Path, labels: Iterable[tuple[str, date]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "day"])
        for user, day in sorted(labels):
            w.writerow([user, day.isoformat()])


def write_sequences(path: str | Path, sequences: Iterable[UserDaySequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "day", "tokens"])
        for seq in sequences:
            w.writerow([seq.user_id, seq.day.isoformat(), seq.token_string()])


def read_sequences(path: str | Path, labels: set[tuple[str, date]] | None = None) -> list[UserDaySequence]:
    path = Path(path)
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("user", "day", "tokens"):
            if reader.fieldnames is None or col not in reader.fieldnames:
                raise SchemaError(col, path)
        for row in reader:
            day = date.fromisoformat(row["day"])
            tokens = tuple(EventToken.parse(t) for t in row["tokens"].split())
            if not tokens:
                raise RowError(reader.line_num, "empty token list", path)
            label = None if labels is None else (row["user"], day) in labels
            out.append(UserDaySequence(row["user"], day, tokens, label))
    return out


def by_user(sequences: Iterable[UserDaySequence]) -> dict[str, list[UserDaySequence]]:
    """Split sequences per user, preserving order."""
    out: dict[str, list[UserDaySequence]] = defaultdict(list)
    for seq in sequences:
        out[seq.user_id].append(seq)
    return dict(out)
