from __future__ import annotations

import random
from datetime import date, datetime, timedelta

import pytest
from helpers import write_csv
from hypothesis import given, settings
from hypothesis import strategies as st

from insider_bgmm.errors import RowError, SchemaError, VocabularyError
from insider_bgmm.ingest import (
    AuditEvent,
    EventToken,
    aggregate_user_days,
    by_user,
    format_timestamp,
    ingest_directory,
    parse_domain_csv,
    parse_timestamp,
    read_labels,
    read_sequences,
    write_labels,
    write_sequences,
)
from insider_bgmm.synthgen import SynthConfig, generate_org


def test_vocabulary_is_closed():
    assert [t.value for t in EventToken] == ["Logon", "Logoff", "Http", "Email", "File", "Connect", "Disconnect"]
    assert EventToken.parse(" Connect ") is EventToken.CONNECT
    for bad in ("logon", "Upload", "", "Logon2"):
        with pytest.raises(VocabularyError):
            EventToken.parse(bad)


def test_logon_row_maps_through_activity(tmp_path):
    p = write_csv(tmp_path / "logon.csv", ["id", "date", "user", "pc", "activity"], [["{A1}", "01/02/2010 06:49:00", "NGF0157", "PC-6056", "Logon"]])
    (ev,) = parse_domain_csv(p, "logon")
    assert ev == AuditEvent("{A1}", datetime(2010, 1, 2, 6, 49), "NGF0157", EventToken.LOGON)


def test_device_row_maps_disconnect(tmp_path):
    p = write_csv(tmp_path / "device.csv", ["id", "date", "user", "pc", "activity"], [["d", "01/02/2010 07:21:06", "U", "PC", "Disconnect"]])
    assert parse_domain_csv(p, "device")[0].token is EventToken.DISCONNECT


def test_http_event_count_matches_line_count(tmp_path):
    rng = random.Random(3)
    rows = [[f"{{H{i}}}", f"01/{rng.randint(10, 28)}/2010 {rng.randint(10, 23)}:00:00", f"U{i % 7}", "PC-1", f"http://x.com/{i},a"] for i in range(537)]
    p = write_csv(tmp_path / "http.csv", ["id", "date", "user", "pc", "url"], rows)
    # independent oracle: physical data lines in the file
    n_lines = sum(1 for line in p.read_text().splitlines()[1:] if line.strip())
    events = parse_domain_csv(p, "http")
    assert len(events) == n_lines == 537
    assert {e.token for e in events} == {EventToken.HTTP}


def test_fixed_domains_map_to_their_token(tmp_path):
    for dom, tok in (("email", EventToken.EMAIL), ("file", EventToken.FILE)):
        p = write_csv(tmp_path / f"{dom}.csv", ["id", "date", "user", "pc"], [["e", "03/04/2010 10:00:00", "U", "PC"]])
        assert parse_domain_csv(p, dom)[0].token is tok


def test_columns_resolved_from_header(tmp_path):
    p = write_csv(tmp_path / "logon.csv", ["activity", "pc", "USER", "id", "Date"], [["Logoff", "PC", "U9", "x", "12/31/2010 23:59:59"]])
    (ev,) = parse_domain_csv(p, "logon")
    assert (ev.user_id, ev.event_id, ev.token) == ("U9", "x", EventToken.LOGOFF)


def test_quoted_fields_are_ignored_columns(tmp_path):
    p = tmp_path / "email.csv"
    p.write_text('id,date,user,pc,to,content\nm1,01/05/2010 09:00:00,U1,PC,"a@x.com;b@y.com","hello, ""world""\nsecond line"\n')
    (ev,) = parse_domain_csv(p, "email")
    assert ev.event_id == "m1" and ev.token is EventToken.EMAIL


def test_headerless_file_with_explicit_columns(tmp_path):
    p = tmp_path / "http.csv"
    p.write_text("h1,01/05/2010 09:00:00,U1,PC,http://a\n")
    (ev,) = parse_domain_csv(p, "http", columns=["id", "date", "user", "pc", "url"])
    assert ev.user_id == "U1"


@pytest.mark.parametrize("missing", ["id", "date", "user", "activity"])
def test_missing_column_names_the_column(tmp_path, missing):
    header = [c for c in ["id", "date", "user", "pc", "activity"] if c != missing]
    p = write_csv(tmp_path / "logon.csv", header, [])
    with pytest.raises(SchemaError, match=missing):
        parse_domain_csv(p, "logon")


def test_bad_date_reports_line_number(tmp_path):
    rows = [["a", "01/02/2010 06:49:00", "U", "PC", "Logon"], ["b", "2010-01-02 06:49:00", "U", "PC", "Logoff"]]
    p = write_csv(tmp_path / "logon.csv", ["id", "date", "user", "pc", "activity"], rows)
    with pytest.raises(RowError) as info:
        parse_domain_csv(p, "logon")
    assert info.value.line == 3


def test_unknown_or_misplaced_activity(tmp_path):
    p = write_csv(tmp_path / "device.csv", ["id", "date", "user", "pc", "activity"], [["a", "01/02/2010 06:49:00", "U", "PC", "Eject"]])
    with pytest.raises(VocabularyError):
        parse_domain_csv(p, "device")
    p = write_csv(tmp_path / "logon.csv", ["id", "date", "user", "pc", "activity"], [["a", "01/02/2010 06:49:00", "U", "PC", "Connect"]])
    with pytest.raises(VocabularyError, match="not valid for domain"):
        parse_domain_csv(p, "logon")


def test_empty_user_and_short_rows_are_row_errors(tmp_path):
    p = write_csv(tmp_path / "http.csv", ["id", "date", "user", "pc"], [["a", "01/02/2010 06:49:00", " ", "PC"]])
    with pytest.raises(RowError, match="empty user"):
        parse_domain_csv(p, "http")
    p = write_csv(tmp_path / "http.csv", ["id", "date", "user", "pc"], [["a", "01/02/2010 06:49:00"]])
    with pytest.raises(RowError):
        parse_domain_csv(p, "http")


def test_unknown_domain(tmp_path):
    with pytest.raises(ValueError):
        parse_domain_csv(tmp_path / "x.csv", "psychometric")


@pytest.mark.parametrize("text", ["1/2/2010 06:49:00", "01-02-2010 06:49:00", "13/02/2010 06:49:00", "01/02/2010 24:00:00", "0a/02/2010 06:49:00", ""])
def test_parse_timestamp_rejects(text):
    with pytest.raises(ValueError):
        parse_timestamp(text)


@given(st.datetimes(min_value=datetime(1000, 1, 1), max_value=datetime(9999, 12, 31)).map(lambda d: d.replace(microsecond=0)))
def test_timestamp_round_trip(ts):
    assert parse_timestamp(format_timestamp(ts)) == ts


def _ev(eid: str, ts: datetime, user: str = "U1", tok: EventToken = EventToken.HTTP) -> AuditEvent:
    return AuditEvent(eid, ts, user, tok)


def test_aggregate_empty():
    assert aggregate_user_days([]) == []


def test_aggregate_sorts_within_day():
    t0 = datetime(2010, 1, 4, 8)
    events = [
        _ev("c", t0 + timedelta(hours=9), tok=EventToken.LOGOFF),
        _ev("a", t0, tok=EventToken.LOGON),
        _ev("b", t0 + timedelta(hours=1), tok=EventToken.FILE),
    ]
    (seq,) = aggregate_user_days(events)
    assert seq.tokens == (EventToken.LOGON, EventToken.FILE, EventToken.LOGOFF)
    assert seq.day == date(2010, 1, 4) and seq.label is None


def test_equal_timestamps_break_by_event_id():
    t = datetime(2010, 1, 4, 8)
    (seq,) = aggregate_user_days([_ev("{B}", t, tok=EventToken.EMAIL), _ev("{A}", t, tok=EventToken.FILE)])
    assert seq.tokens == (EventToken.FILE, EventToken.EMAIL)


def test_aggregate_groups_sorts_and_labels():
    t = datetime(2010, 1, 4, 23, 59, 59)
    events = [_ev("1", t, "U2"), _ev("2", t + timedelta(seconds=1), "U2"), _ev("3", t, "U1")]
    out = aggregate_user_days(events, labels={("U2", date(2010, 1, 5))})
    assert [(s.user_id, s.day, s.label) for s in out] == [
        ("U1", date(2010, 1, 4), False),
        ("U2", date(2010, 1, 4), False),
        ("U2", date(2010, 1, 5), True),
    ]


_events = st.lists(
    st.builds(
        AuditEvent,
        event_id=st.text("abcdef", min_size=1, max_size=3),
        timestamp=st.datetimes(min_value=datetime(2010, 1, 1), max_value=datetime(2010, 1, 6)).map(lambda d: d.replace(microsecond=0)),
        user_id=st.sampled_from(["U1", "U2", "U3"]),
        token=st.sampled_from(list(EventToken)),
    ),
    max_size=60,
)


@given(_events, st.randoms(use_true_random=False))
@settings(max_examples=150)
def test_aggregation_invariants(events, rnd):
    out = aggregate_user_days(events)
    assert sum(len(s.tokens) for s in out) == len(events)
    assert all(s.tokens for s in out)
    assert [(s.user_id, s.day) for s in out] == sorted({(e.user_id, e.timestamp.date()) for e in events})
    shuffled = list(events)
    rnd.shuffle(shuffled)
    assert aggregate_user_days(shuffled) == out


def test_sequence_and_label_files_round_trip(tmp_path):
    t = datetime(2010, 1, 4, 8)
    seqs = aggregate_user_days([_ev("1", t, "U1"), _ev("2", t, "U2", EventToken.CONNECT)])
    write_sequences(tmp_path / "seq.csv", seqs)
    assert (tmp_path / "seq.csv").read_text().splitlines()[0] == "user,day,tokens"
    labels = {("U2", date(2010, 1, 4))}
    write_labels(tmp_path / "labels.csv", labels)
    assert read_labels(tmp_path / "labels.csv") == labels
    back = read_sequences(tmp_path / "seq.csv", labels)
    assert [s.tokens for s in back] == [s.tokens for s in seqs]
    assert [s.label for s in back] == [False, True]
    assert list(by_user(back)) == ["U1", "U2"]


def test_label_sidecar_requires_header(tmp_path):
    p = write_csv(tmp_path / "labels.csv", ["user", "date"], [["U1", "2010-01-04"]])
    with pytest.raises(SchemaError, match="day"):
        read_labels(p)
    p = write_csv(tmp_path / "labels.csv", ["user", "day"], [["U1", "01/04/2010"]])
    with pytest.raises(RowError):
        read_labels(p)


def test_directory_sequence_count_matches_generator(tmp_path):
    # scaled-down analogue of the large-corpus count check: the generator
    # records how many user-days it made active
    manifest = generate_org(SynthConfig(n_users=20, n_days=60, anomaly_users=2, seed=11), tmp_path)
    seqs = ingest_directory(tmp_path, tmp_path / "labels.csv")
    assert len(seqs) == manifest["active_days"]
    assert sum(len(s.tokens) for s in seqs) == manifest["events"]
    assert sum(s.label for s in seqs) == manifest["positive_days"] == 6


def test_directory_without_domain_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_directory(tmp_path)
