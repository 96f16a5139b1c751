import pytest

from w5h.core import QueryObject, SchemaError, TraceObject, matches
from w5h.ingest import (MalformedMessage, canonicalize_entity, finest_time_tokens, ingest_maildir,
                        load_alias_table, normalize_when, parse_enron_message, parse_trace_record)
from w5h.synthetic import InvalidProfile, Pin, SyntheticProfile, generate_synthetic_dataset
from w5h.textproc import tokenize


@pytest.mark.parametrize("text,expected", [
    ("June 2016", ["2016", "2016-06", "month:06"]),
    ("June 2017", ["2017", "2017-06", "month:06"]),
    ("", []),
    ("2018-03-09T14:22:01Z", ["2018", "2018-03", "2018-03-09", "month:03"]),
    ("Mon, 14 May 2001 16:39:00 -0700", ["2001", "2001-05", "2001-05-14", "month:05"]),
    ("2016-06", ["2016", "2016-06", "month:06"]),
    ("2016", ["2016"]),
    ("June", ["month:06"]),
    ("not a date", []),
    ("2018-02-30", []),
])
def test_normalize_when(text, expected):
    assert normalize_when(text) == expected


def test_month_query_matches_both_years():
    q = QueryObject({"when": ["month:06"]})
    for text in ("June 2016", "June 2017"):
        assert matches(q, TraceObject("x", {"when": normalize_when(text)}))


def test_normalize_when_tokens_distinct():
    for text in ("2018-03-09", "March 2018", "Tue, 1 Feb 2000 09:00:00 +0100", "12 August 1999"):
        toks = normalize_when(text)
        assert toks and len(set(toks)) == len(toks)


def test_timezone_kept_local():
    # late evening in the stated zone stays on that calendar day
    assert "2001-05-14" in normalize_when("Mon, 14 May 2001 23:30:00 -0700")


def test_finest_time_tokens():
    assert finest_time_tokens(["2018", "2018-06", "2018-06-12", "month:06"]) == ["2018-06-12"]
    assert finest_time_tokens(["2018", "2018-06", "month:06"]) == ["2018-06"]
    assert finest_time_tokens(["month:06"]) == []


@pytest.mark.parametrize("raw,expected", [
    ("John.Smith@enron.com", "john smith"),
    ("JOHN SMITH", "john smith"),
    ("j_smith-jr@x.org", "j smith jr"),
    ("  Mary   Jones ", "mary jones"),
])
def test_canonicalize_entity(raw, expected):
    assert canonicalize_entity(raw) == expected


def test_alias_table(tmp_path):
    p = tmp_path / "alias.tsv"
    p.write_text("# comment\nJ. Smith\tjohn smith\n")
    table = load_alias_table(p)
    assert canonicalize_entity("J. Smith", table) == "john smith"
    bad = tmp_path / "bad.tsv"
    bad.write_text("no tab here\n")
    with pytest.raises(SchemaError):
        load_alias_table(bad)


def test_tokenize():
    assert tokenize("The Lunch meeting's at NOON, ok?") == ["lunch", "meeting", "noon", "ok"]


MSG = (b"Message-ID: <1@x>\nDate: Mon, 14 May 2001 16:39:00 -0700\nFrom: a@enron.com\n"
       b"To: b@enron.com\nCc: Carol.Lee@enron.com\nSubject: lunch meeting\n\nLet us get lunch.\n")


def test_parse_enron_message():
    o = parse_enron_message(MSG, "allen-p", "inbox", path="allen-p/inbox/1.")
    assert set(o["who"]) == {"a", "b", "carol lee"}
    assert o["when"] == ("2001", "2001-05", "2001-05-14", "month:05")
    assert {"lunch", "meeting"} <= set(o["what"])
    assert o["how"] == ("email:allen-p/inbox",)
    assert o["where"] == () and o["why"] == ()
    again = parse_enron_message(MSG, "allen-p", "inbox", path="allen-p/inbox/1.")
    assert again == o


def test_parse_enron_message_edge_cases():
    no_date = parse_enron_message(b"From: a@x.com\nSubject: hi there\n\nbody\n", "o", "f")
    assert no_date["when"] == ()
    with pytest.raises(MalformedMessage):
        parse_enron_message(b"From: a@x.com\nSubject: broken", "o", "f")


def test_ingest_maildir(tmp_path):
    root = tmp_path / "maildir"
    (root / "allen-p" / "inbox").mkdir(parents=True)
    (root / "bass-e" / "sent").mkdir(parents=True)
    (root / "allen-p" / "inbox" / "1.").write_bytes(MSG)
    (root / "allen-p" / "inbox" / "2.").write_bytes(b"garbage without separator")
    (root / "bass-e" / "sent" / "1.").write_bytes(MSG.replace(b"lunch", b"dinner"))
    ds, stats = ingest_maildir(root)
    assert len(ds) == 2 and stats.malformed == 1 and stats.parsed == 2
    ds2, _ = ingest_maildir(root)
    assert [o.to_record() for o in ds] == [o.to_record() for o in ds2]
    sub, _ = ingest_maildir(root, max_messages=1)
    assert len(sub) <= 1


def test_parse_trace_record():
    o = parse_trace_record('{"id":"r1","dims":{"who":["John Smith"],"when":["June 2016"],"what":["Lunch!"]}}')
    assert o["who"] == ("john smith",)
    assert o["when"] == ("2016", "2016-06", "month:06")
    line = o.to_record()
    assert parse_trace_record(line).to_record() == line
    with pytest.raises(SchemaError) as e:
        parse_trace_record('{"id":"r1"}', line_no=7)
    assert e.value.line == 7
    with pytest.raises(SchemaError):
        parse_trace_record("not json")


def test_synthetic_deterministic():
    a = [o.to_record() for o in generate_synthetic_dataset(7, 100)]
    b = [o.to_record() for o in generate_synthetic_dataset(7, 100)]
    assert a == b
    assert len(generate_synthetic_dataset(7, 1)) == 1


def test_synthetic_pins():
    prof = SyntheticProfile(pins=[Pin("john", 10, {"gmail": 6})])
    d = generate_synthetic_dataset(3, 200, prof)
    john = [o for o in d if "john" in o["who"]]
    assert len(john) == 10
    assert sum("gmail" in o["how"] for o in john) == 6


def test_synthetic_invalid_profile():
    with pytest.raises(InvalidProfile):
        generate_synthetic_dataset(1, 10, SyntheticProfile(sources={"a": -1.0, "b": 0.5}))
    with pytest.raises(InvalidProfile):
        generate_synthetic_dataset(1, 10, SyntheticProfile(sources={"a": 0.0}))
    with pytest.raises(InvalidProfile):
        generate_synthetic_dataset(1, 0)
