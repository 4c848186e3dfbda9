import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dxcoverage.ehr import (ClinicalCase, CorpusError, Encounter, Finding, Phenotype, Polarity,
                            SymptomUniverse, Timeline, VisitClass, dump_timeline, read_cases,
                            read_corpus, tokenize, validate_timeline, write_cases, write_corpus)

from conftest import enc, timeline


def test_empty_timeline_is_valid():
    assert validate_timeline(timeline("p")).ok


def test_equal_times_flag_duplicate_time():
    res = validate_timeline(timeline("p", enc("a", 3), enc("b", 3)))
    assert not res.ok
    assert [v.kind for v in res.violations] == ["duplicate-time"]


def test_out_of_order_reported_at_index_1():
    res = validate_timeline(timeline("p", enc("a", 5), enc("b", 2), enc("c", 9)))
    assert [(v.index, v.kind) for v in res.violations] == [(1, "out-of-order")]


def test_duplicate_ids_are_violations():
    res = validate_timeline(timeline("p", enc("a", 1), enc("a", 2)))
    assert [v.kind for v in res.violations] == ["duplicate-id"]


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        enc("a", -1)


def test_codes_are_trimmed_and_uppercased():
    e = enc("a", 0, [" k21.9 "])
    assert e.icd_codes == {"K21.9"}
    assert Phenotype("gerd", frozenset({"K21.0", "k21.9"})).matches(e)


def test_phenotype_needs_codes():
    with pytest.raises(ValueError):
        Phenotype("x", frozenset())


def test_finding_equality_and_both_polarities():
    a = Finding("fever", Polarity.PRESENT)
    assert a == Finding("fever", "present")
    case = ClinicalCase("p", {a, Finding("fever", Polarity.ABSENT)}, "flu")
    assert len(case.findings) == 2


def test_universe_rejects_dangling_synonym():
    with pytest.raises(ValueError):
        SymptomUniverse(("fever",), {"pyrexia": "temperature"})
    with pytest.raises(ValueError):
        SymptomUniverse(("fever", "fever"))


def test_surface_forms_read_underscores_as_spaces(small_universe):
    forms = small_universe.surface_forms()
    assert forms[("chest", "pain")] == "chest_pain"
    assert forms[("pyrexia",)] == "fever"


def test_tokenize_splits_punctuation():
    assert tokenize("No fever; denies Cough.") == ["no", "fever", ";", "denies", "cough", "."]


def test_malformed_corpus_line_names_line(tmp_path):
    good = timeline("p1", enc("a", 0, ["X1"], "fever"))
    path = tmp_path / "c.jsonl"
    path.write_text(dump_timeline(good) + "\n{not json\n")
    with pytest.raises(CorpusError) as err:
        read_corpus(path)
    assert err.value.line == 2
    assert "line 2" in str(err.value)


def test_invalid_timeline_in_corpus_rejected(tmp_path):
    bad = timeline("p1", enc("a", 5), enc("b", 1))
    path = tmp_path / "c.jsonl"
    path.write_text(dump_timeline(bad) + "\n")
    with pytest.raises(CorpusError, match="line 1"):
        read_corpus(path)


def test_cases_round_trip(tmp_path):
    cases = [ClinicalCase("p", {Finding("fever", Polarity.PRESENT),
                                Finding("cough", Polarity.ABSENT)}, "flu")]
    path = tmp_path / "cases.jsonl"
    write_cases(path, cases)
    assert read_cases(path) == cases
    row = json.loads(path.read_text())
    assert set(row) == {"patient_id", "label", "findings"}


codes = st.sets(st.from_regex(r"[A-Z][0-9]{2}\.[0-9]", fullmatch=True), max_size=3)
notes = st.text(st.characters(blacklist_categories=("Cs",)), max_size=40)


@st.composite
def valid_timelines(draw):
    gaps = draw(st.lists(st.integers(1, 400), max_size=8))
    start = draw(st.integers(0, 100))
    times, t = [], start
    for g in gaps:
        times.append(t)
        t += g
    encounters = tuple(
        Encounter(f"e{i}", time, draw(st.sampled_from(list(VisitClass))), draw(codes), draw(notes))
        for i, time in enumerate(times))
    age = draw(st.none() | st.integers(0, 110))
    return Timeline(draw(st.text("abcdef0123", min_size=1, max_size=8)), encounters, age)


@given(valid_timelines())
def test_valid_timelines_round_trip_bit_identically(tl):
    assert validate_timeline(tl).ok
    line = dump_timeline(tl)
    back = Timeline.from_dict(json.loads(line))
    assert back == tl
    assert dump_timeline(back) == line


@given(st.lists(valid_timelines(), max_size=4, unique_by=lambda t: t.patient_id))
def test_corpus_file_round_trip(tmp_path_factory, tls):
    path = tmp_path_factory.mktemp("c") / "corpus.jsonl"
    write_corpus(path, tls)
    first = path.read_bytes()
    assert read_corpus(path) == tls
    write_corpus(path, read_corpus(path))
    assert path.read_bytes() == first
