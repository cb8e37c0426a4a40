import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mm1040.engine import FilingStatus, TaxReturnInput
from mm1040.errors import SuiteFormatError
from mm1040.generator import CaseTuple, GeneratorConfig, LabeledCase
from mm1040.relations import relation
from mm1040.suite import (dumps_case, format_table, iter_cases, make_header, parse_case, read_header,
                          read_suite, summary_row, write_suite)

from oracles import mutant_suite


@pytest.fixture(scope="module")
def m5_run():
    return mutant_suite("M5", 16, 5_000)


def test_file_round_trip_is_byte_identical(tmp_path, m5_run):
    path = tmp_path / "s.jsonl"
    write_suite(path, make_header(relation(16), m5_run, "M5"), m5_run.cases)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + m5_run.n_cases
    for lineno, line in enumerate(lines[1:], start=2):
        assert dumps_case(parse_case(line, lineno)) == line
    header, cases = read_suite(path)
    assert header["relation"] == 16 and header["config"]["seed"] == 42
    assert [(c.seq, c.case, c.deviance, c.label) for c in cases] == \
           [(c.seq, c.case, c.deviance, c.label) for c in m5_run.cases]


def test_counts_recomputable_from_lines(tmp_path, m5_run):
    path = tmp_path / "s.jsonl"
    write_suite(path, make_header(relation(16), m5_run, "M5"), m5_run.cases)
    row = summary_row(relation(16), m5_run)
    labels = [json.loads(line)["label"] for line in path.read_text().splitlines()[1:]]
    assert row["cases"] == len(labels)
    assert row["fail"] == labels.count("failed") and row["pass"] == labels.count("passed")
    assert row["max_deviance"] == max(json.loads(line)["deviance"] for line in path.read_text().splitlines()[1:])
    assert row["explanation"]["kind"] == "FOL"


record_st = st.builds(
    TaxReturnInput,
    sts=st.sampled_from(list(FilingStatus)), age=st.integers(18, 100), blind=st.booleans(),
    s_age=st.integers(18, 100), s_blind=st.booleans(), agi=st.integers(0, 10**9),
    withholding=st.integers(0, 10**7), l27=st.integers(0, 10**6), qc=st.integers(0, 10), od=st.integers(0, 10),
    l19=st.integers(0, 10**6), l29=st.integers(0, 10**6), mde=st.integers(0, 10**8),
    other_itemized=st.integers(0, 10**8), iz=st.booleans())


@settings(max_examples=200)
@given(st.integers(0, 10**9), st.lists(record_st, min_size=2, max_size=2), st.integers(-10**9, 10**9),
       st.integers(-10**9, 10**9), st.integers(0, 10**9), st.sampled_from(["passed", "failed"]), st.integers(0, 2))
def test_case_line_round_trip(seq, recs, a, b, dev, label, branch):
    lc = LabeledCase(seq, CaseTuple(tuple(recs), (a, b), branch), dev, label)
    line = dumps_case(lc)
    assert "\n" not in line
    assert dumps_case(parse_case(line)) == line


@pytest.mark.parametrize("bad", [
    "not json",
    "[]",
    '{"seq":0}',
    '{"seq":0,"branch":0,"records":[],"outputs":[],"deviance":0,"label":"maybe"}',
    '{"seq":"0","branch":0,"records":[],"outputs":[],"deviance":0,"label":"passed"}',
    '{"seq":0,"branch":0,"records":[{"agi":-5}],"outputs":[1],"deviance":0,"label":"passed"}',
    '{"seq":0,"branch":0,"records":[{}],"outputs":[1,2],"deviance":0,"label":"passed"}',
])
def test_parse_errors_carry_line_number(bad):
    with pytest.raises(SuiteFormatError) as info:
        parse_case(bad, 7)
    assert info.value.lineno == 7 and str(info.value).startswith("line 7:")


def test_bad_files(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(SuiteFormatError):
        read_header(empty)
    other = tmp_path / "other.jsonl"
    other.write_text('{"schema":"something-else"}\n')
    with pytest.raises(SuiteFormatError):
        read_header(other)
    cfg = GeneratorConfig()
    gap = tmp_path / "gap.jsonl"
    gap.write_text(json.dumps(make_header(relation(3), cfg, "x")) + "\n\n")
    with pytest.raises(SuiteFormatError) as info:
        list(iter_cases(gap))
    assert info.value.lineno == 2


def test_table_mirrors_rows(m5_run):
    row = summary_row(relation(16), m5_run,
                      {"kind": "DT", "accuracy": 0.987, "height": 3, "leaves": 5})
    text = format_table([row])
    head, rule, body = text.splitlines()
    assert head.split()[0] == "Relation" and set(rule) <= {"-", " "}
    assert "ID (16)" in body and "FALSIFIED" in body and "98.7%" in body
    assert f"{m5_run.n_cases:,}" in body
