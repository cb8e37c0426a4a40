"""JSON-lines suite files and run summaries.

A suite file starts with one header object followed by one object per
labeled case, each on its own line::

    {"schema":"mm1040.suite","version":1,"relation":3,...}
    {"seq":0,"branch":0,"records":[{...},{...}],"outputs":[...],"deviance":100000,"label":"failed"}

Money is integer cents everywhere. ``seq`` is the case's position in the run
and doubles as its (logical) timestamp; wall-clock times live only in the
summary, which keeps suites byte-identical across reruns.
"""
from __future__ import annotations

import json
from pathlib import Path

from .engine import TaxReturnInput
from .errors import InvalidInputError, SuiteFormatError
from .generator import CaseTuple, LabeledCase, RunResult
from .money import fmt

SCHEMA = "mm1040.suite"
SUMMARY_SCHEMA = "mm1040.summary"
VERSION = 1
LABELS = ("passed", "failed")


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True)


def make_header(rel, result_or_config, engine_name: str) -> dict:
    config = getattr(result_or_config, "config", result_or_config)
    return {
        "schema": SCHEMA,
        "version": VERSION,
        "relation": rel.id,
        "domain": rel.domain,
        "arity": rel.arity,
        "engine": engine_name,
        "config": config.to_dict(),
    }


def dumps_case(lc: LabeledCase) -> str:
    return _dumps({
        "seq": lc.seq,
        "branch": lc.case.branch,
        "records": [r.to_wire() for r in lc.case.records],
        "outputs": list(lc.case.outputs),
        "deviance": lc.deviance,
        "label": lc.label,
    })


def parse_case(line: str, lineno: int | None = None) -> LabeledCase:
    try:
        d = json.loads(line)
        if not isinstance(d, dict) or set(d) != {"seq", "branch", "records", "outputs", "deviance", "label"}:
            raise SuiteFormatError("case line has the wrong keys", lineno)
        if d["label"] not in LABELS:
            raise SuiteFormatError(f"bad label {d['label']!r}", lineno)
        records = tuple(TaxReturnInput.from_wire(r) for r in d["records"])
        outputs = tuple(d["outputs"])
        ints = [d["seq"], d["branch"], d["deviance"], *outputs]
        if any(type(v) is not int for v in ints) or len(outputs) != len(records):
            raise SuiteFormatError("malformed case fields", lineno)
    except SuiteFormatError:
        raise
    except (ValueError, TypeError, KeyError, InvalidInputError) as exc:
        raise SuiteFormatError(str(exc), lineno) from None
    return LabeledCase(d["seq"], CaseTuple(records, outputs, d["branch"]), d["deviance"], d["label"])


class SuiteWriter:
    """Streams cases to disk as the generator produces them."""

    def __init__(self, path, header: dict):
        self.path = Path(path)
        self._fh = self.path.open("w", encoding="utf-8", newline="\n")
        self._fh.write(_dumps(header) + "\n")
        self.count = 0

    def write(self, lc: LabeledCase):
        self._fh.write(dumps_case(lc) + "\n")
        self.count += 1

    __call__ = write

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_suite(path, header: dict, cases) -> None:
    with SuiteWriter(path, header) as w:
        for lc in cases:
            w.write(lc)


def read_header(path) -> dict:
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline()
    return _parse_header(first)


def _parse_header(line: str) -> dict:
    if not line.strip():
        raise SuiteFormatError("empty suite file", 1)
    try:
        header = json.loads(line)
    except ValueError as exc:
        raise SuiteFormatError(f"bad header: {exc}", 1) from None
    if not isinstance(header, dict) or header.get("schema") != SCHEMA or header.get("version") != VERSION:
        raise SuiteFormatError("not a version-1 mm1040 suite", 1)
    return header


def iter_cases(path):
    """Yield ``LabeledCase`` objects; raises ``SuiteFormatError`` with the line number."""
    with Path(path).open(encoding="utf-8") as fh:
        _parse_header(fh.readline())
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                raise SuiteFormatError("blank line", lineno)
            yield parse_case(line, lineno)


def read_suite(path):
    return read_header(path), list(iter_cases(path))


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def summary_row(rel, result: RunResult, explanation: dict | None = None) -> dict:
    row = {
        "relation": rel.id,
        "domain": rel.domain,
        "engine": result.engine,
        "verdict": result.verdict.value,
        "cases": result.n_cases,
        "fail": result.n_fail,
        "pass": result.n_pass,
        "first_failure_s": result.first_failure_time,
        "max_deviance": result.max_deviance,
        "sources": result.sources,
        "sources_retired": result.sources_retired,
        "elapsed_s": result.elapsed,
        "seed": result.seed,
    }
    row["explanation"] = explanation or {"kind": "FOL", "premise": rel.premise}
    return row


def summary_document(rows, config) -> dict:
    return {"schema": SUMMARY_SCHEMA, "version": VERSION, "config": config.to_dict(), "relations": rows}


def format_table(rows) -> str:
    head = ("Relation", "#cases", "#fail", "#pass", "1st fail(s)", "max dev", "verdict",
            "type", "acc", "height", "#leaves")
    body = []
    for r in rows:
        ex = r["explanation"]
        tree = ex["kind"] == "DT"
        body.append((
            f"{r['domain']} ({r['relation']})",
            f"{r['cases']:,}",
            f"{r['fail']:,}",
            f"{r['pass']:,}",
            "N/A" if r["first_failure_s"] is None else f"{r['first_failure_s']:.2f}",
            fmt(r["max_deviance"]),
            r["verdict"],
            ex["kind"],
            f"{ex['accuracy']:.1%}" if tree else "-",
            str(ex["height"]) if tree else "-",
            str(ex["leaves"]) if tree else "-",
        ))
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(c.rjust(w) if 0 < i < 6 else c.ljust(w) for i, (c, w) in enumerate(zip(b, widths))))
    return "\n".join(lines) + "\n"
