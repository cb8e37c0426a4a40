"""``mm1040`` command line.

    mm1040 run --sut mutant:M1 --relations 3 --out results/
    mm1040 explain results/rel13.jsonl
    mm1040 relations

Exit codes: 0 every relation statistically passed, 1 some relation was
falsified, 2 some run was inconclusive (none falsified), 64 usage error,
65 unreadable suite, 70 the system under test broke the line protocol.
Every ``run`` flag may also be set through an ``MM1040_<FLAG>`` environment
variable (``--bayes-factor`` -> ``MM1040_BAYES_FACTOR``); flags win.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lextree
from .engine import MutantId, mutant_engine, reference_engine
from .errors import (DegenerateSuiteError, InvalidInputError, SuiteFormatError, SutProtocolError,
                     UnsatisfiablePremiseError)
from .external import ExternalEngine, check_executable
from .generator import GeneratorConfig, Verdict, run_relation
from .money import cents
from .relations import RELATION_IDS, listing, relation
from .suite import SuiteWriter, format_table, iter_cases, make_header, read_header, summary_document, summary_row

EXIT_OK, EXIT_FALSIFIED, EXIT_INCONCLUSIVE = 0, 1, 2
EXIT_USAGE, EXIT_DATA, EXIT_SUT = 64, 65, 70
ENV_PREFIX = "MM1040_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# selections
# ---------------------------------------------------------------------------


def parse_relations(text: str) -> list:
    """``"all"``, ``"3"``, ``"1-4,7"`` -> sorted unique relation ids."""
    text = text.strip().lower()
    if text == "all":
        return list(RELATION_IDS)
    ids = set()
    for part in filter(None, (p.strip() for p in text.split(","))):
        lo, sep, hi = part.partition("-")
        try:
            a = int(lo)
            b = int(hi) if sep else a
        except ValueError:
            raise UsageError(f"bad relation selection {part!r}") from None
        if a > b:
            raise UsageError(f"empty range {part!r}")
        for i in range(a, b + 1):
            if i not in RELATION_IDS:
                raise UsageError(f"unknown relation id {i} (valid: 1-{max(RELATION_IDS)})")
            ids.add(i)
    if not ids:
        raise UsageError("no relations selected")
    return sorted(ids)


@dataclass(frozen=True)
class SutSelector:
    kind: str  # "builtin" | "mutant" | "external"
    arg: str = ""

    @classmethod
    def parse(cls, text: str) -> "SutSelector":
        kind, _, arg = text.partition(":")
        kind = kind.strip().lower()
        if kind in ("builtin", "reference") and not arg:
            return cls("builtin")
        if kind == "mutant":
            try:
                return cls("mutant", MutantId.parse(arg).name)
            except (InvalidInputError, ValueError, KeyError):
                raise UsageError(f"unknown mutant {arg!r}") from None
        if kind == "external" and arg:
            try:
                check_executable(arg)
            except InvalidInputError as exc:
                raise UsageError(str(exc)) from None
            return cls("external", str(Path(arg).resolve()))
        raise UsageError(f"bad --sut {text!r}; use builtin, mutant:M1..M5 or external:/path/to/program")

    def engine(self):
        if self.kind == "builtin":
            return reference_engine()
        if self.kind == "mutant":
            return mutant_engine(self.arg)
        return ExternalEngine(self.arg)


# ---------------------------------------------------------------------------
# explanation
# ---------------------------------------------------------------------------


def _sample_rows(path, n_cases: int, max_rows: int | None, seed: int):
    keep = None
    if max_rows is not None and n_cases > max_rows:
        keep = set(np.random.default_rng(seed).choice(n_cases, size=max_rows, replace=False).tolist())
    return [lc for i, lc in enumerate(iter_cases(path)) if keep is None or i in keep]


def _count_lines(path) -> int:
    with open(path, "rb") as fh:
        return max(0, sum(1 for _ in fh) - 1)


def explain_suite(path, out_dir, params: lextree.TreeParams, max_rows: int | None = None,
                  seed: int = 0, stream=None) -> dict:
    """Explain the failures in one suite file.

    A single-label suite is explained by the relation's premise and no tree
    files are written. Otherwise a lexicographic tree is fitted and written
    as ``<stem>.dot``, ``<stem>.tree.json`` and ``<stem>.predicates.txt``.
    """
    path = Path(path)
    header = read_header(path)
    rel = relation(header["relation"])
    cases = _sample_rows(path, _count_lines(path), max_rows, seed)
    if not cases:
        raise SuiteFormatError("suite holds no cases", 2)
    frame = lextree.flatten(cases, rel, allow_single_label=True)
    if frame.y.min() == frame.y.max():
        label = "failed" if frame.y[0] else "passed"
        if stream:
            print(f"relation {rel.id}: all {len(frame)} cases {label}; explanation is the premise:", file=stream)
            print(f"  {rel.premise}", file=stream)
        return {"kind": "FOL", "premise": rel.premise, "label": label}
    t0 = time.perf_counter()
    tree = lextree.fit(frame, params)
    fit_s = time.perf_counter() - t0
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = path.stem
    files = {"dot": f"{stem}.dot", "json": f"{stem}.tree.json", "predicates": f"{stem}.predicates.txt"}
    report = lextree.predicates_report(tree)
    (out_dir / files["dot"]).write_text(lextree.to_dot(tree), encoding="utf-8")
    (out_dir / files["json"]).write_text(lextree.dumps(tree), encoding="utf-8")
    (out_dir / files["predicates"]).write_text(report, encoding="utf-8")
    acc = lextree.accuracy(tree, frame)
    if stream:
        print(f"relation {rel.id}: tree over {len(frame)} cases, accuracy {acc:.1%}, "
              f"height {tree.height}, {len(tree.leaves())} leaves", file=stream)
        stream.write(report)
    return {"kind": "DT", "accuracy": acc, "height": tree.height, "leaves": len(tree.leaves()),
            "rows": len(frame), "fit_s": fit_s, "files": files}


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    rel_id: int
    sut: SutSelector
    config: GeneratorConfig
    out_dir: str
    params: lextree.TreeParams
    tree_max_rows: int | None
    explain: bool


def _run_job(job: _Job) -> dict:
    rel = relation(job.rel_id)
    engine = job.sut.engine()
    path = Path(job.out_dir) / f"rel{rel.id:02d}.jsonl"
    try:
        with SuiteWriter(path, make_header(rel, job.config, getattr(engine, "name", "engine"))) as writer:
            result = run_relation(engine, rel, job.config, on_case=writer, keep_cases=False)
    finally:
        close = getattr(engine, "close", None)
        if close:
            close()
    explanation = None
    if job.explain and result.n_pass and result.n_fail:
        explanation = explain_suite(path, job.out_dir, job.params, job.tree_max_rows, job.config.seed)
    row = summary_row(rel, result, explanation)
    row["suite"] = path.name
    return row


def exit_code(verdicts) -> int:
    verdicts = list(verdicts)
    if Verdict.FALSIFIED.value in verdicts:
        return EXIT_FALSIFIED
    if Verdict.INCONCLUSIVE.value in verdicts:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def cmd_run(relations, sut: SutSelector, config: GeneratorConfig, out_dir, *, workers: int = 1,
            params: lextree.TreeParams | None = None, tree_max_rows: int | None = 100_000,
            explain: bool = True, stream=sys.stdout) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = params or lextree.TreeParams()
    jobs = [_Job(i, sut, config, str(out), params, tree_max_rows, explain) for i in relations]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(j) for j in jobs]
    doc = summary_document(rows, config)
    doc["sut"] = sut.kind if not sut.arg else f"{sut.kind}:{sut.arg}"
    (out / "summary.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    table = format_table(rows)
    (out / "summary.txt").write_text(table, encoding="utf-8")
    if stream:
        stream.write(table)
    return exit_code(r["verdict"] for r in rows)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _env(name, fallback):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), fallback)


def _opt_int(text):
    return None if str(text).lower() in ("", "none") else int(text)


def _tree_flags(p):
    p.add_argument("--max-depth", type=int, default=_env("max-depth", 12))
    p.add_argument("--min-samples-leaf", type=int, default=_env("min-samples-leaf", 20))
    p.add_argument("--rho", type=float, default=_env("rho", 0.1),
                   help="association threshold for follow-up features (0 disables the ordering)")
    p.add_argument("--tree-max-rows", type=_opt_int, default=_env("tree-max-rows", 100_000),
                   help="subsample larger suites before fitting ('none' keeps every row)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mm1040", description="Metamorphic testing and failure explanation for Form 1040 engines.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)

    run = sub.add_parser("run", help="test relations against an engine")
    run.add_argument("--relations", default=_env("relations", "all"), help="ids, ranges (1-4,7) or 'all'")
    run.add_argument("--sut", default=_env("sut", "builtin"), help="builtin | mutant:M1..M5 | external:PATH")
    run.add_argument("--seed", type=int, default=_env("seed", 0))
    run.add_argument("--timeout", type=float, default=_env("timeout", 600.0), help="seconds per relation")
    run.add_argument("--max-cases", type=_opt_int, default=_env("max-cases", None),
                     help="stop after this many cases (makes runs reproducible byte for byte)")
    run.add_argument("--bayes-factor", type=float, default=_env("bayes-factor", 100.0))
    run.add_argument("--theta", type=float, default=_env("theta", 0.95))
    run.add_argument("--delta", default=_env("delta", "0.95"), help="failure tolerance in dollars")
    run.add_argument("--max-credit", default=_env("max-credit", "1000"), help="credit claim ceiling in dollars")
    run.add_argument("--max-itemized", default=_env("max-itemized", "100000"),
                     help="itemized deduction ceiling in dollars")
    run.add_argument("--workers", type=int, default=_env("workers", os.cpu_count() or 1))
    run.add_argument("--out", default=_env("out", "mm1040-out"))
    run.add_argument("--no-explain", action="store_true", help="skip tree fitting")
    _tree_flags(run)

    ex = sub.add_parser("explain", help="explain the failures recorded in a suite file")
    ex.add_argument("suite")
    ex.add_argument("--out", default=None, help="directory for tree files (default: next to the suite)")
    ex.add_argument("--seed", type=int, default=_env("seed", 0), help="subsampling seed")
    _tree_flags(ex)

    sub.add_parser("relations", help="list the metamorphic relations")
    return ap


def _dollar_cents(text, flag) -> int:
    try:
        return cents(text)
    except (InvalidInputError, ValueError, ArithmeticError):
        raise UsageError(f"{flag} expects a dollar amount, got {text!r}") from None


def _tree_params(args) -> lextree.TreeParams:
    try:
        return lextree.TreeParams(max_depth=args.max_depth, min_samples_leaf=args.min_samples_leaf,
                                  association_threshold=args.rho)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None


def _main(argv) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "relations":
        sys.stdout.write(listing())
        return EXIT_OK
    params = _tree_params(args)
    if args.tree_max_rows is not None and args.tree_max_rows < 2:
        raise UsageError("--tree-max-rows must be at least 2")
    if args.command == "explain":
        suite = Path(args.suite)
        if not suite.is_file():
            raise UsageError(f"no such suite file: {suite}")
        try:
            explain_suite(suite, args.out or suite.parent, params, args.tree_max_rows, args.seed, stream=sys.stdout)
        except (SuiteFormatError, DegenerateSuiteError, InvalidInputError, KeyError) as exc:
            print(f"mm1040: corrupt suite {suite}: {exc}", file=sys.stderr)
            return EXIT_DATA
        return EXIT_OK

    relations = parse_relations(args.relations)
    sut = SutSelector.parse(args.sut)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    try:
        config = GeneratorConfig(bayes_factor=args.bayes_factor, theta=args.theta,
                                 delta=_dollar_cents(args.delta, "--delta"), timeout=args.timeout,
                                 seed=args.seed, max_credit=_dollar_cents(args.max_credit, "--max-credit"),
                                 max_itemized=_dollar_cents(args.max_itemized, "--max-itemized"),
                                 max_cases=args.max_cases)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    try:
        return cmd_run(relations, sut, config, args.out, workers=args.workers, params=params,
                       tree_max_rows=args.tree_max_rows, explain=not args.no_explain)
    except SutProtocolError as exc:
        print(f"mm1040: system under test broke the protocol: {exc}", file=sys.stderr)
        return EXIT_SUT
    except UnsatisfiablePremiseError as exc:
        print(f"mm1040: {exc}", file=sys.stderr)
        return EXIT_SUT
    except OSError as exc:
        raise UsageError(str(exc)) from None


def main(argv=None) -> int:
    try:
        return _main(argv)
    except UsageError as exc:
        print(f"mm1040: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
