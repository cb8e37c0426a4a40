"""Randomized source/follow-up generation with a Bayes-factor stopping rule.

For each source the generator keeps drawing follow-ups until one fails (the
source is retired and may become the new most-promising input) or ``K``
consecutive follow-ups pass, where ``K`` is the smallest integer with
``theta**K <= 1/B``. Fresh sources and perturbations of the most-promising
input alternate at random.

Runs are deterministic for a fixed (seed, config, engine, relation) as long
as they end on ``max_cases`` rather than the wall-clock timeout; a timed-out
run is a prefix of the same case sequence.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .engine import FIELD_NAMES, MAX_DEPENDENTS, MIN_AGE, FilingStatus, TaxReturnInput
from .errors import InvalidInputError, SkipFollowUp, SutProtocolError, UnsatisfiablePremiseError
from .relations import Choice, IntRange, MetamorphicRelation, deviance

MAX_REJECTIONS = 10_000
MAX_PERTURB_TRIES = 100
MAX_SKIPS = 100
MAX_SUT_ERRORS = 10
MAX_AGE = 100


@dataclass(frozen=True)
class GeneratorConfig:
    """Run parameters. ``delta``, ``max_credit``, ``max_itemized`` and ``agi_max`` are cents."""

    bayes_factor: float = 100.0
    theta: float = 0.95
    delta: int = 95
    timeout: float = 600.0
    seed: int = 0
    max_credit: int = 1_000_00
    max_itemized: int = 100_000_00
    agi_max: int = 500_000_00
    max_withholding: int = 20_000_00
    max_cases: int | None = None
    explore: float = 0.5

    def __post_init__(self):
        if not self.bayes_factor >= 1:
            raise InvalidInputError("bayes_factor must be >= 1")
        if not 0 < self.theta < 1:
            raise InvalidInputError("theta must lie strictly between 0 and 1")
        if self.delta < 0 or self.timeout < 0:
            raise InvalidInputError("delta and timeout must be non-negative")
        if min(self.max_credit, self.max_itemized, self.agi_max, self.max_withholding) < 0:
            raise InvalidInputError("sampling limits must be non-negative")
        if self.max_cases is not None and self.max_cases < 0:
            raise InvalidInputError("max_cases must be non-negative")
        if not 0 <= self.explore <= 1:
            raise InvalidInputError("explore must be a probability")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")

    @property
    def required_passes(self) -> int:
        return required_consecutive_passes(self.bayes_factor, self.theta)

    def to_dict(self) -> dict:
        return asdict(self)


def required_consecutive_passes(bayes_factor: float, theta: float) -> int:
    """Smallest K with K >= -log2(B) / log2(theta)."""
    if not bayes_factor >= 1:
        raise InvalidInputError("Bayes factor must be >= 1")
    if not 0 < theta < 1:
        raise InvalidInputError("theta must lie in (0, 1)")
    bound = -math.log2(bayes_factor) / math.log2(theta)
    k = math.ceil(bound)
    # an integral bound computed a hair too high must not cost an extra pass
    if k > 0 and abs(bound - (k - 1)) < 1e-9:
        k -= 1
    return max(k, 0)


class Verdict(str, Enum):
    FALSIFIED = "FALSIFIED"
    STATISTICALLY_PASSED = "STATISTICALLY_PASSED"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class CaseTuple:
    records: tuple
    outputs: tuple
    branch: int = 0


@dataclass(frozen=True)
class LabeledCase:
    seq: int
    case: CaseTuple
    deviance: int
    label: str  # "passed" | "failed"
    wall_clock: float | None = None

    @property
    def failed(self) -> bool:
        return self.label == "failed"


@dataclass
class RunResult:
    relation_id: int
    verdict: Verdict
    n_pass: int
    n_fail: int
    first_failure_time: float | None
    max_deviance: int
    argmax_case: CaseTuple | None
    seed: int
    config: GeneratorConfig
    engine: str = ""
    sources: int = 0
    sources_retired: int = 0
    elapsed: float = 0.0
    truncated: bool = False
    cases: list = field(default_factory=list)

    @property
    def n_cases(self) -> int:
        return self.n_pass + self.n_fail


def make_rng(seed: int, relation_id: int) -> np.random.Generator:
    """Per-relation substream: PCG64 seeded with ``seed XOR relation_id``."""
    return np.random.Generator(np.random.PCG64((seed ^ relation_id) & (2**64 - 1)))


def default_domains(config: GeneratorConfig) -> dict:
    half = config.max_itemized // 2
    return {
        "sts": Choice(tuple(FilingStatus)),
        "age": IntRange(MIN_AGE, MAX_AGE),
        "blind": Choice((False, True)),
        "s_age": IntRange(MIN_AGE, MAX_AGE),
        "s_blind": Choice((False, True)),
        "agi": IntRange(0, config.agi_max),
        "withholding": IntRange(0, config.max_withholding),
        "l27": IntRange(0, config.max_credit),
        "qc": IntRange(0, MAX_DEPENDENTS),
        "od": IntRange(0, MAX_DEPENDENTS),
        "l19": IntRange(0, config.max_credit),
        "l29": IntRange(0, config.max_credit),
        "mde": IntRange(0, half),
        "other_itemized": IntRange(0, config.max_itemized - half),
        "iz": Choice((False, True)),
    }


def _resolve(dom, default):
    if isinstance(dom, Choice):
        return dom
    lo = default.lo if dom.lo is None else dom.lo
    hi = default.hi if dom.hi is None else dom.hi
    return IntRange(lo, hi)


def _draw(rng, dom):
    if isinstance(dom, Choice):
        vals = dom.values
        return vals[0] if len(vals) == 1 else vals[int(rng.integers(len(vals)))]
    if dom.lo > dom.hi:
        raise SkipFollowUp(f"empty range [{dom.lo}, {dom.hi}]")
    return int(rng.integers(dom.lo, dom.hi + 1))


class _Sampler:
    """Resolved sampling domains for every branch of one relation."""

    def __init__(self, rel: MetamorphicRelation, domains: dict):
        self.rel = rel
        self.defaults = domains
        self.source_domains = []
        for spec in rel.specs:
            doms = {f: _resolve(spec.source_ranges.get(f, domains[f]), domains[f]) for f in FIELD_NAMES}
            for f, d in doms.items():
                if isinstance(d, IntRange) and d.lo > d.hi:
                    raise UnsatisfiablePremiseError(f"relation {rel.id}: empty sampling range for {f}")
            self.source_domains.append(doms)

    def draw_record(self, rng, doms) -> TaxReturnInput:
        return TaxReturnInput(**{f: _draw(rng, doms[f]) for f in FIELD_NAMES})

    def partner(self, rng, spec, x):
        return x.replace(**{f: _draw(rng, _resolve(d, self.defaults[f])) for f, d in sorted(spec.partner_ranges.items())})

    def fresh(self, rng):
        rel = self.rel
        for _ in range(MAX_REJECTIONS):
            branch = int(rng.integers(len(rel.specs))) if len(rel.specs) > 1 else 0
            spec = rel.specs[branch]
            x = self.draw_record(rng, self.source_domains[branch])
            sources = (x, self.partner(rng, spec, x)) if rel.arity == 4 else (x,)
            if all(c(sources) for c in spec.source_constraints):
                return branch, sources
        raise UnsatisfiablePremiseError(
            f"relation {rel.id}: {MAX_REJECTIONS} consecutive source rejections")

    def perturb(self, rng, branch, sources):
        """Redraw one to three fields of the source near their current values."""
        spec = self.rel.specs[branch]
        doms = self.source_domains[branch]
        free = [f for f in FIELD_NAMES
                if f not in spec.partner_ranges and not (isinstance(doms[f], Choice) and len(doms[f].values) == 1)
                and not (isinstance(doms[f], IntRange) and doms[f].lo == doms[f].hi)]
        if not free:
            return None
        for _ in range(MAX_PERTURB_TRIES):
            n = int(rng.integers(1, min(3, len(free)) + 1))
            picks = rng.choice(len(free), size=n, replace=False)
            changes = {}
            for i in sorted(int(p) for p in picks):
                f = free[i]
                dom = doms[f]
                if isinstance(dom, Choice) or rng.random() < 0.5:
                    changes[f] = _draw(rng, dom)
                else:
                    cur = getattr(sources[0], f)
                    width = max(1, (dom.hi - dom.lo) // 20)
                    changes[f] = min(dom.hi, max(dom.lo, cur + int(rng.integers(-width, width + 1))))
            sts = changes.get("sts", sources[0].sts)
            if sts.married and sources[0].s_age < MIN_AGE and "s_age" not in changes:
                changes["s_age"] = _draw(rng, doms["s_age"])
            x = sources[0].replace(**changes)
            if self.rel.arity == 4:
                x2 = self.partner(rng, spec, x) if rng.random() < 0.5 else x.replace(
                    **{f: getattr(sources[1], f) for f in spec.partner_ranges})
                cand = (x, x2)
            else:
                cand = (x,)
            if all(c(cand) for c in spec.source_constraints):
                return cand
        return None

    def followups(self, rng, branch, sources):
        spec = self.rel.specs[branch]
        values = {}
        for f in FIELD_NAMES:
            if f in spec.followup_draws:
                d = spec.followup_draws[f]
                d = d(sources) if callable(d) else d
                values[f] = _draw(rng, _resolve(d, self.defaults[f]))
        fus = tuple(s.replace(**values) for s in sources)
        if not all(c(sources + fus) for c in spec.followup_constraints):
            raise SkipFollowUp(f"relation {self.rel.id}: follow-up constraints unmet")
        return fus


def sample_source(rel: MetamorphicRelation, rng, config: GeneratorConfig | None = None):
    """Fresh source draw. Returns ``(branch, sources)``."""
    return _Sampler(rel, default_domains(config or GeneratorConfig())).fresh(rng)


def perturb_source(rel, rng, branch, sources, config: GeneratorConfig | None = None):
    """Local move around ``sources``; ``None`` when no valid neighbour was found."""
    return _Sampler(rel, default_domains(config or GeneratorConfig())).perturb(rng, branch, sources)


def uniform_perturb(sources: Sequence[TaxReturnInput], rel, rng, branch: int = 0,
                    config: GeneratorConfig | None = None):
    """Follow-ups for ``sources``: exception fields redrawn, everything else copied.

    Raises :class:`SkipFollowUp` when the follow-up constraints cannot be met.
    """
    return _Sampler(rel, default_domains(config or GeneratorConfig())).followups(rng, branch, tuple(sources))


def run_relation(engine: Callable[[TaxReturnInput], int], rel: MetamorphicRelation,
                 config: GeneratorConfig, *, on_case: Callable[[LabeledCase], None] | None = None,
                 keep_cases: bool = True, clock: Callable[[], float] = time.monotonic) -> RunResult:
    """Generate and label cases for ``rel`` until the timeout or case budget runs out."""
    rng = make_rng(config.seed, rel.id)
    sampler = _Sampler(rel, default_domains(config))
    k_needed = max(1, config.required_passes)
    start = clock()
    result = RunResult(rel.id, Verdict.INCONCLUSIVE, 0, 0, None, 0, None, config.seed, config,
                       engine=getattr(engine, "name", type(engine).__name__))

    def exhausted():
        if config.max_cases is not None and result.n_cases >= config.max_cases:
            return True
        return clock() - start >= config.timeout

    sut_errors = 0

    def evaluate(records):
        nonlocal sut_errors
        try:
            out = tuple(engine(r) for r in records)
        except SutProtocolError:
            sut_errors += 1
            if sut_errors >= MAX_SUT_ERRORS:
                raise
            return None
        sut_errors = 0
        return out

    promising_branch, promising = sampler.fresh(rng)
    while not exhausted():
        if rng.random() < config.explore:
            branch, sources = sampler.fresh(rng)
        else:
            branch = promising_branch
            sources = sampler.perturb(rng, branch, promising)
            if sources is None:
                branch, sources = sampler.fresh(rng)
        src_out = evaluate(sources)
        if src_out is None:
            continue
        result.sources += 1
        passes = skips = 0
        while True:
            if exhausted():
                result.truncated = True
                break
            try:
                fus = sampler.followups(rng, branch, sources)
            except SkipFollowUp:
                skips += 1
                if skips >= MAX_SKIPS:
                    break
                continue
            fu_out = evaluate(fus)
            if fu_out is None:
                continue
            case = CaseTuple(sources + fus, src_out + fu_out, branch)
            dev = deviance(rel, case.outputs)
            failed = dev > config.delta
            labeled = LabeledCase(result.n_cases, case, dev, "failed" if failed else "passed", clock() - start)
            if keep_cases:
                result.cases.append(labeled)
            if on_case is not None:
                on_case(labeled)
            if failed:
                result.n_fail += 1
                if result.first_failure_time is None:
                    result.first_failure_time = labeled.wall_clock
                if dev > result.max_deviance:
                    result.max_deviance = dev
                    result.argmax_case = case
                    promising_branch, promising = branch, sources
                break
            result.n_pass += 1
            passes += 1
            if passes >= k_needed:
                result.sources_retired += 1
                break

    result.elapsed = clock() - start
    if result.n_fail:
        result.verdict = Verdict.FALSIFIED
    elif result.sources_retired:
        result.verdict = Verdict.STATISTICALLY_PASSED
    return result
