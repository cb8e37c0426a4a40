"""The 16 metamorphic relations over 2020 Form 1040 records.

A relation quantifies over a tuple of records: ``(x, y)`` for arity 2 and
``(x, x', y, y')`` for arity 4. Sources come first, follow-ups second, and
each follow-up equals its source outside the relation's exception labels.

Relations are plain data plus small predicates. Each alternative premise
(the disjuncts of relations 1, 2 and 5) is its own :class:`MetamorphoseSpec`.
Sampling ranges travel with each spec so the generator can draw records that
already satisfy most constraints; the constraints themselves stay the
authority.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

from .engine import (
    FIELD_NAMES,
    FilingStatus,
    TaxReturnInput,
    default_config,
    schedule_a_total,
    standard_deduction,
    tax_before_credits,
)
from .errors import InvalidInputError

MFJ, MFS = FilingStatus.MFJ, FilingStatus.MFS

SENIOR = 65
EITC_CAP_MFJ = 56_844_00
ETC_FULL_MFJ = 160_000_00
ETC_ZERO_MFJ = 180_000_00
CTC_HIGH_WATER = 200_000_00
CTC_PHASEOUT = 400_000_00
STD_MFJ = 24_800_00
MEDICAL_FLOOR_PERMILLE = 75
QC_CAP_EITC = 3

# form line labels -> record fields; L12 is the Schedule A total, driven by both
LABEL_FIELDS = {
    "age": ("age",),
    "blind": ("blind",),
    "s_age": ("s_age",),
    "s_blind": ("s_blind",),
    "AGI": ("agi",),
    "L27": ("l27",),
    "QC": ("qc",),
    "OD": ("od",),
    "L19": ("l19",),
    "L29": ("l29",),
    "MDE": ("mde",),
    "L12": ("other_itemized", "mde"),
    "iz": ("iz",),
}


class Comparator(str, Enum):
    EQ = "EQ"  # F(x) = F(y)
    GEQ = "GEQ"  # F(x) >= F(y)
    LEQ = "LEQ"  # F(x) <= F(y)
    DIFF_GEQ = "DIFF_GEQ"  # F(x) - F(y) >= F(x') - F(y')

    @property
    def arity(self) -> int:
        return 4 if self is Comparator.DIFF_GEQ else 2


@dataclass(frozen=True)
class IntRange:
    """Closed integer interval; ``None`` bounds fall back to the field default."""

    lo: int | None = None
    hi: int | None = None


@dataclass(frozen=True)
class Choice:
    values: tuple


def fixed(value) -> Choice:
    return Choice((value,))


@dataclass(frozen=True)
class Constraint:
    text: str
    test: Callable[[Sequence[TaxReturnInput]], bool] = field(compare=False)

    def __call__(self, records) -> bool:
        return bool(self.test(records))

    def __str__(self):
        return self.text


@dataclass(frozen=True)
class MetamorphoseSpec:
    """One alternative premise: what the sources look like and how follow-ups differ.

    ``source_constraints`` see the source tuple ``(x,)`` or ``(x, x')``;
    ``followup_constraints`` see the whole case tuple. ``followup_draws`` maps
    every field of the exception set to a domain (or a function of the
    sources returning one); the drawn value is shared by all follow-ups.
    ``partner_ranges`` (arity 4 only) lists the fields in which ``x'``
    departs from ``x``.
    """

    exception_labels: frozenset
    source_constraints: tuple
    followup_constraints: tuple
    followup_draws: Mapping
    source_ranges: Mapping = field(default_factory=dict)
    partner_ranges: Mapping = field(default_factory=dict)

    @property
    def exception_fields(self) -> frozenset:
        return frozenset(f for lab in self.exception_labels for f in LABEL_FIELDS[lab])

    def __post_init__(self):
        if set(self.followup_draws) != set(self.exception_fields):
            raise ValueError("follow-up draws must cover exactly the exception fields")


@dataclass(frozen=True)
class MetamorphicRelation:
    id: int
    domain: str
    arity: int
    specs: tuple
    comparator: Comparator
    premise: str
    conclusion: str

    @property
    def spec(self) -> MetamorphoseSpec:
        return self.specs[0]

    def listing(self) -> str:
        return f"{self.id:>2}  {self.domain:<10} {self.comparator.value:<8} {self.premise} => {self.conclusion}"


# ---------------------------------------------------------------------------
# vocabulary shared by the premises
# ---------------------------------------------------------------------------


def l12(r: TaxReturnInput) -> int:
    return schedule_a_total(r, default_config())


def liability(r: TaxReturnInput) -> int:
    """Reference tax before credits (what non-refundable credits can absorb)."""
    cfg = default_config()
    ded = schedule_a_total(r, cfg) if r.iz else standard_deduction(r, cfg)
    return tax_before_credits(max(0, r.agi - ded), r.sts, cfg)


def ceil_1k(amount: int) -> int:
    return -(-amount // 1000_00) * 1000_00


def _c(text, fn):
    return Constraint(text, fn)


def _x(text, pred):
    """Constraint on the first source record."""
    return Constraint(text, lambda rs: pred(rs[0]))


def _pair_equal(fields_, text):
    """x' equals x outside ``fields_``."""
    keep = [f for f in FIELD_NAMES if f not in fields_]
    return Constraint(text, lambda rs: all(getattr(rs[0], f) == getattr(rs[1], f) for f in keep))


POSITIVE = IntRange(100, None)  # claims are sampled from $1.00 up

# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------


def _build() -> tuple:
    rels = []

    def add(id_, domain, specs, comparator, premise, conclusion):
        arity = comparator.arity
        rels.append(MetamorphicRelation(id_, domain, arity, tuple(specs), comparator, premise, conclusion))

    def zero_claim(label, fld, extra_sources, ranges, status_text=None):
        return MetamorphoseSpec(
            exception_labels=frozenset({label}),
            source_constraints=tuple(extra_sources) + (_x(f"x.{label} > 0", lambda r: getattr(r, fld) > 0),),
            followup_constraints=(_c(f"y.{label} = 0", lambda rs: getattr(rs[1], fld) == 0),),
            followup_draws={fld: fixed(0)},
            source_ranges={fld: POSITIVE, **ranges},
        )

    # 1 Disability
    add(1, "Disability", [
        MetamorphoseSpec(
            frozenset({"age"}),
            (_x("x.age >= 65", lambda r: r.age >= SENIOR),),
            (_c("y.age < 65", lambda rs: rs[1].age < SENIOR),),
            {"age": IntRange(18, SENIOR - 1)},
            source_ranges={"age": IntRange(SENIOR, None)},
        ),
        MetamorphoseSpec(
            frozenset({"blind"}),
            (_x("x.blind", lambda r: r.blind),),
            (_c("not y.blind", lambda rs: not rs[1].blind),),
            {"blind": fixed(False)},
            source_ranges={"blind": fixed(True)},
        ),
    ], Comparator.GEQ,
        "(x =_{age} y and x.age >= 65 and y.age < 65) or (x =_{blind} y and x.blind and not y.blind)",
        "F(x) >= F(y)")

    # 2 Disability (spouse)
    is_mfj = _x("x.sts = MFJ", lambda r: r.sts is MFJ)
    add(2, "Disability", [
        MetamorphoseSpec(
            frozenset({"s_age"}),
            (is_mfj, _x("x.s_age >= 65", lambda r: r.s_age >= SENIOR)),
            (_c("y.s_age < 65", lambda rs: rs[1].s_age < SENIOR),),
            {"s_age": IntRange(18, SENIOR - 1)},
            source_ranges={"sts": fixed(MFJ), "s_age": IntRange(SENIOR, None)},
        ),
        MetamorphoseSpec(
            frozenset({"s_blind"}),
            (is_mfj, _x("x.s_blind", lambda r: r.s_blind)),
            (_c("not y.s_blind", lambda rs: not rs[1].s_blind),),
            {"s_blind": fixed(False)},
            source_ranges={"sts": fixed(MFJ), "s_blind": fixed(True)},
        ),
    ], Comparator.GEQ,
        "x.sts = MFJ and ((x =_{s_age} y and x.s_age >= 65 and y.s_age < 65)"
        " or (x =_{s_blind} y and x.s_blind and not y.s_blind))",
        "F(x) >= F(y)")

    # 3-6 EITC
    is_mfs = _x("x.sts = MFS", lambda r: r.sts is MFS)
    add(3, "EITC", [zero_claim("L27", "l27", [is_mfs], {"sts": fixed(MFS)})], Comparator.EQ,
        "x.sts = MFS and x =_{L27} y and x.L27 > 0 and y.L27 = 0", "F(x) = F(y)")

    above_eitc = _x("x.AGI > 56,844", lambda r: r.agi > EITC_CAP_MFJ)
    add(4, "EITC", [zero_claim("L27", "l27", [is_mfj, above_eitc],
                               {"sts": fixed(MFJ), "agi": IntRange(EITC_CAP_MFJ + 1, None)})],
        Comparator.EQ,
        "x.sts = MFJ and x.AGI > 56,844 and x =_{L27} y and x.L27 > 0 and y.L27 = 0", "F(x) = F(y)")

    within_eitc = _x("x.AGI <= 56,844", lambda r: r.agi <= EITC_CAP_MFJ)
    add(5, "EITC", [
        MetamorphoseSpec(
            frozenset({"AGI"}),
            (is_mfj, within_eitc),
            (_c("y.AGI > 56,844", lambda rs: rs[1].agi > EITC_CAP_MFJ),),
            {"agi": IntRange(EITC_CAP_MFJ + 1, None)},
            source_ranges={"sts": fixed(MFJ), "agi": IntRange(0, EITC_CAP_MFJ)},
        ),
        zero_claim("L27", "l27", [is_mfj], {"sts": fixed(MFJ)}),
        MetamorphoseSpec(
            frozenset({"QC"}),
            (is_mfj, _x("x.QC >= 1", lambda r: r.qc >= 1)),
            (_c("y.QC = 0", lambda rs: rs[1].qc == 0),),
            {"qc": fixed(0)},
            source_ranges={"sts": fixed(MFJ), "qc": IntRange(1, None)},
        ),
    ], Comparator.GEQ,
        "x.sts = MFJ and ((x =_{AGI} y and x.AGI <= 56,844 and y.AGI > 56,844)"
        " or (x =_{L27} y and x.L27 > 0 and y.L27 = 0) or (x =_{QC} y and x.QC >= 1 and y.QC = 0))",
        "F(x) >= F(y)")

    add(6, "EITC", [MetamorphoseSpec(
        frozenset({"L27"}),
        (is_mfj, within_eitc, _x("x.QC <= 3", lambda r: r.qc <= QC_CAP_EITC)),
        (_c("x.L27 >= y.L27", lambda rs: rs[0].l27 >= rs[1].l27),),
        {"l27": lambda src: IntRange(0, src[0].l27)},
        source_ranges={"sts": fixed(MFJ), "agi": IntRange(0, EITC_CAP_MFJ), "qc": IntRange(0, QC_CAP_EITC)},
    )], Comparator.GEQ,
        "x.sts = MFJ and x.AGI <= 56,844 and x.QC <= 3 and x =_{L27} y and x.L27 >= y.L27",
        "F(x) >= F(y)")

    # 7-8 CTC
    add(7, "CTC", [MetamorphoseSpec(
        frozenset({"L19"}),
        (is_mfj, _x("x.AGI <= 200k", lambda r: r.agi <= CTC_HIGH_WATER)),
        (_c("x.L19 >= y.L19", lambda rs: rs[0].l19 >= rs[1].l19),),
        {"l19": lambda src: IntRange(0, src[0].l19)},
        source_ranges={"sts": fixed(MFJ), "agi": IntRange(0, CTC_HIGH_WATER)},
    )], Comparator.GEQ,
        "x.sts = MFJ and x.AGI <= 200k and x =_{L19} y and x.L19 >= y.L19", "F(x) >= F(y)")

    both_mfj = _c("x.sts = x'.sts = MFJ", lambda rs: rs[0].sts is MFJ and rs[1].sts is MFJ)
    absorbed = _x("liability(x) >= x.L19 + x.L29", lambda r: liability(r) >= r.l19 + r.l29)

    def shared(fld, label):
        return _c(f"y.{label} = y'.{label} <= x.{label} = x'.{label}",
                  lambda rs: getattr(rs[2], fld) == getattr(rs[3], fld) <= getattr(rs[0], fld)
                  and getattr(rs[0], fld) == getattr(rs[1], fld))

    add(8, "CTC", [MetamorphoseSpec(
        frozenset({"QC", "OD"}),
        (both_mfj, _pair_equal({"agi"}, "x =_{AGI} x'"),
         _c("x.AGI < 400k", lambda rs: rs[0].agi < CTC_PHASEOUT),
         _c("x'.AGI >= 400k", lambda rs: rs[1].agi >= CTC_PHASEOUT),
         _c("ceil_1k(x'.AGI - 400k) * 0.05 < x'.QC * 2k + x.OD * 0.5k",
            lambda rs: ceil_1k(rs[1].agi - CTC_PHASEOUT) * 5 < (rs[1].qc * 2000_00 + rs[0].od * 500_00) * 100),
         absorbed),
        (shared("qc", "QC"), shared("od", "OD")),
        {"qc": lambda src: IntRange(0, src[0].qc), "od": lambda src: IntRange(0, src[0].od)},
        source_ranges={"sts": fixed(MFJ), "agi": IntRange(0, CTC_PHASEOUT - 1)},
        partner_ranges={"agi": IntRange(CTC_PHASEOUT, None)},
    )], Comparator.DIFF_GEQ,
        "x.sts = x'.sts = MFJ and x =_{AGI} x' and x.AGI < 400k and x'.AGI >= 400k"
        " and ceil_1k(x'.AGI - 400k) * 0.05 < x'.QC * 2k + x.OD * 0.5k and liability(x) >= x.L19 + x.L29"
        " and x =_{QC,OD} y and x' =_{QC,OD} y' and y.QC = y'.QC <= x.QC = x'.QC"
        " and y.OD = y'.OD <= x.OD = x'.OD",
        "F(x) - F(y) >= F(x') - F(y')")

    # 9-12 ETC
    add(9, "ETC", [zero_claim("L29", "l29", [is_mfs], {"sts": fixed(MFS)})], Comparator.EQ,
        "x.sts = MFS and x =_{L29} y and x.L29 > 0 and y.L29 = 0", "F(x) = F(y)")

    add(10, "ETC", [zero_claim("L29", "l29", [is_mfj, _x("x.AGI > 180k", lambda r: r.agi > ETC_ZERO_MFJ)],
                               {"sts": fixed(MFJ), "agi": IntRange(ETC_ZERO_MFJ + 1, None)})],
        Comparator.EQ,
        "x.sts = MFJ and x.AGI > 180k and x =_{L29} y and x.L29 > 0 and y.L29 = 0", "F(x) = F(y)")

    add(11, "ETC", [MetamorphoseSpec(
        frozenset({"L29"}),
        (is_mfj, _x("x.AGI < 160k", lambda r: r.agi < ETC_FULL_MFJ)),
        (_c("x.L29 >= y.L29", lambda rs: rs[0].l29 >= rs[1].l29),),
        {"l29": lambda src: IntRange(0, src[0].l29)},
        source_ranges={"sts": fixed(MFJ), "agi": IntRange(0, ETC_FULL_MFJ - 1)},
    )], Comparator.GEQ,
        "x.sts = MFJ and x.AGI < 160k and x =_{L29} y and x.L29 >= y.L29", "F(x) >= F(y)")

    add(12, "ETC", [MetamorphoseSpec(
        frozenset({"L29"}),
        (both_mfj, _pair_equal({"agi"}, "x =_{AGI} x'"),
         _c("x.AGI <= 160k", lambda rs: rs[0].agi <= ETC_FULL_MFJ),
         _c("160k <= x'.AGI <= 180k", lambda rs: ETC_FULL_MFJ <= rs[1].agi <= ETC_ZERO_MFJ),
         absorbed),
        (shared("l29", "L29"),),
        {"l29": lambda src: IntRange(0, src[0].l29)},
        source_ranges={"sts": fixed(MFJ), "agi": IntRange(0, ETC_FULL_MFJ)},
        partner_ranges={"agi": IntRange(ETC_FULL_MFJ, ETC_ZERO_MFJ)},
    )], Comparator.DIFF_GEQ,
        "x.sts = x'.sts = MFJ and x =_{AGI} x' and x.AGI <= 160k and 160k <= x'.AGI <= 180k"
        " and liability(x) >= x.L19 + x.L29 and x =_{L29} y and x' =_{L29} y'"
        " and x.L29 = x'.L29 >= y.L29 = y'.L29",
        "F(x) - F(y) >= F(x') - F(y')")

    # 13-16 itemized deductions
    no_l12 = _c("y.L12 = 0", lambda rs: rs[1].mde == 0 and rs[1].other_itemized == 0)
    l12_zero = {"mde": fixed(0), "other_itemized": fixed(0)}
    add(13, "ID", [MetamorphoseSpec(
        frozenset({"L12"}),
        (_x("x.iz", lambda r: r.iz),
         _x("x.other_itemized = 0", lambda r: r.other_itemized == 0),
         _x("x.L12 > 0 (x.MDE > 0)", lambda r: r.mde > 0),
         _x("x.MDE <= x.AGI * 7.5%", lambda r: r.mde * 1000 <= r.agi * MEDICAL_FLOOR_PERMILLE)),
        (no_l12,),
        l12_zero,
        source_ranges={"iz": fixed(True), "other_itemized": fixed(0), "mde": IntRange(1, None)},
    )], Comparator.EQ,
        "x.iz and x.other_itemized = 0 and 0 < x.MDE <= x.AGI * 7.5% and x =_{L12} y and y.L12 = 0",
        "F(x) = F(y)")

    add(14, "ID", [MetamorphoseSpec(
        frozenset({"L12"}),
        (_x("not x.iz", lambda r: not r.iz), _x("x.L12 > 0", lambda r: l12(r) > 0)),
        (no_l12,),
        l12_zero,
        source_ranges={"iz": fixed(False)},
    )], Comparator.EQ,
        "not x.iz and x =_{L12} y and x.L12 > 0 and y.L12 = 0", "F(x) = F(y)")

    switch = {"iz": fixed(False), **l12_zero}
    to_standard = (_c("not y.iz", lambda rs: not rs[1].iz), no_l12)
    add(15, "ID", [MetamorphoseSpec(
        frozenset({"iz", "L12"}),
        (is_mfj, _x("x.iz", lambda r: r.iz), _x("x.L12 <= 24.8k", lambda r: l12(r) <= STD_MFJ)),
        to_standard,
        switch,
        source_ranges={"sts": fixed(MFJ), "iz": fixed(True)},
    )], Comparator.LEQ,
        "x.sts = MFJ and x =_{iz,L12} y and x.iz and not y.iz and x.L12 <= 24.8k and y.L12 = 0",
        "F(x) <= F(y)")

    add(16, "ID", [MetamorphoseSpec(
        frozenset({"iz", "L12"}),
        (is_mfj, _x("x.iz", lambda r: r.iz), _x("x.L12 > 24.8k", lambda r: l12(r) > STD_MFJ),
         _x("no age/blind additions on x",
            lambda r: r.age < SENIOR and not r.blind and r.s_age < SENIOR and not r.s_blind)),
        to_standard,
        switch,
        source_ranges={"sts": fixed(MFJ), "iz": fixed(True), "age": IntRange(None, SENIOR - 1),
                       "blind": fixed(False), "s_age": IntRange(None, SENIOR - 1), "s_blind": fixed(False)},
    )], Comparator.GEQ,
        "x.sts = MFJ and x =_{iz,L12} y and x.iz and not y.iz and x.L12 > 24.8k and y.L12 = 0"
        " and x has no age/blind additions",
        "F(x) >= F(y)")

    return tuple(rels)


_CATALOG = _build()
RELATION_IDS = tuple(r.id for r in _CATALOG)


def catalog() -> list:
    return list(_CATALOG)


def relation(rel_id: int) -> MetamorphicRelation:
    for r in _CATALOG:
        if r.id == rel_id:
            return r
    raise InvalidInputError(f"no relation with id {rel_id}")


def listing() -> str:
    return "\n".join(r.listing() for r in _CATALOG)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _check_arity(rel, seq, what):
    if len(seq) != rel.arity:
        raise InvalidInputError(f"relation {rel.id} takes {rel.arity} {what}, got {len(seq)}")


def equivalent_except(a: TaxReturnInput, b: TaxReturnInput, fields_) -> bool:
    """``a ≡_L b``: every field outside ``fields_`` compares equal."""
    return all(getattr(a, f) == getattr(b, f) for f in FIELD_NAMES if f not in fields_)


def spec_holds(spec: MetamorphoseSpec, records) -> bool:
    half = len(records) // 2
    sources, followups = records[:half], records[half:]
    if not all(c(sources) for c in spec.source_constraints):
        return False
    exc = spec.exception_fields
    if not all(equivalent_except(s, f, exc) for s, f in zip(sources, followups)):
        return False
    return all(c(records) for c in spec.followup_constraints)


def premise_holds(rel: MetamorphicRelation, records) -> bool:
    _check_arity(rel, records, "records")
    return any(spec_holds(s, records) for s in rel.specs)


def deviance(rel: MetamorphicRelation, outputs) -> int:
    """How far (in cents) the outputs are from satisfying the comparator."""
    _check_arity(rel, outputs, "outputs")
    return comparator_deviance(rel.comparator, outputs)


def comparator_deviance(cmp: Comparator, outputs) -> int:
    if cmp is Comparator.EQ:
        return abs(outputs[0] - outputs[1])
    if cmp is Comparator.GEQ:
        return max(0, outputs[1] - outputs[0])
    if cmp is Comparator.LEQ:
        return max(0, outputs[0] - outputs[1])
    fx, fx2, fy, fy2 = outputs
    return max(0, (fx2 - fy2) - (fx - fy))
