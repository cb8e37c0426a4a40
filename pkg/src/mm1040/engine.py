"""Reference 2020 Form 1040 engine and its seeded-fault variants.

The engine maps one :class:`TaxReturnInput` to the federal tax return in
integer cents: withholding plus refundable credits minus the tax still owed.
A negative result means the filer owes money.

Mutants subclass :class:`TaxEngine` and override exactly one step each.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .errors import InvalidInputError
from .money import cents, div_round


class FilingStatus(str, Enum):
    SINGLE = "Single"
    MFJ = "MFJ"
    MFS = "MFS"
    HOH = "HOH"

    @property
    def code(self) -> int:
        return STATUS_CODES[self]

    @property
    def married(self) -> bool:
        return self in (FilingStatus.MFJ, FilingStatus.MFS)


# integer codes used wherever a status becomes a numeric feature
STATUS_CODES = {
    FilingStatus.SINGLE: 0,
    FilingStatus.MFJ: 1,
    FilingStatus.MFS: 2,
    FilingStatus.HOH: 3,
}

MONEY_FIELDS = ("agi", "withholding", "l27", "l19", "l29", "mde", "other_itemized")
COUNT_FIELDS = ("qc", "od")
BOOL_FIELDS = ("blind", "s_blind", "iz")
MAX_DEPENDENTS = 10
MIN_AGE = 18


@dataclass(frozen=True, slots=True)
class TaxReturnInput:
    """One filer's record. Dollar fields hold integer cents.

    Spouse fields only mean something for MFJ/MFS; for other statuses they
    are canonicalized to ``0``/``False``.
    """

    sts: FilingStatus = FilingStatus.SINGLE
    age: int = 40
    blind: bool = False
    s_age: int = 40
    s_blind: bool = False
    agi: int = 0
    withholding: int = 0
    l27: int = 0
    qc: int = 0
    od: int = 0
    l19: int = 0
    l29: int = 0
    mde: int = 0
    other_itemized: int = 0
    iz: bool = False

    def __post_init__(self):
        sts = self.sts
        if not isinstance(sts, FilingStatus):
            try:
                sts = FilingStatus(sts)
            except ValueError:
                raise InvalidInputError(f"unknown filing status {self.sts!r}") from None
            object.__setattr__(self, "sts", sts)
        for name in MONEY_FIELDS:
            v = getattr(self, name)
            if type(v) is not int or v < 0:
                raise InvalidInputError(f"{name} must be non-negative integer cents, got {v!r}")
        for name in COUNT_FIELDS:
            v = getattr(self, name)
            if type(v) is not int or not 0 <= v <= MAX_DEPENDENTS:
                raise InvalidInputError(f"{name} must be in [0, {MAX_DEPENDENTS}], got {v!r}")
        for name in BOOL_FIELDS:
            if not isinstance(getattr(self, name), bool):
                raise InvalidInputError(f"{name} must be a bool")
        if type(self.age) is not int or self.age < MIN_AGE:
            raise InvalidInputError(f"age must be an integer >= {MIN_AGE}")
        if sts.married:
            if type(self.s_age) is not int or self.s_age < MIN_AGE:
                raise InvalidInputError(f"s_age must be an integer >= {MIN_AGE}")
        else:
            object.__setattr__(self, "s_age", 0)
            object.__setattr__(self, "s_blind", False)

    def replace(self, **changes) -> "TaxReturnInput":
        return dataclasses.replace(self, **changes)

    def to_wire(self) -> dict:
        """Field map with cents as integers (suite files and the SUT protocol)."""
        out = {}
        for f in FIELD_NAMES:
            v = getattr(self, f)
            out[f] = v.value if f == "sts" else v
        return out

    @classmethod
    def from_wire(cls, data: Mapping) -> "TaxReturnInput":
        unknown = set(data) - set(FIELD_NAMES)
        if unknown:
            raise InvalidInputError(f"unknown fields {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_dollars(cls, **kw) -> "TaxReturnInput":
        """Build a record giving money fields in dollars."""
        for name in MONEY_FIELDS:
            if name in kw:
                kw[name] = cents(kw[name])
        return cls(**kw)


FIELD_NAMES = tuple(f.name for f in dataclasses.fields(TaxReturnInput))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaxConfig:
    """Year-specific constants, in cents. Built from a JSON config file."""

    tax_year: int
    brackets: Mapping[FilingStatus, tuple]  # ((upper_cents | None, rate_percent), ...)
    standard_deduction: Mapping[FilingStatus, int]
    additional_deduction: Mapping[FilingStatus, int]
    senior_age: int
    medical_floor_permille: int
    eitc_agi_cap: Mapping[FilingStatus, int | None]
    ctc_per_child: int
    ctc_per_other: int
    ctc_threshold: Mapping[FilingStatus, int]
    ctc_step: int
    ctc_per_step: int
    etc_start: Mapping[FilingStatus, int]
    etc_end: Mapping[FilingStatus, int]

    @classmethod
    def from_dict(cls, raw: Mapping) -> "TaxConfig":
        if raw.get("schema") != "mm1040.taxconfig" or raw.get("version") != 1:
            raise InvalidInputError("not a version-1 mm1040.taxconfig document")

        def per_status(table, conv=cents):
            missing = {s.value for s in FilingStatus} - set(table)
            if missing:
                raise InvalidInputError(f"config table missing statuses {sorted(missing)}")
            return MappingProxyType(
                {s: (None if table[s.value] is None else conv(table[s.value])) for s in FilingStatus}
            )

        def bracket_table(rows):
            out, prev = [], 0
            for upper, rate in rows:
                if upper is not None:
                    upper = cents(upper)
                    if upper <= prev:
                        raise InvalidInputError("bracket bounds must increase")
                    prev = upper
                out.append((upper, int(rate)))
            if out[-1][0] is not None:
                raise InvalidInputError("last bracket must be open-ended")
            return tuple(out)

        ctc, etc = raw["ctc"], raw["etc"]
        return cls(
            tax_year=int(raw["tax_year"]),
            brackets=per_status(raw["brackets"], bracket_table),
            standard_deduction=per_status(raw["standard_deduction"]),
            additional_deduction=per_status(raw["additional_standard_deduction"]),
            senior_age=int(raw["senior_age"]),
            medical_floor_permille=int(raw["medical_floor_permille"]),
            eitc_agi_cap=per_status(raw["eitc_agi_cap"]),
            ctc_per_child=cents(ctc["per_child"]),
            ctc_per_other=cents(ctc["per_other_dependent"]),
            ctc_threshold=per_status(ctc["phaseout_threshold"]),
            ctc_step=cents(ctc["phaseout_step"]),
            ctc_per_step=cents(ctc["phaseout_per_step"]),
            etc_start=per_status(etc["phaseout_start"]),
            etc_end=per_status(etc["phaseout_end"]),
        )


def load_config(path: str | Path | None = None) -> TaxConfig:
    if path is None:
        return default_config()
    return TaxConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=None)
def default_config() -> TaxConfig:
    text = resources.files("mm1040").joinpath("data/tax2020.json").read_text(encoding="utf-8")
    return TaxConfig.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# worksheet pieces shared by the engine and the relation premises
# ---------------------------------------------------------------------------


def standard_deduction(r: TaxReturnInput, cfg: TaxConfig) -> int:
    flags = (r.age >= cfg.senior_age) + r.blind
    if r.sts is FilingStatus.MFJ:
        flags += (r.s_age >= cfg.senior_age) + r.s_blind
    return cfg.standard_deduction[r.sts] + flags * cfg.additional_deduction[r.sts]


def medical_floor(agi: int, cfg: TaxConfig) -> int:
    return div_round(agi * cfg.medical_floor_permille, 1000)


def schedule_a_total(r: TaxReturnInput, cfg: TaxConfig) -> int:
    """Line 12 when itemizing: other deductions plus MDE above the AGI floor."""
    excess = r.mde * 1000 - r.agi * cfg.medical_floor_permille
    return r.other_itemized + (div_round(excess, 1000) if excess > 0 else 0)


def tax_before_credits(taxable: int, sts, cfg: TaxConfig | None = None) -> int:
    """Progressive bracket tax on ``taxable`` cents, rounded to the cent."""
    cfg = cfg or default_config()
    try:
        sts = FilingStatus(sts)
    except ValueError:
        raise InvalidInputError(f"unknown filing status {sts!r}") from None
    if taxable < 0:
        raise InvalidInputError("taxable income must be non-negative")
    acc, lower = 0, 0
    for upper, rate in cfg.brackets[sts]:
        top = taxable if upper is None else min(taxable, upper)
        if top <= lower:
            break
        acc += (top - lower) * rate
        lower = top
    return div_round(acc, 100)


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


# ---------------------------------------------------------------------------
# engines
# ---------------------------------------------------------------------------


class TaxEngine:
    """Reference engine. Pure and immutable; safe to share across threads."""

    name = "reference"

    def __init__(self, config: TaxConfig | None = None):
        self.config = config or default_config()

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"

    def __call__(self, r: TaxReturnInput) -> int:
        return self.federal_tax_return(r)

    def deduction_amount(self, r: TaxReturnInput) -> int:
        if r.iz:
            return schedule_a_total(r, self.config)
        return standard_deduction(r, self.config)

    def tax_before_credits(self, taxable: int, sts) -> int:
        return tax_before_credits(taxable, sts, self.config)

    def eligible_eitc(self, r: TaxReturnInput) -> int:
        if r.sts is FilingStatus.MFS:
            return 0
        return self._eitc_after_cap(r)

    def _eitc_after_cap(self, r):
        cap = self.config.eitc_agi_cap[r.sts]
        if cap is not None and r.agi > cap:
            return 0
        return r.l27

    def eligible_ctc(self, r: TaxReturnInput) -> int:
        cfg = self.config
        claim = min(r.l19, r.qc * cfg.ctc_per_child + r.od * cfg.ctc_per_other)
        over = r.agi - cfg.ctc_threshold[r.sts]
        if over > 0:
            claim = max(0, claim - ceil_div(over, cfg.ctc_step) * cfg.ctc_per_step)
        return claim

    def eligible_etc(self, r: TaxReturnInput) -> int:
        if r.sts is FilingStatus.MFS:
            return 0
        start, end = self.config.etc_start[r.sts], self.config.etc_end[r.sts]
        if r.agi <= start:
            return r.l29
        if r.agi >= end:
            return 0
        return div_round(r.l29 * (end - r.agi), end - start)

    def apply_nonrefundable(self, owed: int, credits: int) -> int:
        return max(0, owed - credits)

    def federal_tax_return(self, r: TaxReturnInput) -> int:
        taxable = max(0, r.agi - self.deduction_amount(r))
        owed = self.tax_before_credits(taxable, r.sts)
        owed = self.apply_nonrefundable(owed, self.eligible_ctc(r) + self.eligible_etc(r))
        return r.withholding + self.eligible_eitc(r) - owed


class MutantId(str, Enum):
    M1_EITC_MFS = "M1_EITC_MFS"
    M2_EITC_AGI_CAP = "M2_EITC_AGI_CAP"
    M3_ZERO_CROSS = "M3_ZERO_CROSS"
    M4_MDE_FLOOR = "M4_MDE_FLOOR"
    M5_ITEMIZED_ROUND = "M5_ITEMIZED_ROUND"

    @classmethod
    def parse(cls, text: str) -> "MutantId":
        """Accepts the full id or its short prefix (``M3``)."""
        for m in cls:
            if text == m.value or text.upper() == m.value.split("_")[0]:
                return m
        raise InvalidInputError(f"unknown mutant {text!r}")


class EitcIgnoresMfs(TaxEngine):
    """MFS filers keep their EITC claim."""

    name = MutantId.M1_EITC_MFS.value

    def eligible_eitc(self, r):
        return self._eitc_after_cap(r)


class EitcIgnoresAgiCap(TaxEngine):
    name = MutantId.M2_EITC_AGI_CAP.value

    def eligible_eitc(self, r):
        return 0 if r.sts is FilingStatus.MFS else r.l27


# owed amounts below this are handled by the faulty branch
ZERO_CROSS_WINDOW = 250_00
ITEMIZED_BAND = 500_00


class CreditsDroppedNearZero(TaxEngine):
    """Small liabilities: credits that would cross zero are dropped, not clamped."""

    name = MutantId.M3_ZERO_CROSS.value

    def apply_nonrefundable(self, owed, credits):
        if owed < ZERO_CROSS_WINDOW and credits > owed:
            return owed
        return max(0, owed - credits)


class MedicalFloorIgnored(TaxEngine):
    name = MutantId.M4_MDE_FLOOR.value

    def deduction_amount(self, r):
        if r.iz:
            return r.other_itemized + r.mde
        return standard_deduction(r, self.config)


class ItemizedBandShaved(TaxEngine):
    """Itemized totals just above the standard deduction lose $500."""

    name = MutantId.M5_ITEMIZED_ROUND.value

    def deduction_amount(self, r):
        if r.iz:
            total = schedule_a_total(r, self.config)
            std = standard_deduction(r, self.config)
            if std < total < std + ITEMIZED_BAND:
                return total - ITEMIZED_BAND
            return total
        return standard_deduction(r, self.config)


MUTANTS = {
    MutantId.M1_EITC_MFS: EitcIgnoresMfs,
    MutantId.M2_EITC_AGI_CAP: EitcIgnoresAgiCap,
    MutantId.M3_ZERO_CROSS: CreditsDroppedNearZero,
    MutantId.M4_MDE_FLOOR: MedicalFloorIgnored,
    MutantId.M5_ITEMIZED_ROUND: ItemizedBandShaved,
}


def mutant_engine(mutant, config: TaxConfig | None = None) -> TaxEngine:
    if not isinstance(mutant, MutantId):
        mutant = MutantId.parse(str(mutant))
    return MUTANTS[mutant](config)


def reference_engine(config: TaxConfig | None = None) -> TaxEngine:
    return TaxEngine(config)
