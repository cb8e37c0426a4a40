"""Integer-cent money helpers.

Every dollar amount in the package is an ``int`` number of cents. Rounding is
half away from zero, applied once per derived quantity.
"""
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation

from .errors import InvalidInputError

CENT = Decimal("0.01")


def div_round(num: int, den: int) -> int:
    """Exact ``num / den`` rounded half away from zero."""
    if den <= 0:
        raise InvalidInputError("denominator must be positive")
    q, r = divmod(abs(num), den)
    if 2 * r >= den:
        q += 1
    return q if num >= 0 else -q


def cents(value) -> int:
    """Convert a dollar amount (int, str, Decimal, float) to integer cents."""
    if isinstance(value, bool):
        raise InvalidInputError(f"not a dollar amount: {value!r}")
    try:
        d = Decimal(str(value)) if isinstance(value, float) else Decimal(value)
    except (InvalidOperation, TypeError, ValueError):
        raise InvalidInputError(f"not a dollar amount: {value!r}") from None
    if not d.is_finite():
        raise InvalidInputError(f"not a dollar amount: {value!r}")
    return int((d * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def dollars(amount: int) -> Decimal:
    return (Decimal(amount) / 100).quantize(CENT)


def fmt(amount: int) -> str:
    """``123456`` -> ``'1,234.56'``."""
    return f"{dollars(amount):,.2f}"
