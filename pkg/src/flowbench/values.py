"""Canonical string forms for field values.

Every value in the store is a string. Audits and the set-matching metrics
compare tuples of strings exactly, so each value kind has one canonical
rendering: numbers without leading/trailing zero noise, booleans as
"true"/"false", datetimes in a fixed sortable form. The empty string is the
universal null/unset value for all kinds.
"""

from __future__ import annotations

from datetime import datetime
from decimal import Decimal, InvalidOperation

VALUE_KINDS = ("text", "number", "boolean", "datetime", "choice", "reference")

DATETIME_FORMAT = "%Y-%m-%d %H:%M:%S"

_TRUE_WORDS = {"true", "1", "yes"}
_FALSE_WORDS = {"false", "0", "no"}


def parse_number(raw: str) -> Decimal | None:
    """Return the Decimal for a numeric string, or None if it is not numeric."""
    try:
        return Decimal(raw.strip())
    except (InvalidOperation, ValueError, ArithmeticError):
        return None


def canonical_number(value: Decimal) -> str:
    if value == 0:
        return "0"
    # 'f' formatting avoids scientific notation from normalize()
    return format(value.normalize(), "f")


def canonical_datetime(value: datetime) -> str:
    return value.strftime(DATETIME_FORMAT)


def canonicalize(kind: str, raw: object, choices: list[str] | None = None) -> str:
    """Render ``raw`` in the canonical string form for ``kind``.

    Raises ValueError with a human-readable message on kind violations.
    """
    if raw is None:
        return ""
    if isinstance(raw, bool):
        text = "true" if raw else "false"
    else:
        text = str(raw)
    if text == "":
        return ""

    if kind in ("text", "reference"):
        return text
    if kind == "number":
        num = parse_number(text)
        if num is None:
            raise ValueError(f"{text!r} is not a number")
        return canonical_number(num)
    if kind == "boolean":
        low = text.strip().lower()
        if low in _TRUE_WORDS:
            return "true"
        if low in _FALSE_WORDS:
            return "false"
        raise ValueError(f"{text!r} is not a boolean")
    if kind == "datetime":
        cleaned = text.strip().replace("T", " ")
        try:
            parsed = datetime.strptime(cleaned, DATETIME_FORMAT)
        except ValueError:
            try:
                parsed = datetime.fromisoformat(cleaned)
            except ValueError:
                raise ValueError(f"{text!r} is not a datetime") from None
        return canonical_datetime(parsed)
    if kind == "choice":
        if choices is not None and text not in choices:
            raise ValueError(f"{text!r} is not one of {choices}")
        return text
    raise ValueError(f"unknown value kind {kind!r}")


def compare_values(a: str, b: str) -> int:
    """Ordering comparison: numeric when both sides parse as numbers.

    Returns -1, 0, or 1. Canonical datetimes sort correctly as plain strings.
    """
    na, nb = parse_number(a), parse_number(b)
    if na is not None and nb is not None:
        return -1 if na < nb else (1 if na > nb else 0)
    return -1 if a < b else (1 if a > b else 0)


def values_equal(a: str, b: str) -> bool:
    na, nb = parse_number(a), parse_number(b)
    if na is not None and nb is not None:
        return na == nb
    return a == b
