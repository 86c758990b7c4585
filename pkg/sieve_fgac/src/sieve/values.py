"""
Attribute values, their ordering and the interval algebra used by guards.

Values are plain Python objects. Each one carries an implicit tag derived from its
type; two values with different tags are never ordered against each other.
"""

from dataclasses import dataclass
from datetime import date, datetime, time
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Any, Optional, Union

from sieve_fgac.src.sieve.errors import ContractViolation, IncomparableValuesError

Value = Union[int, Decimal, str, date, time, datetime]


class ValueTag(Enum):
    INTEGER = "integer"
    DECIMAL = "decimal"
    TEXT = "text"
    DATE = "date"
    TIME = "time"
    TIMESTAMP = "timestamp"

    @property
    def is_discrete(self) -> bool:
        return self in (ValueTag.INTEGER, ValueTag.DATE, ValueTag.TIME)


def value_tag(value: Any) -> ValueTag:
    # bool is an int subclass and datetime a date subclass: order matters
    if isinstance(value, bool):
        raise ContractViolation(f"Boolean values are not supported: {value!r}")
    if isinstance(value, int):
        return ValueTag.INTEGER
    if isinstance(value, Decimal):
        return ValueTag.DECIMAL
    if isinstance(value, str):
        return ValueTag.TEXT
    if isinstance(value, datetime):
        return ValueTag.TIMESTAMP
    if isinstance(value, date):
        return ValueTag.DATE
    if isinstance(value, time):
        return ValueTag.TIME
    raise ContractViolation(f"Unsupported value type {type(value).__name__}: {value!r}")


def compare_values(a: Value, b: Value) -> int:
    """
    Three-way comparison of two values of the same tag.

    :raises IncomparableValuesError: when the tags differ
    """
    tag_a, tag_b = value_tag(a), value_tag(b)
    if tag_a is not tag_b:
        raise IncomparableValuesError(
            f"Cannot compare {tag_a.value} {a!r} with {tag_b.value} {b!r}"
        )
    if a < b:
        return -1
    if a > b:
        return 1
    return 0


def values_equal(a: Value, b: Value) -> bool:
    return compare_values(a, b) == 0


def to_ordinal(value: Value) -> float:
    """Maps an ordered, non-text value onto the real line (used by histograms)."""
    tag = value_tag(value)
    if tag is ValueTag.INTEGER or tag is ValueTag.DECIMAL:
        return float(value)
    if tag is ValueTag.DATE:
        return float(value.toordinal())
    if tag is ValueTag.TIME:
        return float(value.hour * 3600 + value.minute * 60 + value.second)
    if tag is ValueTag.TIMESTAMP:
        return (value - datetime(1970, 1, 1, tzinfo=value.tzinfo)).total_seconds()
    raise ContractViolation(f"Text values have no ordinal mapping: {value!r}")


def parse_value(text: str, tag: ValueTag) -> Value:
    """Parses a textual literal into a value of the given tag."""
    try:
        if tag is ValueTag.INTEGER:
            return int(text)
        if tag is ValueTag.DECIMAL:
            return Decimal(text)
        if tag is ValueTag.TEXT:
            return str(text)
        if tag is ValueTag.DATE:
            return date.fromisoformat(text)
        if tag is ValueTag.TIME:
            return time.fromisoformat(text)
        if tag is ValueTag.TIMESTAMP:
            return datetime.fromisoformat(text)
    except (ValueError, InvalidOperation) as e:
        raise ContractViolation(f"'{text}' is not a valid {tag.value}: {e}") from e
    raise ContractViolation(f"Unknown value tag {tag}")


def encode_value(value: Value) -> Any:
    """JSON form: integers and text stay plain, every other tag is a one-key object."""
    tag = value_tag(value)
    if tag is ValueTag.INTEGER or tag is ValueTag.TEXT:
        return value
    if tag is ValueTag.DECIMAL:
        return {"decimal": str(value)}
    if tag is ValueTag.DATE:
        return {"date": value.isoformat()}
    if tag is ValueTag.TIME:
        return {"time": value.isoformat()}
    return {"timestamp": value.isoformat()}


def decode_value(raw: Any) -> Value:
    if isinstance(raw, bool):
        raise ContractViolation(f"Boolean values are not supported: {raw!r}")
    if isinstance(raw, (int, str)):
        return raw
    if isinstance(raw, dict) and len(raw) == 1:
        ((key, text),) = raw.items()
        try:
            return parse_value(text, ValueTag(key))
        except ValueError as e:
            raise ContractViolation(f"Unknown value tag '{key}'") from e
    raise ContractViolation(f"Cannot decode value {raw!r}")


def sql_literal(value: Value) -> str:
    tag = value_tag(value)
    if tag is ValueTag.INTEGER or tag is ValueTag.DECIMAL:
        return str(value)
    if tag is ValueTag.TIMESTAMP:
        text = value.isoformat(sep=" ")
    elif tag is ValueTag.TEXT:
        text = value
    else:
        text = value.isoformat()
    return "'" + text.replace("'", "''") + "'"


@dataclass(frozen=True)
class Interval:
    """
    A contiguous set of values of one tag. ``None`` bounds are unbounded, and the
    ``*_closed`` flags are ignored on unbounded sides.
    """

    lo: Optional[Value]
    lo_closed: bool
    hi: Optional[Value]
    hi_closed: bool

    @classmethod
    def point(cls, value: Value) -> "Interval":
        return cls(value, True, value, True)

    @property
    def is_point(self) -> bool:
        return (
            self.lo is not None
            and self.hi is not None
            and self.lo_closed
            and self.hi_closed
            and compare_values(self.lo, self.hi) == 0
        )

    @property
    def is_empty(self) -> bool:
        if self.lo is None or self.hi is None:
            return False
        order = compare_values(self.lo, self.hi)
        if order > 0:
            return True
        return order == 0 and not (self.lo_closed and self.hi_closed)

    def contains_value(self, value: Value) -> bool:
        if self.lo is not None:
            order = compare_values(value, self.lo)
            if order < 0 or (order == 0 and not self.lo_closed):
                return False
        if self.hi is not None:
            order = compare_values(value, self.hi)
            if order > 0 or (order == 0 and not self.hi_closed):
                return False
        return True

    def intersection(self, other: "Interval") -> "Interval":
        lo, lo_closed = _tighter_lower(self, other)
        hi, hi_closed = _tighter_upper(self, other)
        return Interval(lo, lo_closed, hi, hi_closed)

    def intersects(self, other: "Interval") -> bool:
        return not self.intersection(other).is_empty

    def hull(self, other: "Interval") -> "Interval":
        if self.lo is None or other.lo is None:
            lo, lo_closed = None, False
        else:
            order = compare_values(self.lo, other.lo)
            if order < 0:
                lo, lo_closed = self.lo, self.lo_closed
            elif order > 0:
                lo, lo_closed = other.lo, other.lo_closed
            else:
                lo, lo_closed = self.lo, self.lo_closed or other.lo_closed
        if self.hi is None or other.hi is None:
            hi, hi_closed = None, False
        else:
            order = compare_values(self.hi, other.hi)
            if order > 0:
                hi, hi_closed = self.hi, self.hi_closed
            elif order < 0:
                hi, hi_closed = other.hi, other.hi_closed
            else:
                hi, hi_closed = self.hi, self.hi_closed or other.hi_closed
        return Interval(lo, lo_closed, hi, hi_closed)

    def contains(self, other: "Interval") -> bool:
        """True when every value of ``other`` lies inside this interval."""
        if other.is_empty:
            return True
        if self.lo is not None:
            if other.lo is None:
                return False
            order = compare_values(self.lo, other.lo)
            if order > 0 or (order == 0 and other.lo_closed and not self.lo_closed):
                return False
        if self.hi is not None:
            if other.hi is None:
                return False
            order = compare_values(self.hi, other.hi)
            if order < 0 or (order == 0 and other.hi_closed and not self.hi_closed):
                return False
        return True

    def lower_key(self) -> tuple:
        if self.lo is None:
            return (0,)
        return (1, self.lo, 0 if self.lo_closed else 1)

    def upper_key(self) -> tuple:
        if self.hi is None:
            return (1,)
        return (0, self.hi, 1 if self.hi_closed else 0)


def _tighter_lower(a: Interval, b: Interval) -> tuple[Optional[Value], bool]:
    if a.lo is None:
        return b.lo, b.lo_closed
    if b.lo is None:
        return a.lo, a.lo_closed
    order = compare_values(a.lo, b.lo)
    if order > 0:
        return a.lo, a.lo_closed
    if order < 0:
        return b.lo, b.lo_closed
    return a.lo, a.lo_closed and b.lo_closed


def _tighter_upper(a: Interval, b: Interval) -> tuple[Optional[Value], bool]:
    if a.hi is None:
        return b.hi, b.hi_closed
    if b.hi is None:
        return a.hi, a.hi_closed
    order = compare_values(a.hi, b.hi)
    if order < 0:
        return a.hi, a.hi_closed
    if order > 0:
        return b.hi, b.hi_closed
    return a.hi, a.hi_closed and b.hi_closed
