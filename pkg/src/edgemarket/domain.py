"""Core value types shared by every contract layer.

Everything here is an immutable value: identities, money, regions,
condition vectors and service-time windows, plus the two predicates
(price-independent) that decide whether a consumer and a provider are
compatible. All arithmetic is exact: money is integer micro-dollars,
window overlap is a Fraction.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

# Sequence number assigned by the registry; strictly increasing per run.
UserId = int

MICRO_PER_DOLLAR = 1_000_000
_U64_MAX = 2**64 - 1


class Role(Enum):
    CONSUMER = "consumer"
    COMPUTE_PROVIDER = "compute_provider"
    STORAGE_PROVIDER = "storage_provider"

    @property
    def is_provider(self) -> bool:
        return self is not Role.CONSUMER


@dataclass(frozen=True, order=True)
class Money:
    """Exact token amount in micro-dollars (1 dollar = 1,000,000 units).

    Subtraction below zero raises instead of wrapping; every operation
    stays in integer arithmetic so settlement conservation is testable
    to the last unit.
    """

    micro: int

    def __post_init__(self) -> None:
        if not isinstance(self.micro, int):
            raise TypeError(f"Money requires an int, got {type(self.micro).__name__}")
        if not 0 <= self.micro <= _U64_MAX:
            raise ValueError(f"Money out of range: {self.micro}")

    @classmethod
    def from_dollars(cls, dollars: int) -> "Money":
        return cls(dollars * MICRO_PER_DOLLAR)

    def __add__(self, other: "Money") -> "Money":
        return Money(self.micro + other.micro)

    def __sub__(self, other: "Money") -> "Money":
        if other.micro > self.micro:
            raise ValueError(
                f"Money underflow: {self.micro} - {other.micro}"
            )
        return Money(self.micro - other.micro)

    def __mul__(self, n: int) -> "Money":
        if not isinstance(n, int) or n < 0:
            raise ValueError(f"Money multiplier must be a non-negative int: {n}")
        return Money(self.micro * n)

    __rmul__ = __mul__

    def scaled(self, factor: Fraction) -> "Money":
        """Scale by a non-negative rational, rounding down to whole micro-dollars."""
        if factor < 0:
            raise ValueError(f"negative scale factor: {factor}")
        return Money((self.micro * factor.numerator) // factor.denominator)

    def __str__(self) -> str:
        return f"${self.micro / MICRO_PER_DOLLAR:.6f}"


ZERO = Money(0)


@dataclass(frozen=True)
class Region:
    """A city index in [0, M); M is fixed per scenario and checked at registration."""

    city_index: int

    def __post_init__(self) -> None:
        if self.city_index < 0:
            raise ValueError(f"negative city index: {self.city_index}")


@dataclass(frozen=True)
class ConditionVector:
    """Fixed-length boolean vector: requirements for consumers, capabilities for providers."""

    bits: tuple[bool, ...]

    @classmethod
    def of(cls, *bits: int | bool) -> "ConditionVector":
        return cls(tuple(bool(b) for b in bits))

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class TimeWindow:
    """Half-open tick interval [start_tick, end_tick)."""

    start_tick: int
    end_tick: int

    def __post_init__(self) -> None:
        if self.start_tick < 0 or self.start_tick >= self.end_tick:
            raise ValueError(
                f"invalid window [{self.start_tick}, {self.end_tick})"
            )

    @property
    def length(self) -> int:
        return self.end_tick - self.start_tick


@dataclass(frozen=True)
class UserSpec:
    """Registration record for one participant.

    ``price`` is the bid for consumers and the per-tick charge for
    providers. ``budget`` is set only for consumers and equals the
    escrow deposit. ``id`` is None until the registry assigns one.
    """

    role: Role
    region: Region
    price: Money
    conditions: ConditionVector
    window: TimeWindow
    budget: Money | None = None
    id: UserId | None = None

    def __post_init__(self) -> None:
        if self.role is Role.CONSUMER:
            if self.budget is None:
                raise ValueError("consumer spec requires a budget")
            if self.budget < self.price:
                raise ValueError(
                    f"consumer budget {self.budget} below bid {self.price}"
                )
        elif self.budget is not None:
            raise ValueError("providers carry no budget")


def overlap_fraction(a: TimeWindow, b: TimeWindow) -> Fraction:
    """Fraction of consumer window ``a`` covered by ``b``, as an exact rational."""
    lo = max(a.start_tick, b.start_tick)
    hi = min(a.end_tick, b.end_tick)
    covered = max(0, hi - lo)
    return Fraction(covered, a.length)


def conditions_satisfied(consumer: ConditionVector, provider: ConditionVector) -> bool:
    """True iff every consumer requirement bit is covered by the provider."""
    ok, _ = conditions_check(consumer, provider)
    return ok


def conditions_check(
    consumer: ConditionVector, provider: ConditionVector
) -> tuple[bool, int]:
    """Implication check that also reports how many bit comparisons it spent.

    Short-circuits on the first unmet requirement; the count feeds the
    matchmaker's comparison meter.
    """
    if len(consumer) != len(provider):
        raise ValueError(
            f"condition length mismatch: {len(consumer)} vs {len(provider)}"
        )
    examined = 0
    for need, have in zip(consumer.bits, provider.bits):
        examined += 1
        if need and not have:
            return False, examined
    return True, examined
