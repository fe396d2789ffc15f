"""Operating-cost model: gas table, per-party receipts, and cost optimization.

Every contract primitive is metered against a configurable table. Receipts
accumulate per party (a user id or the system); engaged pairs combine the
consumer and compute-provider sides. ``optimize`` searches a discrete grid
of cost knobs for the penalized minimum of ``J = avg + zeta * var``.
All statistics are exact rationals.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Sequence

# Receipt owner for costs not attributable to a single participant.
SYSTEM = "system"


class Primitive(Enum):
    STORAGE_WRITE = "storage_write"
    STORAGE_READ = "storage_read"
    MAP_INSERT = "map_insert"
    MAP_DELETE = "map_delete"
    TREE_NODE_TOUCH = "tree_node_touch"
    COMPARISON = "comparison"
    SIGNATURE_VERIFY = "signature_verify"
    MESSAGE_EMIT = "message_emit"
    CONTRACT_SETUP = "contract_setup"


@dataclass(frozen=True)
class GasTable:
    """Gas cost per primitive. Defaults loosely shadow EVM magnitudes so
    relative trends are meaningful; the values are configuration, not claims.
    """

    storage_write: int = 20_000
    storage_read: int = 200
    map_insert: int = 5_000
    map_delete: int = 5_000
    tree_node_touch: int = 200
    comparison: int = 3
    signature_verify: int = 3_000
    message_emit: int = 375
    contract_setup: int = 32_000

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"gas cost {f.name} must be positive")

    def cost(self, kind: Primitive) -> int:
        return getattr(self, kind.value)

    @classmethod
    def from_mapping(cls, entries: dict[str, int]) -> "GasTable":
        known = {f.name for f in fields(cls)}
        unknown = set(entries) - known
        if unknown:
            raise ValueError(f"unknown gas table entries: {sorted(unknown)}")
        return cls(**entries)


@dataclass
class GasReceipt:
    """Metered cost for one owner: per-primitive counts plus the exact total."""

    owner: object
    table: GasTable
    breakdown: dict[Primitive, int] = field(default_factory=dict)

    def charge(self, kind: Primitive, n: int = 1) -> None:
        if not isinstance(kind, Primitive):
            raise ValueError(f"unknown primitive kind: {kind!r}")
        if n < 1:
            raise ValueError(f"charge count must be >= 1, got {n}")
        self.breakdown[kind] = self.breakdown.get(kind, 0) + n

    @property
    def total(self) -> int:
        return sum(self.table.cost(k) * n for k, n in self.breakdown.items())


class GasMeter:
    """Accumulates one receipt per owner against a shared gas table."""

    def __init__(self, table: GasTable | None = None):
        self.table = table or GasTable()
        self.receipts: dict[object, GasReceipt] = {}

    def receipt(self, owner: object) -> GasReceipt:
        r = self.receipts.get(owner)
        if r is None:
            r = GasReceipt(owner=owner, table=self.table)
            self.receipts[owner] = r
        return r

    def charge(self, owner: object, kind: Primitive, n: int = 1) -> None:
        self.receipt(owner).charge(kind, n)

    def total_for(self, owner: object) -> int:
        r = self.receipts.get(owner)
        return r.total if r is not None else 0

    def combined(self, owners: Iterable[object], pair: tuple[int, int]) -> GasReceipt:
        """Merge several owners' receipts into one receipt keyed by an engaged pair."""
        merged = GasReceipt(owner=pair, table=self.table)
        for owner in owners:
            r = self.receipts.get(owner)
            if r is None:
                continue
            for kind, n in r.breakdown.items():
                merged.breakdown[kind] = merged.breakdown.get(kind, 0) + n
        return merged


def pair_stats(receipts: Sequence[GasReceipt]) -> tuple[Fraction, Fraction]:
    """Exact population mean and variance of receipt totals."""
    if not receipts:
        raise ValueError("pair_stats requires at least one receipt")
    totals = [r.total for r in receipts]
    return mean_var(totals)


def mean_var(values: Sequence[int | Fraction]) -> tuple[Fraction, Fraction]:
    if not values:
        raise ValueError("mean_var requires at least one value")
    n = len(values)
    avg = sum((Fraction(v) for v in values), Fraction(0)) / n
    var = sum(((Fraction(v) - avg) ** 2 for v in values), Fraction(0)) / n
    return avg, var


@dataclass(frozen=True)
class CostArgs:
    """Discrete cost-model knobs evaluated by the optimizer.

    status_reads: extra per-registration status lookups (storage reads).
    queue_drain_batch: drain the wait queue every Nth provider arrival.
    payment_batch: emit one payment message per N escrow ticks.
    sessions_per_contract: sessions sharing one intermediary-contract setup fee.
    """

    status_reads: int = 0
    queue_drain_batch: int = 1
    payment_batch: int = 1
    sessions_per_contract: int = 1

    def __post_init__(self) -> None:
        if self.status_reads < 0:
            raise ValueError("status_reads must be >= 0")
        for name in ("queue_drain_batch", "payment_batch", "sessions_per_contract"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class CandidateScore:
    args: CostArgs
    avg: Fraction
    var: Fraction

    def objective(self, zeta: Fraction) -> Fraction:
        return self.avg + zeta * self.var


@dataclass(frozen=True)
class OptimizeResult:
    best: CostArgs
    args_avg: CostArgs
    args_var: CostArgs
    scores: tuple[CandidateScore, ...]
    zeta: Fraction


Evaluator = Callable[[CostArgs], tuple[Fraction, Fraction]]


def optimize(
    candidates: Sequence[CostArgs],
    evaluate: Evaluator,
    zeta: Fraction,
) -> OptimizeResult:
    """Exhaustive grid search for argmin of ``avg + zeta * var``.

    ``evaluate`` runs the metered scenario for one candidate and returns the
    exact (avg, var) of per-pair gas. Ties break by candidate order, so with
    zeta = 0 the winner is exactly ``args_avg``.
    """
    if not candidates:
        raise ValueError("optimize requires at least one candidate")
    if zeta < 0:
        raise ValueError(f"zeta must be non-negative: {zeta}")

    scores = tuple(
        CandidateScore(args=c, avg=avg, var=var)
        for c, (avg, var) in ((c, evaluate(c)) for c in candidates)
    )
    best = min(range(len(scores)), key=lambda i: (scores[i].objective(zeta), i))
    by_avg = min(range(len(scores)), key=lambda i: (scores[i].avg, i))
    by_var = min(range(len(scores)), key=lambda i: (scores[i].var, i))
    return OptimizeResult(
        best=scores[best].args,
        args_avg=scores[by_avg].args,
        args_var=scores[by_var].args,
        scores=scores,
        zeta=zeta,
    )


def candidate_grid(axes: dict[str, list[int]]) -> list[CostArgs]:
    """Cartesian product of per-knob value lists, in declared knob order."""
    known = {f.name for f in fields(CostArgs)}
    unknown = set(axes) - known
    if unknown:
        raise ValueError(f"unknown cost knobs: {sorted(unknown)}")
    out = [CostArgs()]
    for name in (f.name for f in fields(CostArgs)):
        if name not in axes:
            continue
        out = [replace(args, **{name: v}) for args in out for v in axes[name]]
    return out
