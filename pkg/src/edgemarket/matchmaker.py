"""Per-region matching contract: AVL provider book plus consumer wait queue.

Providers are keyed by (charge, arrival seq) in a self-balancing tree; a
consumer walks admissible candidates in ascending key order and takes the
first provider that passes the price, condition and window checks. Failed
consumers wait in a FIFO queue that is re-scanned when providers arrive.
Every tree descent's comparison count is recorded so the logarithmic
search claim is checkable, and every comparison is gas-metered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from . import ledger as ledgermod
from .domain import Role, UserId, UserSpec, conditions_check, overlap_fraction
from .gasmeter import GasMeter, Primitive
from .ledger import Ledger, TxKind

# Minimum window coverage of the consumer's service window.
OVERLAP_THRESHOLD = Fraction(3, 4)


class _Node:
    __slots__ = ("key", "spec", "left", "right", "height")

    def __init__(self, key: tuple[int, int], spec: UserSpec):
        self.key = key
        self.spec = spec
        self.left: _Node | None = None
        self.right: _Node | None = None
        self.height = 1


def _h(n: _Node | None) -> int:
    return n.height if n else 0


def _update(n: _Node) -> None:
    n.height = 1 + max(_h(n.left), _h(n.right))


def _rot_right(y: _Node, touch: list[int]) -> _Node:
    x = y.left
    y.left = x.right
    x.right = y
    _update(y)
    _update(x)
    touch[0] += 2
    return x


def _rot_left(x: _Node, touch: list[int]) -> _Node:
    y = x.right
    x.right = y.left
    y.left = x
    _update(x)
    _update(y)
    touch[0] += 2
    return y


def _rebalance(n: _Node, touch: list[int]) -> _Node:
    bal = _h(n.left) - _h(n.right)
    if bal > 1:
        if _h(n.left.left) < _h(n.left.right):
            n.left = _rot_left(n.left, touch)
        return _rot_right(n, touch)
    if bal < -1:
        if _h(n.right.right) < _h(n.right.left):
            n.right = _rot_right(n.right, touch)
        return _rot_left(n, touch)
    return n


class ProviderBook:
    """AVL tree of provider specs keyed by (charge in micro-dollars, arrival seq).

    The seq component breaks ties FIFO among equal charges and makes every
    key unique, which keeps the matching order fully deterministic.
    """

    def __init__(self) -> None:
        self._root: _Node | None = None
        self._seq = 0
        self._size = 0
        self._key_by_user: dict[UserId, tuple[int, int]] = {}

    def __len__(self) -> int:
        return self._size

    def __contains__(self, user_id: UserId) -> bool:
        return user_id in self._key_by_user

    def insert(self, spec: UserSpec) -> int:
        """Insert a provider; returns the number of tree nodes touched."""
        if spec.id is None:
            raise ValueError("provider spec has no id")
        if spec.id in self._key_by_user:
            raise ValueError(f"provider {spec.id} already in book")
        key = (spec.price.micro, self._seq)
        self._seq += 1
        touch = [0]
        self._root = self._insert(self._root, key, spec, touch)
        self._key_by_user[spec.id] = key
        self._size += 1
        return touch[0]

    def _insert(
        self, node: _Node | None, key, spec: UserSpec, touch: list[int]
    ) -> _Node:
        touch[0] += 1
        if node is None:
            return _Node(key, spec)
        if key < node.key:
            node.left = self._insert(node.left, key, spec, touch)
        else:
            node.right = self._insert(node.right, key, spec, touch)
        _update(node)
        return _rebalance(node, touch)

    def remove_user(self, user_id: UserId) -> int:
        """Remove a provider by id; returns the number of tree nodes touched."""
        key = self._key_by_user.pop(user_id)
        touch = [0]
        self._root = self._delete(self._root, key, touch)
        self._size -= 1
        return touch[0]

    def _delete(self, node: _Node | None, key, touch: list[int]) -> _Node | None:
        if node is None:
            raise KeyError(key)
        touch[0] += 1
        if key < node.key:
            node.left = self._delete(node.left, key, touch)
        elif key > node.key:
            node.right = self._delete(node.right, key, touch)
        else:
            if node.left is None:
                return node.right
            if node.right is None:
                return node.left
            succ = node.right
            while succ.left:
                touch[0] += 1
                succ = succ.left
            node.key, node.spec = succ.key, succ.spec
            self._key_by_user[node.spec.id] = node.key
            node.right = self._delete(node.right, succ.key, touch)
        _update(node)
        return _rebalance(node, touch)

    def min_descent(self) -> tuple[_Node | None, int]:
        """Leftmost node plus the number of nodes visited on the way down."""
        node = self._root
        comps = 0
        while node and node.left:
            comps += 1
            node = node.left
        if node:
            comps += 1
        return node, comps

    def successor_descent(self, key: tuple[int, int]) -> tuple[_Node | None, int]:
        """Smallest node with key > ``key``, via a fresh root-to-leaf descent."""
        node = self._root
        best: _Node | None = None
        comps = 0
        while node:
            comps += 1
            if key < node.key:
                best = node
                node = node.left
            else:
                node = node.right
        return best, comps

    def in_order(self) -> list[UserSpec]:
        out: list[UserSpec] = []

        def walk(n: _Node | None) -> None:
            if n is None:
                return
            walk(n.left)
            out.append(n.spec)
            walk(n.right)

        walk(self._root)
        return out

    def validate(self) -> int:
        """Full-traversal structural check; returns the measured height.

        Raises if the BST order, stored heights, AVL balance factors or the
        1.45*log2(size+2) height bound are violated.
        """
        keys: list[tuple[int, int]] = []

        def check(n: _Node | None) -> int:
            if n is None:
                return 0
            lh = check(n.left)
            keys.append(n.key)
            rh = check(n.right)
            if n.height != 1 + max(lh, rh):
                raise AssertionError(f"stale height at {n.key}")
            if abs(lh - rh) > 1:
                raise AssertionError(f"unbalanced at {n.key}")
            return n.height

        height = check(self._root)
        if any(a >= b for a, b in zip(keys, keys[1:])):
            raise AssertionError("BST order violated")
        if len(keys) != self._size:
            raise AssertionError("size counter out of sync")
        if height > 1.45 * math.log2(self._size + 2):
            raise AssertionError(f"height {height} exceeds AVL bound")
        return height


@dataclass
class QueueEntry:
    spec: UserSpec
    enqueue_tick: int
    queue_len_at_enqueue: int


class WaitQueue:
    """FIFO of consumers that found no admissible provider yet."""

    def __init__(self) -> None:
        self.entries: list[QueueEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, spec: UserSpec, tick: int) -> None:
        self.entries.append(QueueEntry(spec, tick, len(self.entries)))

    def remove_user(self, user_id: UserId) -> bool:
        for i, entry in enumerate(self.entries):
            if entry.spec.id == user_id:
                del self.entries[i]
                return True
        return False


@dataclass(frozen=True)
class Engagement:
    """A matched consumer/provider pair plus its assigned storage providers.

    ``comparisons_used`` counts only the successful matching walk; the
    consumer's earlier failed attempts are metered as gas but not recorded
    here.
    """

    consumer: UserId
    compute_provider: UserId
    storage_providers: tuple[UserId, ...]
    matched_tick: int
    latency_ticks: int
    comparisons_used: int
    storage_shortfall: int = 0


@dataclass(frozen=True)
class DescentRecord:
    book_size: int
    comparisons: int


class Matchmaker:
    """One region's matching network: two provider books and a wait queue."""

    def __init__(
        self,
        region_index: int,
        condition_bits: int,
        ledger: Ledger,
        meter: GasMeter,
        replication: int = 2,
        drain_batch: int = 1,
        log_descents: bool = False,
    ):
        self.region_index = region_index
        self.condition_bits = condition_bits
        self.ledger = ledger
        self.meter = meter
        self.replication = replication
        self.drain_batch = drain_batch
        self.compute_book = ProviderBook()
        self.storage_book = ProviderBook()
        self.queue = WaitQueue()
        self.engagements: list[Engagement] = []
        self.engaged_providers: set[UserId] = set()
        # Full logs get large over a grid sweep; violations are always kept.
        self.descent_log: list[DescentRecord] | None = [] if log_descents else None
        self.descent_count = 0
        self.descent_violations: list[DescentRecord] = []
        self._provider_arrivals = 0

    def descent_bound(self, book_size: int) -> int:
        """Comparison budget for one descent: key walk plus one admissibility check."""
        return 2 * math.ceil(math.log2(book_size + 1)) + self.condition_bits + 2

    def _record_descent(self, book_size: int, comparisons: int) -> None:
        self.descent_count += 1
        if comparisons > self.descent_bound(book_size):
            self.descent_violations.append(DescentRecord(book_size, comparisons))
        if self.descent_log is not None:
            self.descent_log.append(DescentRecord(book_size, comparisons))

    # -- provider side ---------------------------------------------------

    def book_for(self, role: Role) -> ProviderBook:
        if role is Role.COMPUTE_PROVIDER:
            return self.compute_book
        if role is Role.STORAGE_PROVIDER:
            return self.storage_book
        raise ValueError(f"{role} has no provider book")

    def add_provider(self, spec: UserSpec, tick: int) -> list[Engagement]:
        """Insert a provider, then re-try waiting consumers per the drain batch."""
        touches = self.book_for(spec.role).insert(spec)
        self.meter.charge(spec.id, Primitive.TREE_NODE_TOUCH, touches)
        self._provider_arrivals += 1
        if self._provider_arrivals % self.drain_batch == 0:
            return self.try_drain_queue(tick)
        return []

    def remove_provider(self, user_id: UserId) -> bool:
        for book in (self.compute_book, self.storage_book):
            if user_id in book:
                touches = book.remove_user(user_id)
                self.meter.charge(user_id, Primitive.TREE_NODE_TOUCH, touches)
                return True
        return False

    # -- consumer side ---------------------------------------------------

    def match_consumer(self, spec: UserSpec, tick: int) -> Engagement | None:
        """Match now or join the wait queue; None means Queued."""
        engagement = self._attempt(spec, tick, enqueue_tick=tick)
        if engagement is None:
            self.queue.append(spec, tick)
            self.ledger.append(
                TxKind.QUEUED, ledgermod.queued_payload(spec.id, tick)
            )
        return engagement

    def try_drain_queue(self, tick: int) -> list[Engagement]:
        """One front-to-back pass over waiting consumers; order is preserved."""
        matched: list[Engagement] = []
        remaining: list[QueueEntry] = []
        for entry in self.queue.entries:
            engagement = self._attempt(entry.spec, tick, entry.enqueue_tick)
            if engagement is None:
                remaining.append(entry)
            else:
                matched.append(engagement)
        self.queue.entries = remaining
        return matched

    def flush(self, tick: int) -> list[Engagement]:
        """Force a drain regardless of the batch counter (end of a round)."""
        return self.try_drain_queue(tick)

    def remove_consumer(self, user_id: UserId) -> bool:
        return self.queue.remove_user(user_id)

    # -- matching walk ---------------------------------------------------

    def _admissibility(self, consumer: UserSpec, provider: UserSpec) -> tuple[str, int]:
        """(verdict, comparisons): 'stop' ends the walk (charge above bid),
        'fail' skips to the next candidate, 'pass' engages."""
        if provider.price > consumer.price:
            return "stop", 1
        comps = 1
        ok, bits = conditions_check(consumer.conditions, provider.conditions)
        comps += bits
        if not ok:
            return "fail", comps
        comps += 1
        if overlap_fraction(consumer.window, provider.window) < OVERLAP_THRESHOLD:
            return "fail", comps
        return "pass", comps

    def _walk(
        self, book: ProviderBook, consumer: UserSpec, wanted: int
    ) -> tuple[list[_Node], int]:
        """Ascending-key walk via repeated descents; collects up to ``wanted``
        admissible providers. Returns (chosen nodes, total comparisons)."""
        chosen: list[_Node] = []
        if wanted <= 0:
            return chosen, 0
        total = 0
        node, comps = book.min_descent()
        while node is not None:
            descent = comps
            verdict, checks = self._admissibility(consumer, node.spec)
            descent += checks
            self._record_descent(len(book), descent)
            total += descent
            if verdict == "stop":
                return chosen, total
            if verdict == "pass":
                chosen.append(node)
                if len(chosen) == wanted:
                    return chosen, total
            node, comps = book.successor_descent(node.key)
        if comps:
            # final descent that ran off the tree
            self._record_descent(len(book), comps)
            total += comps
        return chosen, total

    def _attempt(
        self, consumer: UserSpec, tick: int, enqueue_tick: int
    ) -> Engagement | None:
        compute_hits, comps = self._walk(self.compute_book, consumer, wanted=1)
        if not compute_hits:
            if comps:
                self.meter.charge(consumer.id, Primitive.COMPARISON, comps)
            return None

        storage_hits, storage_comps = self._walk(
            self.storage_book, consumer, wanted=self.replication
        )
        comps += storage_comps
        self.meter.charge(consumer.id, Primitive.COMPARISON, comps)

        compute = compute_hits[0].spec
        storage = tuple(n.spec for n in storage_hits)
        self.compute_book.remove_user(compute.id)
        for s in storage:
            self.storage_book.remove_user(s.id)
        self.engaged_providers.add(compute.id)
        self.engaged_providers.update(s.id for s in storage)

        engagement = Engagement(
            consumer=consumer.id,
            compute_provider=compute.id,
            storage_providers=tuple(s.id for s in storage),
            matched_tick=tick,
            latency_ticks=tick - enqueue_tick,
            comparisons_used=comps,
            storage_shortfall=self.replication - len(storage),
        )
        self.engagements.append(engagement)
        self.ledger.append(
            TxKind.ENGAGED,
            ledgermod.engaged_payload(
                consumer.id, compute.id, engagement.storage_providers, tick
            ),
        )
        return engagement


def eng_rate(records: list[Engagement], total_consumers: int) -> Fraction:
    """Matched consumers over all consumers, as an exact rational in [0, 1]."""
    if total_consumers <= 0:
        raise ValueError("total_consumers must be positive")
    return Fraction(len(records), total_consumers)


def latency_of(e: Engagement) -> int:
    """Realized wait in ticks between consumer arrival and engagement."""
    return e.latency_ticks
