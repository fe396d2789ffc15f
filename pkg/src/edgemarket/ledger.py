"""Single-writer hash-chained append-only transaction log.

Every cross-layer event (registrations, match outcomes, escrow money
movement, result digests) lands here as one transaction whose hash covers
(index, kind, payload, prev_hash). There are no blocks, miners or forks:
the chain is the immutable audit database, and tampering with any byte of
a committed prefix breaks verification. Truncation is not covered by the
hash chain and is reported separately via the transaction count.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .domain import Money, Region, Role, UserId

DIGEST_SIZE = 32
GENESIS_HASH = bytes(DIGEST_SIZE)

_EXPORT_MAGIC = b"EMKL\x01"

_ROLE_CODES = {Role.CONSUMER: 0, Role.COMPUTE_PROVIDER: 1, Role.STORAGE_PROVIDER: 2}


class TxKind(Enum):
    REGISTRATION = 0
    ENGAGED = 1
    QUEUED = 2
    DEPOSIT = 3
    TICK_PAYMENT = 4
    SETTLED = 5
    ABORTED = 6
    RESULT_DIGEST = 7


def _u8(v: int) -> bytes:
    return v.to_bytes(1, "big")


def _u32(v: int) -> bytes:
    return v.to_bytes(4, "big")


def _u64(v: int) -> bytes:
    return v.to_bytes(8, "big")


def result_digest(data: bytes) -> bytes:
    """Collision-resistant digest used for both chunk results and chain links."""
    return hashlib.sha256(data).digest()


def tx_hash(index: int, kind: TxKind, payload: bytes, prev_hash: bytes) -> bytes:
    h = hashlib.sha256()
    h.update(_u64(index))
    h.update(_u8(kind.value))
    h.update(_u32(len(payload)))
    h.update(payload)
    h.update(prev_hash)
    return h.digest()


@dataclass(frozen=True)
class LedgerTx:
    index: int
    kind: TxKind
    payload: bytes
    prev_hash: bytes
    this_hash: bytes


class LedgerError(Exception):
    pass


class Ledger:
    """Append-only chain; the only mutation is appending a new tail."""

    def __init__(self) -> None:
        self._txs: list[LedgerTx] = []

    def __len__(self) -> int:
        return len(self._txs)

    def __getitem__(self, index: int) -> LedgerTx:
        return self._txs[index]

    def __iter__(self):
        return iter(self._txs)

    @property
    def head_hash(self) -> bytes:
        return self._txs[-1].this_hash if self._txs else GENESIS_HASH

    def append(self, kind: TxKind, payload: bytes) -> int:
        index = len(self._txs)
        prev = self.head_hash
        tx = LedgerTx(
            index=index,
            kind=kind,
            payload=payload,
            prev_hash=prev,
            this_hash=tx_hash(index, kind, payload, prev),
        )
        self._txs.append(tx)
        return index

    def verify_chain(self) -> bool:
        return verify_records(self._txs)

    def verify_result(self, result: bytes, index: int) -> bool:
        tx = self._txs[index]
        if tx.kind is not TxKind.RESULT_DIGEST:
            raise LedgerError(
                f"transaction {index} is {tx.kind.name}, not RESULT_DIGEST"
            )
        return result_digest(result) == tx.payload

    def count_kind(self, kind: TxKind) -> int:
        return sum(1 for tx in self._txs if tx.kind is kind)

    def export_bytes(self) -> bytes:
        out = [_EXPORT_MAGIC, _u64(len(self._txs))]
        for tx in self._txs:
            record = (
                _u64(tx.index)
                + _u8(tx.kind.value)
                + _u32(len(tx.payload))
                + tx.payload
                + tx.prev_hash
                + tx.this_hash
            )
            out.append(_u32(len(record)))
            out.append(record)
        return b"".join(out)

    def export_file(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.export_bytes())

    @classmethod
    def import_bytes(cls, blob: bytes) -> "Ledger":
        if blob[: len(_EXPORT_MAGIC)] != _EXPORT_MAGIC:
            raise LedgerError("not a ledger export file")
        pos = len(_EXPORT_MAGIC)
        if len(blob) < pos + 8:
            raise LedgerError("truncated header")
        count = int.from_bytes(blob[pos : pos + 8], "big")
        pos += 8
        ledger = cls()
        for _ in range(count):
            if len(blob) < pos + 4:
                raise LedgerError("truncated record length")
            rec_len = int.from_bytes(blob[pos : pos + 4], "big")
            pos += 4
            record = blob[pos : pos + rec_len]
            if len(record) != rec_len:
                raise LedgerError("truncated record")
            pos += rec_len
            ledger._txs.append(_decode_record(record))
        if pos != len(blob):
            raise LedgerError("trailing bytes after last record")
        return ledger

    @classmethod
    def import_file(cls, path) -> "Ledger":
        with open(path, "rb") as f:
            return cls.import_bytes(f.read())


def _decode_record(record: bytes) -> LedgerTx:
    if len(record) < 8 + 1 + 4 + 2 * DIGEST_SIZE:
        raise LedgerError("record too short")
    index = int.from_bytes(record[0:8], "big")
    try:
        kind = TxKind(record[8])
    except ValueError as exc:
        raise LedgerError(f"unknown transaction kind byte {record[8]}") from exc
    plen = int.from_bytes(record[9:13], "big")
    end = 13 + plen
    if len(record) != end + 2 * DIGEST_SIZE:
        raise LedgerError("record length mismatch")
    payload = record[13:end]
    prev_hash = record[end : end + DIGEST_SIZE]
    this_hash = record[end + DIGEST_SIZE :]
    return LedgerTx(index, kind, payload, prev_hash, this_hash)


def verify_records(txs: Sequence[LedgerTx]) -> bool:
    """True iff every link recomputes and the chain starts at the zero digest."""
    prev = GENESIS_HASH
    for i, tx in enumerate(txs):
        if tx.index != i or tx.prev_hash != prev:
            return False
        if tx.this_hash != tx_hash(tx.index, tx.kind, tx.payload, tx.prev_hash):
            return False
        prev = tx.this_hash
    return True


# Canonical payload encodings, fixed per kind (field order, big-endian ints)
# so hashes are reproducible across implementations.

def registration_payload(
    user_id: UserId, role: Role, region: Region, price: Money
) -> bytes:
    return (
        _u64(user_id)
        + _u8(_ROLE_CODES[role])
        + _u32(region.city_index)
        + _u64(price.micro)
    )


def engaged_payload(
    consumer: UserId,
    compute_provider: UserId,
    storage_providers: Iterable[UserId],
    tick: int,
) -> bytes:
    storage = tuple(storage_providers)
    return (
        _u64(consumer)
        + _u64(compute_provider)
        + _u8(len(storage))
        + b"".join(_u64(s) for s in storage)
        + _u64(tick)
    )


def queued_payload(consumer: UserId, tick: int) -> bytes:
    return _u64(consumer) + _u64(tick)


def deposit_payload(session_id: int, consumer: UserId, amount: Money) -> bytes:
    return _u64(session_id) + _u64(consumer) + _u64(amount.micro)


def tick_payment_payload(
    session_id: int,
    tick: int,
    compute_amt: Money,
    storage_amts: Iterable[tuple[UserId, Money]],
) -> bytes:
    pairs = tuple(storage_amts)
    return (
        _u64(session_id)
        + _u64(tick)
        + _u64(compute_amt.micro)
        + _u8(len(pairs))
        + b"".join(_u64(uid) + _u64(amt.micro) for uid, amt in pairs)
    )


def settled_payload(
    session_id: int,
    compute: Money,
    storage_amts: Iterable[tuple[UserId, Money]],
    refund: Money,
) -> bytes:
    pairs = tuple(storage_amts)
    return (
        _u64(session_id)
        + _u64(compute.micro)
        + _u8(len(pairs))
        + b"".join(_u64(uid) + _u64(amt.micro) for uid, amt in pairs)
        + _u64(refund.micro)
    )


def aborted_payload(session_id: int, refund: Money) -> bytes:
    return _u64(session_id) + _u64(refund.micro)
