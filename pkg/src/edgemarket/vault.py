"""Secure data plane: chunking, hybrid encryption, replicated placement.

The consumer splits its data into tasks, encrypts each task under a fresh
symmetric key, wraps that key to every trusted peer, signs each chunk and
the placement table, and spreads replicas across storage nodes. Storage
nodes hold opaque ciphertext only and never see wrapped keys for data
they host. An access denial is byte-identical to "no such task", so an
untrusted peer learns nothing, not even existence.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .crypto import DEFAULT_SCHEME, CryptoScheme, KeyPair, symmetric_cipher
from .ledger import result_digest  # chain verification must use the same digest

PeerId = int

_DENIAL = "access denied"


class AccessDeniedError(Exception):
    """Uniform denial: carries no hint whether the task exists."""

    def __init__(self) -> None:
        super().__init__(_DENIAL)


class ChunkUnavailableError(Exception):
    """Every replica for a requested task is offline."""


class MalformedDhtError(Exception):
    pass


def keygen(seed: int, scheme: CryptoScheme | None = None) -> KeyPair:
    return (scheme or DEFAULT_SCHEME).keygen(seed)


def chunk_data(data: bytes, chunk_size: int) -> list[tuple[int, bytes]]:
    """Split into (task_id, plaintext) pieces; ids are sequential from 0."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    if not data:
        raise ValueError("nothing to trade: empty data")
    return [
        (i, data[off : off + chunk_size])
        for i, off in enumerate(range(0, len(data), chunk_size))
    ]


def reassemble(parts: Iterable[tuple[int, bytes]]) -> bytes:
    ordered = sorted(parts, key=lambda p: p[0])
    if [i for i, _ in ordered] != list(range(len(ordered))):
        raise ValueError("task ids are not contiguous from 0")
    return b"".join(piece for _, piece in ordered)


@dataclass(frozen=True)
class TaskChunk:
    task_id: int
    payload: bytes  # ciphertext
    wrapped_keys: dict[PeerId, bytes]
    signature: bytes  # over task_id || payload, by the consumer
    plain_len: int


def _chunk_sig_message(task_id: int, payload: bytes) -> bytes:
    return task_id.to_bytes(4, "big") + payload


@dataclass(frozen=True)
class AccessPolicy:
    """Per-dataset trust set: peer id -> public key to wrap task keys to."""

    trusted: dict[PeerId, bytes]

    def allows(self, peer: PeerId) -> bool:
        return peer in self.trusted


def _task_key(consumer: KeyPair, task_id: int) -> bytes:
    # Per-task symmetric key, derived so repeated runs are reproducible.
    return hashlib.sha256(
        b"task-key" + consumer.private + task_id.to_bytes(4, "big")
    ).digest()


def encrypt_and_sign(
    chunks: Sequence[tuple[int, bytes]],
    consumer: KeyPair,
    policy: AccessPolicy,
    scheme: CryptoScheme | None = None,
) -> list[TaskChunk]:
    """Hybrid-encrypt each chunk and wrap its key to every trusted peer."""
    scheme = scheme or DEFAULT_SCHEME
    if not policy.trusted:
        raise ValueError("access policy trusts no one")
    out = []
    for task_id, plain in chunks:
        key = _task_key(consumer, task_id)
        payload = symmetric_cipher(key, plain)
        wrapped = {
            peer: scheme.encrypt(pub, key) for peer, pub in policy.trusted.items()
        }
        out.append(
            TaskChunk(
                task_id=task_id,
                payload=payload,
                wrapped_keys=wrapped,
                signature=scheme.sign(
                    consumer.private, _chunk_sig_message(task_id, payload)
                ),
                plain_len=len(plain),
            )
        )
    return out


@dataclass
class StoredBlob:
    payload: bytes
    signature: bytes
    plain_len: int


@dataclass
class StorageNode:
    """Simulated storage provider machine; holds ciphertext blobs only."""

    addr: int
    live: bool = True
    blobs: dict[int, StoredBlob] = field(default_factory=dict)


@dataclass(frozen=True)
class Dht:
    """task_id -> replica addresses, in placement order."""

    entries: dict[int, tuple[int, ...]]

    def canonical_bytes(self) -> bytes:
        """Wire form: (task_id u32be, addr count u8, addrs u64be each),
        sorted ascending by task_id. Bit-exact because signatures cover it."""
        out = []
        for task_id in sorted(self.entries):
            addrs = self.entries[task_id]
            out.append(task_id.to_bytes(4, "big"))
            out.append(len(addrs).to_bytes(1, "big"))
            for addr in addrs:
                out.append(addr.to_bytes(8, "big"))
        return b"".join(out)


def decode_dht_bytes(blob: bytes) -> dict[int, tuple[int, ...]]:
    entries: dict[int, tuple[int, ...]] = {}
    pos = 0
    last = -1
    while pos < len(blob):
        if pos + 5 > len(blob):
            raise MalformedDhtError("truncated entry header")
        task_id = int.from_bytes(blob[pos : pos + 4], "big")
        count = blob[pos + 4]
        pos += 5
        if count < 1:
            raise MalformedDhtError(f"task {task_id} has no replicas")
        if task_id <= last:
            raise MalformedDhtError("entries not sorted by task id")
        last = task_id
        end = pos + 8 * count
        if end > len(blob):
            raise MalformedDhtError("truncated address list")
        entries[task_id] = tuple(
            int.from_bytes(blob[p : p + 8], "big") for p in range(pos, end, 8)
        )
        pos = end
    return entries


@dataclass(frozen=True)
class SignedDht:
    dht: Dht
    blob: bytes
    signature: bytes


def distribute(
    chunks: Sequence[TaskChunk], nodes: Sequence[StorageNode], r: int
) -> Dht:
    """Place each chunk on r distinct nodes, round-robin from task_id mod N.

    Nodes receive only (payload, signature, plain_len); wrapped keys stay
    with the data owner.
    """
    if r < 1 or r > len(nodes):
        raise ValueError(f"replication {r} not in [1, {len(nodes)}]")
    if len({n.addr for n in nodes}) != len(nodes):
        raise ValueError("duplicate node addresses")
    entries: dict[int, tuple[int, ...]] = {}
    for chunk in chunks:
        picks = [nodes[(chunk.task_id + j) % len(nodes)] for j in range(r)]
        for node in picks:
            node.blobs[chunk.task_id] = StoredBlob(
                payload=chunk.payload,
                signature=chunk.signature,
                plain_len=chunk.plain_len,
            )
        entries[chunk.task_id] = tuple(n.addr for n in picks)
    return Dht(entries=entries)


def sign_dht(
    dht: Dht, consumer: KeyPair, scheme: CryptoScheme | None = None
) -> SignedDht:
    scheme = scheme or DEFAULT_SCHEME
    blob = dht.canonical_bytes()
    return SignedDht(dht=dht, blob=blob, signature=scheme.sign(consumer.private, blob))


def verify_dht(
    sd: SignedDht, public: bytes, scheme: CryptoScheme | None = None
) -> bool:
    """True iff the signed bytes parse as a placement table and the
    signature checks out under ``public``."""
    scheme = scheme or DEFAULT_SCHEME
    decode_dht_bytes(sd.blob)  # raises MalformedDhtError on garbage
    return scheme.verify(public, sd.blob, sd.signature)


@dataclass
class Dataset:
    """Owner-side record of one distributed dataset."""

    dht: Dht
    policy: AccessPolicy
    wrapped: dict[int, dict[PeerId, bytes]]  # task -> peer -> wrapped key
    consumer_public: bytes

    @classmethod
    def assemble(
        cls, chunks: Sequence[TaskChunk], dht: Dht, policy: AccessPolicy,
        consumer_public: bytes,
    ) -> "Dataset":
        return cls(
            dht=dht,
            policy=policy,
            wrapped={c.task_id: dict(c.wrapped_keys) for c in chunks},
            consumer_public=consumer_public,
        )


def fetch_chunk(
    requester: PeerId,
    task_id: int,
    dataset: Dataset,
    cluster: Mapping[int, StorageNode],
) -> TaskChunk:
    """Serve one chunk from the first live replica, plus the requester's
    wrapped key. Untrusted peers and unknown task ids get the same denial.
    """
    if (
        not dataset.policy.allows(requester)
        or task_id not in dataset.dht.entries
        or task_id not in dataset.wrapped
        or requester not in dataset.wrapped[task_id]
    ):
        raise AccessDeniedError()
    for addr in dataset.dht.entries[task_id]:
        node = cluster.get(addr)
        if node is None or not node.live:
            continue
        blob = node.blobs.get(task_id)
        if blob is None:
            continue
        return TaskChunk(
            task_id=task_id,
            payload=blob.payload,
            wrapped_keys={requester: dataset.wrapped[task_id][requester]},
            signature=blob.signature,
            plain_len=blob.plain_len,
        )
    raise ChunkUnavailableError(f"all replicas down for task {task_id}")


def open_chunk(
    chunk: TaskChunk,
    peer: PeerId,
    keypair: KeyPair,
    scheme: CryptoScheme | None = None,
    consumer_public: bytes | None = None,
) -> bytes:
    """Unwrap the task key and decrypt; optionally verify the chunk signature."""
    scheme = scheme or DEFAULT_SCHEME
    wrapped = chunk.wrapped_keys.get(peer)
    if wrapped is None:
        raise AccessDeniedError()
    if consumer_public is not None and not scheme.verify(
        consumer_public,
        _chunk_sig_message(chunk.task_id, chunk.payload),
        chunk.signature,
    ):
        raise ValueError(f"chunk {chunk.task_id} signature invalid")
    key = scheme.decrypt(keypair.private, wrapped)
    plain = symmetric_cipher(key, chunk.payload)
    if len(plain) != chunk.plain_len:
        raise ValueError(f"chunk {chunk.task_id} length mismatch")
    return plain


__all__ = [
    "AccessDeniedError",
    "AccessPolicy",
    "ChunkUnavailableError",
    "Dataset",
    "Dht",
    "MalformedDhtError",
    "SignedDht",
    "StorageNode",
    "TaskChunk",
    "chunk_data",
    "decode_dht_bytes",
    "distribute",
    "encrypt_and_sign",
    "fetch_chunk",
    "keygen",
    "open_chunk",
    "reassemble",
    "result_digest",
    "sign_dht",
    "verify_dht",
]
