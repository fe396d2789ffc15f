"""Intermediary contract: deposit custody, session protocol, settlement.

One Session drives a single engagement through the six-step handshake
(deposit/VMs, key exchange, distribution, DHT delivery, verification)
and then pays providers per tick out of the held deposit. Settlement is
exactly conservative: compute payment + storage payments + refund equals
the deposit to the micro-dollar, on every exit path including aborts and
deposit exhaustion.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from . import ledger as ledgermod
from .crypto import CryptoScheme
from .domain import Money, UserId, ZERO
from .gasmeter import GasMeter, Primitive
from .ledger import Ledger, TxKind
from .matchmaker import Engagement
from .vault import MalformedDhtError, SignedDht, verify_dht


class SessionState(Enum):
    PROVISIONED = "provisioned"
    KEYS_EXCHANGED = "keys_exchanged"
    DISTRIBUTED = "distributed"
    DHT_VERIFIED = "dht_verified"
    COMPUTING = "computing"
    SETTLED = "settled"
    ABORTED = "aborted"


class ProtocolOrderError(Exception):
    pass


@dataclass(frozen=True)
class VmHandle:
    owner: UserId
    vm_id: str


@dataclass(frozen=True)
class Settlement:
    compute_payment: Money
    storage_payments: tuple[tuple[UserId, Money], ...]
    refund: Money
    aborted: bool = False

    @property
    def total(self) -> Money:
        total = self.compute_payment + self.refund
        for _, amt in self.storage_payments:
            total = total + amt
        return total


class Session:
    """State machine for one engagement's escrow lifecycle."""

    def __init__(
        self,
        session_id: int,
        engagement: Engagement,
        deposit: Money,
        compute_charge: Money,
        storage_rate: Money,
        escrow: "Escrow",
    ):
        self.session_id = session_id
        self.engagement = engagement
        self.deposit = deposit
        self.compute_charge = compute_charge
        self.storage_rate = storage_rate
        self._escrow = escrow
        self.state = SessionState.PROVISIONED
        self.ticks_served = 0
        self.paid_compute = ZERO
        self.paid_storage: dict[UserId, Money] = {
            sp: ZERO for sp in engagement.storage_providers
        }
        self.consumer_public: bytes | None = None
        self.provider_public: bytes | None = None
        self.signed_dht: SignedDht | None = None
        self.vms = [VmHandle(engagement.compute_provider, f"vm-{session_id}-c")] + [
            VmHandle(sp, f"vm-{session_id}-s{i}")
            for i, sp in enumerate(engagement.storage_providers)
        ]
        self._unbilled_ticks = 0
        self.settlement: Settlement | None = None

    # -- helpers ----------------------------------------------------------

    def _require(self, state: SessionState) -> None:
        if self.state is not state:
            raise ProtocolOrderError(
                f"session {self.session_id}: expected {state.name}, "
                f"in {self.state.name}"
            )

    @property
    def paid_total(self) -> Money:
        total = self.paid_compute
        for amt in self.paid_storage.values():
            total = total + amt
        return total

    @property
    def remaining(self) -> Money:
        return self.deposit - self.paid_total

    @property
    def tick_cost(self) -> Money:
        return self.compute_charge + self.storage_rate * len(self.paid_storage)

    # -- six-step protocol -------------------------------------------------

    def record_key_exchange(self, consumer_public: bytes, provider_public: bytes) -> "Session":
        self._require(SessionState.PROVISIONED)
        self.consumer_public = consumer_public
        self.provider_public = provider_public
        self.state = SessionState.KEYS_EXCHANGED
        meter = self._escrow.meter
        meter.charge(self.engagement.consumer, Primitive.MESSAGE_EMIT)
        meter.charge(self.engagement.compute_provider, Primitive.MESSAGE_EMIT)
        return self

    def record_distribution(self, sd: SignedDht) -> "Session":
        # Signature validity is checked at step 6, not here.
        self._require(SessionState.KEYS_EXCHANGED)
        if not sd.dht.entries:
            raise ValueError("DHT covers no tasks")
        self.signed_dht = sd
        self.state = SessionState.DISTRIBUTED
        meter = self._escrow.meter
        meter.charge(self.engagement.consumer, Primitive.STORAGE_WRITE)
        meter.charge(self.engagement.consumer, Primitive.MESSAGE_EMIT)
        return self

    def verify_and_start(self) -> "Session | Settlement":
        """Step 6: check the DHT signature against the consumer's key.

        Failure aborts the session with a full refund; success passes
        through DHT_VERIFIED straight into COMPUTING.
        """
        self._require(SessionState.DISTRIBUTED)
        meter = self._escrow.meter
        meter.charge(self.engagement.compute_provider, Primitive.SIGNATURE_VERIFY)
        try:
            ok = verify_dht(self.signed_dht, self.consumer_public, self._escrow.scheme)
        except MalformedDhtError:
            ok = False
        if not ok:
            return self._settle(aborted=True)
        self.state = SessionState.DHT_VERIFIED
        self.state = SessionState.COMPUTING
        return self

    # -- metered service ---------------------------------------------------

    def tick(self) -> "Session | Settlement":
        """Serve one tick and debit providers; auto-checkout fires as soon
        as the remaining deposit cannot cover another full tick."""
        self._require(SessionState.COMPUTING)
        if self.remaining < self.tick_cost:
            return self._settle(aborted=False)
        self.paid_compute = self.paid_compute + self.compute_charge
        for sp in self.paid_storage:
            self.paid_storage[sp] = self.paid_storage[sp] + self.storage_rate
        self.ticks_served += 1
        self._unbilled_ticks += 1
        if self._unbilled_ticks >= self._escrow.payment_batch:
            self._emit_tick_payment()
        if self.remaining < self.tick_cost:
            return self._settle(aborted=False)
        return self

    def checkout(self) -> Settlement:
        self._require(SessionState.COMPUTING)
        return self._settle(aborted=False)

    def _emit_tick_payment(self) -> None:
        if self._unbilled_ticks == 0:
            return
        n = self._unbilled_ticks
        self._unbilled_ticks = 0
        storage_amts = [
            (sp, self.storage_rate * n) for sp in self.paid_storage
        ]
        self._escrow.ledger.append(
            TxKind.TICK_PAYMENT,
            ledgermod.tick_payment_payload(
                self.session_id, self.ticks_served, self.compute_charge * n,
                storage_amts,
            ),
        )
        self._escrow.meter.charge(self.engagement.consumer, Primitive.MESSAGE_EMIT)

    def _settle(self, aborted: bool) -> Settlement:
        self._emit_tick_payment()
        storage_payments = tuple(self.paid_storage.items())
        settlement = Settlement(
            compute_payment=self.paid_compute,
            storage_payments=storage_payments,
            refund=self.remaining,
            aborted=aborted,
        )
        self.state = SessionState.ABORTED if aborted else SessionState.SETTLED
        self.settlement = settlement
        ledger = self._escrow.ledger
        if aborted:
            ledger.append(
                TxKind.ABORTED,
                ledgermod.aborted_payload(self.session_id, settlement.refund),
            )
        else:
            ledger.append(
                TxKind.SETTLED,
                ledgermod.settled_payload(
                    self.session_id,
                    settlement.compute_payment,
                    storage_payments,
                    settlement.refund,
                ),
            )
        meter = self._escrow.meter
        meter.charge(self.engagement.consumer, Primitive.STORAGE_WRITE)
        meter.charge(self.engagement.consumer, Primitive.MESSAGE_EMIT)
        self._escrow.close_session(self)
        return settlement


class Escrow:
    """Factory and custodian for sessions; enforces one session per engagement."""

    def __init__(
        self,
        ledger: Ledger,
        meter: GasMeter,
        scheme: CryptoScheme,
        storage_rate: Fraction = Fraction(1, 5),
        payment_batch: int = 1,
        sessions_per_contract: int = 1,
    ):
        self.ledger = ledger
        self.meter = meter
        self.scheme = scheme
        self.storage_rate = storage_rate
        self.payment_batch = payment_batch
        self.sessions_per_contract = sessions_per_contract
        self._next_session = 0
        self._opened: set[Engagement] = set()
        self._active: dict[UserId, int] = {}  # participant -> open session count
        self.sessions: dict[int, Session] = {}

    def open_session(
        self, engagement: Engagement, budget: Money, compute_charge: Money
    ) -> Session:
        if budget == ZERO:
            raise ValueError("zero budget: nothing to escrow")
        if engagement in self._opened:
            raise ProtocolOrderError("engagement already has a session")
        self._opened.add(engagement)
        session_id = self._next_session
        self._next_session += 1
        session = Session(
            session_id=session_id,
            engagement=engagement,
            deposit=budget,
            compute_charge=compute_charge,
            storage_rate=compute_charge.scaled(self.storage_rate),
            escrow=self,
        )
        self.sessions[session_id] = session
        for uid in (engagement.consumer, engagement.compute_provider,
                    *engagement.storage_providers):
            self._active[uid] = self._active.get(uid, 0) + 1

        # The intermediary contract's setup fee is amortized across a
        # configurable number of sessions.
        if (session_id % self.sessions_per_contract) == 0:
            self.meter.charge(engagement.consumer, Primitive.CONTRACT_SETUP)
        self.meter.charge(engagement.consumer, Primitive.STORAGE_WRITE)
        self.meter.charge(engagement.consumer, Primitive.MESSAGE_EMIT)
        self.ledger.append(
            TxKind.DEPOSIT,
            ledgermod.deposit_payload(session_id, engagement.consumer, budget),
        )
        return session

    def close_session(self, session: Session) -> None:
        for uid in (
            session.engagement.consumer,
            session.engagement.compute_provider,
            *session.engagement.storage_providers,
        ):
            count = self._active.get(uid, 0) - 1
            if count <= 0:
                self._active.pop(uid, None)
            else:
                self._active[uid] = count

    def is_active(self, user_id: UserId) -> bool:
        return user_id in self._active
