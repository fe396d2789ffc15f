"""Service layer: registration, id assignment and per-region allocation.

The registry is the cross-layer controller: it validates registration
records, assigns strictly increasing user ids, meters registration gas,
writes Registration transactions, and routes each user into its region's
matchmaker (providers into the book, consumers into the matching path).
"""

from __future__ import annotations

from dataclasses import replace
from typing import Callable

from . import ledger as ledgermod
from .domain import Region, Role, UserId, UserSpec
from .gasmeter import GasMeter, Primitive
from .ledger import Ledger, TxKind
from .matchmaker import Engagement, Matchmaker


class RegistryError(Exception):
    pass


class UnknownUserError(RegistryError):
    pass


class Registry:
    """Single-writer user directory plus the region-network map."""

    def __init__(
        self,
        cities: int,
        condition_bits: int,
        ledger: Ledger,
        meter: GasMeter,
        replication: int = 2,
        drain_batch: int = 1,
        status_reads: int = 0,
        log_descents: bool = False,
        session_guard: Callable[[UserId], bool] | None = None,
    ):
        if cities < 1:
            raise ValueError("need at least one city")
        self.cities = cities
        self.condition_bits = condition_bits
        self.ledger = ledger
        self.meter = meter
        self.status_reads = status_reads
        self.next_id: UserId = 0
        self.users: dict[UserId, UserSpec] = {}
        self.region_networks: dict[int, Matchmaker] = {
            i: Matchmaker(
                region_index=i,
                condition_bits=condition_bits,
                ledger=ledger,
                meter=meter,
                replication=replication,
                drain_batch=drain_batch,
                log_descents=log_descents,
            )
            for i in range(cities)
        }
        self._allocated: set[UserId] = set()
        # Consulted before deregistration; True means the user is mid-session.
        self.session_guard = session_guard

    def network(self, region: Region) -> Matchmaker:
        return self.region_networks[region.city_index]

    def register(self, spec: UserSpec) -> UserId:
        """Validate, assign an id, meter gas and write the Registration tx."""
        if spec.region.city_index >= self.cities:
            raise RegistryError(
                f"region {spec.region.city_index} outside {self.cities} cities"
            )
        if len(spec.conditions) != self.condition_bits:
            raise RegistryError(
                f"condition vector length {len(spec.conditions)} != {self.condition_bits}"
            )
        if spec.id is None:
            user_id = self.next_id
        else:
            # Explicit ids are accepted only if fresh; anything below the
            # counter could collide with a deregistered id.
            if spec.id in self.users or spec.id < self.next_id:
                raise RegistryError(f"duplicate user id {spec.id}")
            user_id = spec.id
        stored = replace(spec, id=user_id)
        self.users[user_id] = stored
        self.next_id = user_id + 1

        self.meter.charge(user_id, Primitive.STORAGE_WRITE)
        self.meter.charge(user_id, Primitive.MAP_INSERT)
        if self.status_reads:
            self.meter.charge(user_id, Primitive.STORAGE_READ, self.status_reads)
        self.ledger.append(
            TxKind.REGISTRATION,
            ledgermod.registration_payload(
                user_id, stored.role, stored.region, stored.price
            ),
        )
        return user_id

    def allocate(self, user_id: UserId, tick: int = 0) -> Region:
        """Route the user into its region network; idempotent per id.

        Consumers attempt a match immediately; providers enter the book,
        which may drain waiting consumers. Resulting engagements are
        retrievable from the region's matchmaker.
        """
        spec = self._get(user_id)
        if user_id in self._allocated:
            return spec.region
        network = self.network(spec.region)
        if spec.role is Role.CONSUMER:
            network.match_consumer(spec, tick)
        else:
            network.add_provider(spec, tick)
        self._allocated.add(user_id)
        return spec.region

    def allocate_and_collect(self, user_id: UserId, tick: int) -> list[Engagement]:
        """Allocate and return any engagements this arrival produced."""
        spec = self._get(user_id)
        if user_id in self._allocated:
            return []
        network = self.network(spec.region)
        self._allocated.add(user_id)
        if spec.role is Role.CONSUMER:
            e = network.match_consumer(spec, tick)
            return [e] if e else []
        return network.add_provider(spec, tick)

    def deregister(self, user_id: UserId) -> None:
        spec = self._get(user_id)
        if self.session_guard is not None and self.session_guard(user_id):
            raise RegistryError(f"user {user_id} is inside an active session")
        network = self.network(spec.region)
        if spec.role is Role.CONSUMER:
            network.remove_consumer(user_id)
        else:
            network.remove_provider(user_id)
        del self.users[user_id]
        self._allocated.discard(user_id)
        self.meter.charge(user_id, Primitive.MAP_DELETE)

    def _get(self, user_id: UserId) -> UserSpec:
        spec = self.users.get(user_id)
        if spec is None:
            raise UnknownUserError(f"unknown user {user_id}")
        return spec

    def allocation_snapshot(self) -> dict[int, set[UserId]]:
        """Region index -> ids currently allocated there (for partition checks)."""
        out: dict[int, set[UserId]] = {i: set() for i in range(self.cities)}
        for user_id in self._allocated:
            spec = self.users.get(user_id)
            if spec is not None:
                out[spec.region.city_index].add(user_id)
        return out
