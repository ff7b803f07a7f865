"""Anchoring of super blocks to simulated external chains.

Two deterministic backends are built in. The public gas-tiered backend
samples confirmation latency from a lognormal centered on a 20.34 s median
(sigma fitted to the observed quartile spread) and clamps it to the cap of
the gas-price tier in force, so paying more never waits longer. The private
fixed-cost backend samples uniformly from [0.78, 3.63] s. Both add a rare
heavy tail: with probability 0.002 the sampled latency is multiplied by 10
(the public backend re-clamps; the private one does not, matching the
occasional multi-minute confirmations seen in the wild).

Latency is virtual: receipts carry submitted_at/confirmed_at computed from
the sample, and the FIFO worker resolves receipts immediately unless a
time_scale is configured. Everything is reproducible under a fixed seed.
Receipts persist in the store's JSON-lines log so verification survives
restarts.
"""

from __future__ import annotations

import math
import queue
import random
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass
from datetime import datetime, timedelta
from enum import Enum
from typing import Callable

from .core import Block, BlockKind, format_timestamp, parse_timestamp, sha256_hex, utc_now
from .store import ReceiptLog

PUBLIC_GAS_UNITS_PER_SUPER_BLOCK = 335_000

PUBLIC_LATENCY_MEDIAN_S = 20.34
PUBLIC_LATENCY_SIGMA = 0.8

PRIVATE_LATENCY_MIN_S = 0.78
PRIVATE_LATENCY_MAX_S = 3.63

TAIL_PROBABILITY = 0.002
TAIL_MULTIPLIER = 10.0

# gas price (gwei) -> confirmation-time ceiling (seconds)
DEFAULT_TIERS = ((6, 1800.0), (9, 300.0), (20, 120.0))


class AnchorError(Exception):
    pass


class NotAllowed(AnchorError):
    """Sender is not on the backend's allowlist."""


class BackendDown(AnchorError):
    pass


class ReceiptNotFound(AnchorError):
    pass


class LatencyModelKind(Enum):
    PUBLIC_GAS_TIERED = "PUBLIC_GAS_TIERED"
    PRIVATE_FIXED = "PRIVATE_FIXED"


@dataclass(frozen=True)
class LatencySample:
    seconds: float
    tail_event: bool


@dataclass(frozen=True)
class LatencyModel:
    """Seeded latency distribution for one backend."""

    kind: LatencyModelKind
    rng_seed: int = 0
    tiers: tuple[tuple[int, float], ...] = DEFAULT_TIERS
    median_s: float = PUBLIC_LATENCY_MEDIAN_S
    sigma: float = PUBLIC_LATENCY_SIGMA
    min_s: float = PRIVATE_LATENCY_MIN_S
    max_s: float = PRIVATE_LATENCY_MAX_S
    tail_probability: float = TAIL_PROBABILITY
    tail_multiplier: float = TAIL_MULTIPLIER

    def rng(self) -> random.Random:
        return random.Random(self.rng_seed)

    def cap_for(self, gas_price: int | None) -> float:
        """Ceiling of the highest tier the gas price buys; below all tiers, the slowest."""
        tiers = sorted(self.tiers)
        cap = tiers[0][1]
        for gwei, tier_cap in tiers:
            if gas_price is not None and gas_price >= gwei:
                cap = tier_cap
        return cap

    def sample(self, rng: random.Random, gas_price: int | None = None) -> LatencySample:
        """Draw one latency. The draw sequence is tier-independent so that the
        same seed yields the same underlying randomness at every gas price."""
        if self.kind is LatencyModelKind.PRIVATE_FIXED:
            latency = rng.uniform(self.min_s, self.max_s)
        else:
            latency = rng.lognormvariate(math.log(self.median_s), self.sigma)
        tail = rng.random() < self.tail_probability
        if tail:
            latency *= self.tail_multiplier
        if self.kind is LatencyModelKind.PUBLIC_GAS_TIERED:
            latency = min(latency, self.cap_for(gas_price))
        return LatencySample(round(latency, 6), tail)


@dataclass(frozen=True)
class AnchorRequest:
    super_block: Block
    sender: str
    gas_price: int | None = None  # public backend only

    def __post_init__(self) -> None:
        if self.super_block.kind is not BlockKind.SUPER:
            raise ValueError(f"only super blocks are anchored, got {self.super_block.kind.value}")


@dataclass(frozen=True)
class AnchorReceipt:
    tx_hash: str
    backend_block_number: int
    sender: str
    content_hash: str
    fee_units: int
    latency: float
    submitted_at: datetime
    confirmed_at: datetime

    def to_dict(self) -> dict:
        return {
            "tx_hash": self.tx_hash,
            "backend_block_number": self.backend_block_number,
            "sender": self.sender,
            "content_hash": self.content_hash,
            "fee_units": self.fee_units,
            "latency": self.latency,
            "submitted_at": format_timestamp(self.submitted_at),
            "confirmed_at": format_timestamp(self.confirmed_at),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AnchorReceipt":
        return cls(
            tx_hash=obj["tx_hash"],
            backend_block_number=obj["backend_block_number"],
            sender=obj["sender"],
            content_hash=obj["content_hash"],
            fee_units=obj["fee_units"],
            latency=obj["latency"],
            submitted_at=parse_timestamp(obj["submitted_at"]),
            confirmed_at=parse_timestamp(obj["confirmed_at"]),
        )


class PendingAnchor:
    """Completion handle for an enqueued submission."""

    def __init__(self) -> None:
        self._future: Future[AnchorReceipt] = Future()

    def done(self) -> bool:
        return self._future.done()

    def result(self, timeout: float | None = None) -> AnchorReceipt:
        return self._future.result(timeout)


@dataclass
class _Job:
    request: AnchorRequest
    pending: PendingAnchor
    submitted_at: datetime


class AnchorBackend:
    """FIFO anchoring simulator with persisted receipts and an allowlist.

    Subclasses pin the latency model and the fee schedule. One worker thread
    drains the queue in submission order; backend block numbers are strictly
    increasing. time_scale > 0 makes the worker sleep latency * time_scale
    per job, for wall-clock realism.
    """

    kind = "backend"

    def __init__(
        self,
        latency_model: LatencyModel,
        receipt_log: ReceiptLog,
        *,
        allowlist: tuple[str, ...] = (),
        time_scale: float = 0.0,
        clock: Callable[[], datetime] = utc_now,
        on_receipt: Callable[[AnchorReceipt], None] | None = None,
    ):
        self.latency_model = latency_model
        self._receipt_log = receipt_log
        self._allowlist = set(allowlist)
        self._time_scale = time_scale
        self._clock = clock
        self._on_receipt = on_receipt
        self._rng = latency_model.rng()
        self._down = False
        self._lock = threading.Lock()
        self._by_tx: dict[str, AnchorReceipt] = {}
        self._by_content: dict[str, AnchorReceipt] = {}
        for record in receipt_log.all():
            receipt = AnchorReceipt.from_dict(record)
            self._by_tx[receipt.tx_hash] = receipt
            self._by_content[receipt.content_hash] = receipt
        self._block_number = max((r.backend_block_number for r in self._by_tx.values()), default=0)
        self._queue: queue.Queue[_Job | None] = queue.Queue()
        self._worker = threading.Thread(target=self._run, name=f"anchor-{self.kind}", daemon=True)
        self._worker.start()

    # -- allowlist / outage knobs -------------------------------------------

    def allowlist_add(self, sender: str) -> None:
        with self._lock:
            self._allowlist.add(sender)

    def allowlist_remove(self, sender: str) -> None:
        with self._lock:
            self._allowlist.discard(sender)

    def set_down(self, down: bool) -> None:
        self._down = down

    # -- submission ----------------------------------------------------------

    def fee_for(self, request: AnchorRequest) -> int:
        raise NotImplementedError

    def submit(self, request: AnchorRequest) -> PendingAnchor:
        if self._down:
            raise BackendDown(f"{self.kind} backend is down")
        with self._lock:
            if request.sender not in self._allowlist:
                raise NotAllowed(f"sender {request.sender!r} is not on the allowlist")
        pending = PendingAnchor()
        self._queue.put(_Job(request, pending, self._clock()))
        return pending

    def _run(self) -> None:
        while True:
            job = self._queue.get()
            if job is None:
                self._queue.task_done()
                return
            try:
                receipt = self._confirm(job)
                job.pending._future.set_result(receipt)
            except Exception as exc:  # pragma: no cover - defensive
                job.pending._future.set_exception(exc)
            finally:
                self._queue.task_done()

    def _confirm(self, job: _Job) -> AnchorReceipt:
        sample = self.latency_model.sample(self._rng, job.request.gas_price)
        if self._time_scale > 0:
            time.sleep(sample.seconds * self._time_scale)
        with self._lock:
            self._block_number += 1
            block_number = self._block_number
        content_hash = sha256_hex(job.request.super_block.to_json())
        tx_hash = sha256_hex(f"{self.kind}|{block_number}|{content_hash}|{job.request.sender}")
        receipt = AnchorReceipt(
            tx_hash=tx_hash,
            backend_block_number=block_number,
            sender=job.request.sender,
            content_hash=content_hash,
            fee_units=self.fee_for(job.request),
            latency=sample.seconds,
            submitted_at=job.submitted_at,
            confirmed_at=job.submitted_at + timedelta(seconds=sample.seconds),
        )
        with self._lock:
            self._receipt_log.append(receipt.to_dict())
            self._by_tx[receipt.tx_hash] = receipt
            self._by_content[receipt.content_hash] = receipt
        if self._on_receipt is not None:
            self._on_receipt(receipt)
        return receipt

    # -- queries ---------------------------------------------------------------

    def get_receipt(self, tx_hash: str) -> AnchorReceipt:
        with self._lock:
            receipt = self._by_tx.get(tx_hash)
        if receipt is None:
            raise ReceiptNotFound(f"no receipt for transaction {tx_hash}")
        return receipt

    def verify_anchor(self, super_block: Block) -> bool:
        """True iff some receipt's content hash matches this exact super block."""
        content_hash = sha256_hex(super_block.to_json())
        with self._lock:
            return content_hash in self._by_content

    def anchored_content_hashes(self) -> set[str]:
        with self._lock:
            return set(self._by_content)

    @property
    def receipt_count(self) -> int:
        with self._lock:
            return len(self._by_tx)

    @property
    def pending_count(self) -> int:
        return self._queue.unfinished_tasks

    def drain(self) -> None:
        """Block until every enqueued submission has a receipt."""
        self._queue.join()

    def close(self) -> None:
        self._queue.put(None)
        self._worker.join(timeout=10)


class PublicBackend(AnchorBackend):
    """Gas-priced public-chain simulator; every super block costs 335K gas units."""

    kind = "public"

    def __init__(self, receipt_log: ReceiptLog, *, seed: int = 0, tiers=DEFAULT_TIERS, **kwargs):
        model = LatencyModel(
            kind=LatencyModelKind.PUBLIC_GAS_TIERED,
            rng_seed=seed,
            tiers=tuple(tuple(t) for t in tiers),
        )
        super().__init__(model, receipt_log, **kwargs)

    def fee_for(self, request: AnchorRequest) -> int:
        # contract execution cost is fixed; payload length does not matter
        return PUBLIC_GAS_UNITS_PER_SUPER_BLOCK


class PrivateBackend(AnchorBackend):
    """Fixed-infrastructure private-chain simulator; no per-transaction fee."""

    kind = "private"

    def __init__(self, receipt_log: ReceiptLog, *, seed: int = 0, **kwargs):
        model = LatencyModel(kind=LatencyModelKind.PRIVATE_FIXED, rng_seed=seed)
        super().__init__(model, receipt_log, **kwargs)

    def fee_for(self, request: AnchorRequest) -> int:
        return 0


def make_backend(
    kind: str,
    receipt_log: ReceiptLog,
    *,
    seed: int = 0,
    tiers=DEFAULT_TIERS,
    allowlist: tuple[str, ...] = (),
    time_scale: float = 0.0,
    on_receipt: Callable[[AnchorReceipt], None] | None = None,
) -> AnchorBackend:
    if kind == "public":
        return PublicBackend(
            receipt_log,
            seed=seed,
            tiers=tiers,
            allowlist=allowlist,
            time_scale=time_scale,
            on_receipt=on_receipt,
        )
    if kind == "private":
        return PrivateBackend(
            receipt_log,
            seed=seed,
            allowlist=allowlist,
            time_scale=time_scale,
            on_receipt=on_receipt,
        )
    raise ValueError(f"unknown backend kind {kind!r}")
