"""Two-level hierarchical ledger.

Log payloads are mined into data blocks of a capacity-capped circled chain.
When the chain reaches capacity it is sealed: a terminal block whose data is
the JSON terminal payload (aggregate hash plus range metadata) closes it, and
a super block embedding the full terminal block is mined onto the super
chain and handed to the anchoring queue. The next circled chain opens lazily
with a relative-genesis block bound to the previous terminal block's hash, so
the flattened ledger is one unbroken hash chain while the super chain can be
verified on its own in time proportional to the number of sealed chains.

Writes (appends and seals) are serialized through a single writer; concurrent
write attempts fail fast with LedgerLocked instead of queueing here — callers
that want queueing put one in front (the HTTP service does). Reads against
committed state are safe at any time.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Callable, Sequence

from .core import (
    ZERO_HASH,
    Block,
    BlockDecodeError,
    BlockKind,
    DifficultyTarget,
    canonical_content,
    format_timestamp,
    mine_block,
    parse_timestamp,
    pow_hash,
    sha256_hex,
    utc_now,
)
from .store import BlockStore, StoreError

_PAYLOAD_KEYS = ("aggr_hash", "timestamp_from", "timestamp_to", "block_index_from", "block_index_to")


class LedgerError(Exception):
    pass


class LedgerLocked(LedgerError):
    """A write is in progress; the caller should retry."""


class NotFull(LedgerError):
    pass


class NotSealed(LedgerError):
    pass


class RangeOutOfBounds(LedgerError):
    pass


class InconsistentChain(LedgerError):
    """Stored blocks contradict their own hashes; the ledger has been tampered with."""


class ChainState(Enum):
    OPEN = "OPEN"
    SEALED = "SEALED"


def alpha_index(j: int, capacities: Sequence[int]) -> int:
    """Global index of the terminal block sealing circled chain j.

    The first chain holds a genesis block plus capacities[0] data blocks, so
    its terminal lands at capacities[0] + 1; every later chain contributes a
    relative genesis, its data blocks, and a terminal (capacities[i] + 2
    blocks).
    """
    if j < 0:
        raise ValueError("ordinal must be non-negative")
    if len(capacities) < j + 1:
        raise ValueError(f"need {j + 1} capacities, got {len(capacities)}")
    alpha = capacities[0] + 1
    for i in range(1, j + 1):
        alpha += capacities[i] + 2
    return alpha


def beta_index(j: int, capacities: Sequence[int]) -> int:
    """Global index of the (absolute or relative) genesis block of circled chain j."""
    if j == 0:
        return 0
    return alpha_index(j - 1, capacities) + 1


@dataclass(frozen=True)
class TerminalPayload:
    """The seal of a circled chain, stored as the terminal block's data element.

    aggr_hash covers the genesis through the last data block (the terminal
    block itself is excluded), hashing the concatenation of their lowercase
    current_hash strings. block_index_to is the last data block's index, i.e.
    the terminal's own index minus one.
    """

    aggr_hash: str
    timestamp_from: datetime
    timestamp_to: datetime
    block_index_from: int
    block_index_to: int

    def validate(self) -> None:
        if not self.block_index_from < self.block_index_to:
            raise BlockDecodeError("block_index_from must be < block_index_to")
        if self.timestamp_from > self.timestamp_to:
            raise BlockDecodeError("timestamp_from must be <= timestamp_to")
        if len(self.aggr_hash) != 64:
            raise BlockDecodeError("aggr_hash must be 64 hex chars")

    def to_json(self) -> str:
        return json.dumps(
            {
                "aggr_hash": self.aggr_hash,
                "timestamp_from": format_timestamp(self.timestamp_from),
                "timestamp_to": format_timestamp(self.timestamp_to),
                "block_index_from": self.block_index_from,
                "block_index_to": self.block_index_to,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, raw: str | bytes) -> "TerminalPayload":
        try:
            obj = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise BlockDecodeError(f"invalid terminal payload JSON: {exc}") from exc
        if not isinstance(obj, dict) or set(obj) != set(_PAYLOAD_KEYS):
            raise BlockDecodeError("terminal payload must have exactly the canonical keys")
        payload = cls(
            aggr_hash=obj["aggr_hash"],
            timestamp_from=parse_timestamp(obj["timestamp_from"]),
            timestamp_to=parse_timestamp(obj["timestamp_to"]),
            block_index_from=obj["block_index_from"],
            block_index_to=obj["block_index_to"],
        )
        payload.validate()
        return payload


@dataclass
class CircledChain:
    ordinal: int
    capacity: int
    blocks: list[Block]
    state: ChainState

    @property
    def data_count(self) -> int:
        return max(len(self.blocks) - (2 if self.state is ChainState.SEALED else 1), 0)

    @property
    def terminal(self) -> Block:
        if self.state is not ChainState.SEALED:
            raise NotSealed(f"circled chain {self.ordinal} is still open")
        return self.blocks[-1]


@dataclass
class BlockCheck:
    index: int
    pow_ok: bool
    binding_ok: bool
    kind_ok: bool
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.pow_ok and self.binding_ok and self.kind_ok and self.error is None


@dataclass
class VerificationReport:
    entries: list[BlockCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(entry.ok for entry in self.entries)

    @property
    def first_bad_index(self) -> int | None:
        for entry in self.entries:
            if not entry.ok:
                return entry.index
        return None


class Ledger:
    """Single-writer ledger over a BlockStore.

    on_super, when set, is invoked with every freshly sealed super block; the
    anchoring queue hangs off this callback so sealing never waits on a
    (simulated) external chain. timing_sink receives (kind, seconds) for every
    internally mined block.
    """

    def __init__(
        self,
        store: BlockStore,
        difficulty: str,
        capacity: int,
        *,
        on_super: Callable[[Block], None] | None = None,
        timing_sink: Callable[[str, float], None] | None = None,
        clock: Callable[[], datetime] = utc_now,
        repair: bool = True,
    ):
        DifficultyTarget(difficulty)
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.store = store
        self.difficulty = difficulty
        self.capacity = capacity
        self._on_super = on_super
        self._timing_sink = timing_sink
        self._clock = clock
        self._write_lock = threading.Lock()
        self._open: list[Block] = []
        self._sealed_count = 0
        self._last_terminal: Block | None = None
        self._super_tip: str = ZERO_HASH
        self._rebuild_state()
        if repair:
            self._complete_missing_supers()

    # -- startup ------------------------------------------------------------

    def _rebuild_state(self) -> None:
        for block in self.store.scan():
            if block.kind in (BlockKind.AGB, BlockKind.RGB):
                self._open = [block]
            elif block.kind is BlockKind.DATA:
                self._open.append(block)
            elif block.kind is BlockKind.TERMINAL:
                self._sealed_count += 1
                self._last_terminal = block
                self._open = []
            else:
                raise InconsistentChain(f"block {block.index} has kind {block.kind.value}")
        if self.store.super_count:
            self._super_tip = self.store.get_super(self.store.super_count - 1).current_hash

    def _complete_missing_supers(self) -> None:
        # a crash between terminal and super put leaves sealed chains without
        # super blocks; re-mine them so every seal is eventually anchored
        capacities = [self.capacity] * max(self._sealed_count, 1)
        while self.store.super_count < self._sealed_count:
            ordinal = self.store.super_count
            terminal = self.store.get(alpha_index(ordinal, capacities))
            self._mine_super(terminal)

    # -- writes -------------------------------------------------------------

    def append_log(self, payload: str) -> Block:
        """Mine the payload into a data block; seals the chain when it fills up."""
        if not self._write_lock.acquire(blocking=False):
            raise LedgerLocked("another append or seal is in progress")
        try:
            if not self._open:
                self._open_chain()
            block = self._mine_internal(payload, BlockKind.DATA, self._open[-1].current_hash)
            self._open.append(block)
            if len(self._open) - 1 == self.capacity:
                self._seal()
            return block
        finally:
            self._write_lock.release()

    def seal_current(self) -> tuple[Block, Block]:
        """Seal the open chain now; it must hold exactly `capacity` data blocks."""
        if not self._write_lock.acquire(blocking=False):
            raise LedgerLocked("another append or seal is in progress")
        try:
            data_count = len(self._open) - 1 if self._open else 0
            if not self._open or data_count < self.capacity:
                raise NotFull(f"open chain holds {data_count}/{self.capacity} data blocks")
            return self._seal()
        finally:
            self._write_lock.release()

    def _open_chain(self) -> None:
        if self.store.count == 0:
            genesis = self._mine_internal("", BlockKind.AGB, ZERO_HASH)
        else:
            assert self._last_terminal is not None
            genesis = self._mine_internal("", BlockKind.RGB, self._last_terminal.current_hash)
        self._open = [genesis]

    def _mine_internal(self, data: str, kind: BlockKind, previous_hash: str) -> Block:
        started = time.perf_counter()
        block = mine_block(self.store.count, self._clock(), data, previous_hash, self.difficulty, kind)
        elapsed = time.perf_counter() - started
        self.store.put(block)
        if self._timing_sink is not None:
            self._timing_sink(kind.value, elapsed)
        return block

    def _seal(self) -> tuple[Block, Block]:
        blocks = self._open
        payload = TerminalPayload(
            aggr_hash=sha256_hex("".join(b.current_hash for b in blocks)),
            timestamp_from=blocks[0].timestamp,
            timestamp_to=blocks[-1].timestamp,
            block_index_from=blocks[0].index,
            block_index_to=blocks[-1].index,
        )
        terminal = self._mine_internal(payload.to_json(), BlockKind.TERMINAL, blocks[-1].current_hash)
        self._sealed_count += 1
        self._last_terminal = terminal
        self._open = []
        super_block = self._mine_super(terminal)
        return terminal, super_block

    def _mine_super(self, terminal: Block) -> Block:
        super_block = mine_block(
            self.store.super_count,
            self._clock(),
            terminal.to_json(),
            self._super_tip,
            self.difficulty,
            BlockKind.SUPER,
        )
        self.store.put_super(super_block)
        self._super_tip = super_block.current_hash
        if self._on_super is not None:
            self._on_super(super_block)
        return super_block

    # -- reads --------------------------------------------------------------

    @property
    def sealed_count(self) -> int:
        return self._sealed_count

    @property
    def open_data_count(self) -> int:
        return max(len(self._open) - 1, 0)

    def circled_chain(self, ordinal: int) -> CircledChain:
        """Materialize circled chain `ordinal` from the store."""
        capacities = [self.capacity] * (ordinal + 1)
        if 0 <= ordinal < self._sealed_count:
            start = beta_index(ordinal, capacities)
            stop = alpha_index(ordinal, capacities) + 1
            blocks = list(self.store.scan(start, stop))
            return CircledChain(ordinal, self.capacity, blocks, ChainState.SEALED)
        if ordinal == self._sealed_count and self._open:
            return CircledChain(ordinal, self.capacity, list(self._open), ChainState.OPEN)
        raise RangeOutOfBounds(f"no circled chain {ordinal}")

    def recompute_aggr(self, chain: CircledChain) -> str:
        """Recompute the aggregate hash of a sealed chain from stored blocks.

        Each member's proof-of-work hash is re-derived from its fields first;
        a mismatch with the stored current_hash means the stored chain no
        longer supports its own seal and raises InconsistentChain.
        """
        if chain.state is not ChainState.SEALED:
            raise NotSealed(f"circled chain {chain.ordinal} is still open")
        members = chain.blocks[:-1]  # terminal block excluded from the aggregate
        for block in members:
            content = canonical_content(block.index, block.timestamp, block.data, block.previous_hash)
            if pow_hash(block.nonce, content) != block.current_hash:
                raise InconsistentChain(f"block {block.index} does not hash to its stored value")
        return sha256_hex("".join(b.current_hash for b in members))

    def expected_kind(self, index: int) -> BlockKind:
        """Block kind implied by position, given the constant chain capacity."""
        period = self.capacity + 2
        chunk, pos = divmod(index, period)
        if pos == 0:
            return BlockKind.AGB if chunk == 0 else BlockKind.RGB
        if pos == self.capacity + 1:
            return BlockKind.TERMINAL
        return BlockKind.DATA

    @staticmethod
    def _derive_hash(block: Block) -> str:
        content = canonical_content(block.index, block.timestamp, block.data, block.previous_hash)
        return pow_hash(block.nonce, content)

    def verify_chain(self, start: int = 0, stop: int | None = None) -> VerificationReport:
        """Per-block hash-binding + proof-of-work + positional-kind report.

        Binding holds only when previous_hash matches both the predecessor's
        stored hash and the hash re-derived from its fields: tampering block m
        therefore shows up as a proof-of-work failure at m and a broken link
        at m+1.
        """
        stop = self.store.count if stop is None else stop
        if not (0 <= start <= stop <= self.store.count):
            raise RangeOutOfBounds(f"range [{start}, {stop}) outside [0, {self.store.count})")
        report = VerificationReport()
        previous: Block | None = None
        previous_derived: str | None = None
        if start > 0:
            try:
                previous = self.store.get(start - 1)
                previous_derived = self._derive_hash(previous)
            except (StoreError, BlockDecodeError):
                previous = None
        for index in range(start, stop):
            try:
                block = self.store.get(index)
            except (StoreError, BlockDecodeError) as exc:
                report.entries.append(BlockCheck(index, False, False, False, error=str(exc)))
                previous = None
                continue
            derived = self._derive_hash(block)
            if index == 0:
                binding_ok = block.previous_hash == ZERO_HASH
            elif previous is not None:
                binding_ok = block.previous_hash == previous.current_hash == previous_derived
            else:
                binding_ok = False
            report.entries.append(
                BlockCheck(
                    index=index,
                    pow_ok=derived == block.current_hash and block.current_hash.startswith(self.difficulty),
                    binding_ok=binding_ok,
                    kind_ok=block.kind is self.expected_kind(index),
                )
            )
            previous = block
            previous_derived = derived
        return report

    def verify_super_chain(self) -> VerificationReport:
        """Verify only the super chain: O(sealed chains), never touching members."""
        report = VerificationReport()
        previous: Block | None = None
        previous_derived: str | None = None
        for position in range(self.store.super_count):
            try:
                block = self.store.get_super(position)
            except (StoreError, BlockDecodeError) as exc:
                report.entries.append(BlockCheck(position, False, False, False, error=str(exc)))
                previous = None
                continue
            derived = self._derive_hash(block)
            if position == 0:
                binding_ok = block.previous_hash == ZERO_HASH
            else:
                binding_ok = (
                    previous is not None
                    and block.previous_hash == previous.current_hash == previous_derived
                )
            kind_ok = block.kind is BlockKind.SUPER
            error = None
            try:
                embedded = Block.from_json(block.data)
                if embedded.kind is not BlockKind.TERMINAL:
                    error = f"super block {position} embeds kind {embedded.kind.value}"
            except BlockDecodeError as exc:
                error = f"super block {position} data not a terminal block: {exc}"
            report.entries.append(
                BlockCheck(
                    index=position,
                    pow_ok=derived == block.current_hash and block.current_hash.startswith(self.difficulty),
                    binding_ok=binding_ok,
                    kind_ok=kind_ok,
                    error=error,
                )
            )
            previous = block
            previous_derived = derived
        return report


# ---------------------------------------------------------------------------
# full audit (CLI `verify` and the tamper tests)

@dataclass
class TerminalCheck:
    ordinal: int
    terminal_index: int
    aggr_ok: bool
    range_ok: bool
    wrap_ok: bool
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.aggr_ok and self.range_ok and self.wrap_ok and self.error is None


@dataclass
class AuditReport:
    chain: VerificationReport
    supers: VerificationReport
    terminals: list[TerminalCheck]
    unanchored_supers: list[int]

    @property
    def integrity_ok(self) -> bool:
        return self.chain.ok and self.supers.ok and all(t.ok for t in self.terminals)

    @property
    def anchoring_ok(self) -> bool:
        return not self.unanchored_supers

    @property
    def first_bad_index(self) -> int | None:
        if self.chain.first_bad_index is not None:
            return self.chain.first_bad_index
        for terminal in self.terminals:
            if not terminal.ok:
                return terminal.terminal_index
        if self.supers.first_bad_index is not None:
            return self.supers.first_bad_index
        return None


def audit(
    ledger: Ledger,
    *,
    anchored_content_hashes: set[str] | None = None,
    start: int = 0,
    stop: int | None = None,
) -> AuditReport:
    """Everything `verify` checks: chain, seals, super wrapping, anchoring coverage."""
    chain = ledger.verify_chain(start, stop)
    supers = ledger.verify_super_chain()
    capacities_base = [ledger.capacity]
    terminals: list[TerminalCheck] = []
    for ordinal in range(ledger.sealed_count):
        capacities = capacities_base * (ordinal + 1)
        t_index = alpha_index(ordinal, capacities)
        try:
            cb = ledger.circled_chain(ordinal)
            terminal = cb.terminal
            payload = TerminalPayload.from_json(terminal.data)
            aggr_ok = ledger.recompute_aggr(cb) == payload.aggr_hash
            range_ok = (
                payload.block_index_from == beta_index(ordinal, capacities)
                and payload.block_index_to == t_index - 1
            )
            if ordinal < ledger.store.super_count:
                wrap_ok = ledger.store.get_super(ordinal).data == terminal.to_json()
            else:
                wrap_ok = False
            terminals.append(TerminalCheck(ordinal, t_index, aggr_ok, range_ok, wrap_ok))
        except (LedgerError, StoreError, BlockDecodeError) as exc:
            terminals.append(TerminalCheck(ordinal, t_index, False, False, False, error=str(exc)))
    unanchored: list[int] = []
    if anchored_content_hashes is not None:
        for position in range(ledger.store.super_count):
            try:
                body = ledger.store.get_super(position).to_json()
            except (StoreError, BlockDecodeError):
                continue  # already reported as a super-chain integrity failure
            if sha256_hex(body) not in anchored_content_hashes:
                unanchored.append(position)
    return AuditReport(chain=chain, supers=supers, terminals=terminals, unanchored_supers=unanchored)
