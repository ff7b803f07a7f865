"""Block primitives: canonical serialization, SHA-256 hashing, proof-of-work mining.

The canonical content string is ``dec(index) + "|" + iso8601_micros(timestamp)
+ "|" + data + "|" + previous_hash``. The separator and field order are part of
the wire contract and must never change: an explicit separator prevents
ambiguity between e.g. (index=1, data="2...") and (index=12, data="..."). The
content string is pre-hashed once, and the nonce search hashes
``dec(nonce) + content_hash`` per iteration, so the per-iteration cost is
independent of the payload length.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Iterator

ZERO_HASH = "0" * 64

# nonce bound converting an impossible difficulty into an error instead of a hang
NONCE_CAP = 2**40

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%S.%fZ"
_TIMESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{6}Z$")
_HEX64_RE = re.compile(r"^[0-9a-f]{64}$")

# canonical JSON key order; also the schema for strict decoding
_BLOCK_KEYS = ("index", "timestamp", "data", "previous_hash", "current_hash", "nonce", "kind")


class MiningError(Exception):
    pass


class IterationCapExceeded(MiningError):
    """Nonce search ran past the iteration cap; the difficulty is misconfigured."""


class BlockDecodeError(ValueError):
    """Stored or submitted bytes are not a well-formed canonical block."""


class BlockKind(str, Enum):
    AGB = "AGB"
    RGB = "RGB"
    DATA = "DATA"
    TERMINAL = "TERMINAL"
    SUPER = "SUPER"


@dataclass(frozen=True)
class DifficultyTarget:
    """Required zero-prefix of an acceptable block hash (hex characters)."""

    prefix: str

    def __post_init__(self) -> None:
        if not (1 <= len(self.prefix) <= 8):
            raise ValueError(f"difficulty prefix length must be in [1, 8], got {len(self.prefix)}")
        if set(self.prefix) != {"0"}:
            raise ValueError(f"difficulty prefix must be all '0' characters, got {self.prefix!r}")


# ---------------------------------------------------------------------------
# hash-call instrumentation
#
# Every SHA-256 this package computes goes through sha256_hex so verification
# cost can be measured (the super-chain isolation property is stated in hash
# calls, not wall time). The mining loop hashes inline for speed and reports
# its iteration count in bulk.

class HashCallCounter:
    def __init__(self) -> None:
        self.calls = 0


_active_counters: list[HashCallCounter] = []
_counter_lock = threading.Lock()


@contextmanager
def count_hash_calls() -> Iterator[HashCallCounter]:
    counter = HashCallCounter()
    with _counter_lock:
        _active_counters.append(counter)
    try:
        yield counter
    finally:
        with _counter_lock:
            _active_counters.remove(counter)


def _bump_counters(n: int) -> None:
    if _active_counters:
        with _counter_lock:
            for counter in _active_counters:
                counter.calls += n


def sha256_hex(payload: str | bytes) -> str:
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    _bump_counters(1)
    return hashlib.sha256(payload).hexdigest()


# ---------------------------------------------------------------------------
# timestamps

def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    """Render a UTC instant at fixed microsecond precision with a Z suffix."""
    if ts.tzinfo is None:
        raise ValueError("naive datetimes are ambiguous; timestamps must be timezone-aware")
    return ts.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(raw: str) -> datetime:
    # strptime alone would accept 1-5 fractional digits; the wire format is exactly 6
    if not _TIMESTAMP_RE.match(raw):
        raise BlockDecodeError(f"bad timestamp {raw!r}, want YYYY-MM-DDTHH:MM:SS.ssssssZ")
    return datetime.strptime(raw, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)


def is_hex64(value: str) -> bool:
    return isinstance(value, str) and bool(_HEX64_RE.match(value))


# ---------------------------------------------------------------------------
# blocks

@dataclass(frozen=True)
class Block:
    """The universal ledger unit; every level of the hierarchy uses the same shape."""

    index: int
    timestamp: datetime
    data: str
    previous_hash: str
    current_hash: str
    nonce: int
    kind: BlockKind

    def validate(self) -> None:
        if self.index < 0:
            raise BlockDecodeError(f"negative index {self.index}")
        if self.nonce < 1:
            raise BlockDecodeError(f"nonce must be positive, got {self.nonce}")
        for field in ("previous_hash", "current_hash"):
            if not is_hex64(getattr(self, field)):
                raise BlockDecodeError(f"{field} is not 64 lowercase hex chars")

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "timestamp": format_timestamp(self.timestamp),
            "data": self.data,
            "previous_hash": self.previous_hash,
            "current_hash": self.current_hash,
            "nonce": self.nonce,
            "kind": self.kind.value,
        }

    def to_json(self) -> str:
        """Canonical encoding used on disk and over HTTP (fixed key order, compact)."""
        return json.dumps(self.to_dict(), separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_dict(cls, obj: object) -> "Block":
        if not isinstance(obj, dict) or set(obj) != set(_BLOCK_KEYS):
            raise BlockDecodeError("block object must have exactly the canonical keys")
        if not isinstance(obj["index"], int) or isinstance(obj["index"], bool):
            raise BlockDecodeError("index must be an integer")
        if not isinstance(obj["nonce"], int) or isinstance(obj["nonce"], bool):
            raise BlockDecodeError("nonce must be an integer")
        for key in ("timestamp", "data", "previous_hash", "current_hash", "kind"):
            if not isinstance(obj[key], str):
                raise BlockDecodeError(f"{key} must be a string")
        try:
            kind = BlockKind(obj["kind"])
        except ValueError:
            raise BlockDecodeError(f"unknown block kind {obj['kind']!r}") from None
        block = cls(
            index=obj["index"],
            timestamp=parse_timestamp(obj["timestamp"]),
            data=obj["data"],
            previous_hash=obj["previous_hash"],
            current_hash=obj["current_hash"],
            nonce=obj["nonce"],
            kind=kind,
        )
        block.validate()
        return block

    @classmethod
    def from_json(cls, raw: str | bytes) -> "Block":
        try:
            obj = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise BlockDecodeError(f"invalid block JSON: {exc}") from exc
        return cls.from_dict(obj)


# ---------------------------------------------------------------------------
# hashing and mining

def canonical_content(index: int, timestamp: datetime, data: str, previous_hash: str) -> str:
    """Pre-hash of the canonical content string; feeds every nonce iteration."""
    content = f"{index}|{format_timestamp(timestamp)}|{data}|{previous_hash}"
    return sha256_hex(content)


def pow_hash(nonce: int, content_hash: str) -> str:
    return sha256_hex(f"{nonce}{content_hash}")


def mine(
    index: int,
    timestamp: datetime,
    data: str,
    previous_hash: str,
    difficulty: str,
    *,
    iteration_cap: int = NONCE_CAP,
) -> tuple[str, int]:
    """Search nonces from 1 upward until the block hash carries the difficulty prefix.

    Deterministic: the returned nonce is the smallest positive integer whose
    hash matches, so re-mining identical inputs reproduces the identical pair.
    Raises IterationCapExceeded past ``iteration_cap`` attempts.
    """
    DifficultyTarget(difficulty)
    content = canonical_content(index, timestamp, data, previous_hash)
    content_bytes = content.encode("ascii")
    digest = hashlib.sha256
    nonce = 0
    while True:
        nonce += 1
        if nonce > iteration_cap:
            raise IterationCapExceeded(
                f"no hash with prefix {difficulty!r} within {iteration_cap} nonces"
            )
        current_hash = digest(str(nonce).encode("ascii") + content_bytes).hexdigest()
        if current_hash.startswith(difficulty):
            _bump_counters(nonce)
            return current_hash, nonce


def verify_pow(block: Block, difficulty: str) -> bool:
    """True iff the block's hash is recomputable from its fields and meets the prefix.

    Malformed fields yield False, never an exception.
    """
    try:
        DifficultyTarget(difficulty)
        block.validate()
    except (ValueError, BlockDecodeError):
        return False
    if not block.current_hash.startswith(difficulty):
        return False
    content = canonical_content(block.index, block.timestamp, block.data, block.previous_hash)
    return pow_hash(block.nonce, content) == block.current_hash


def mine_block(
    index: int,
    timestamp: datetime,
    data: str,
    previous_hash: str,
    difficulty: str,
    kind: BlockKind,
) -> Block:
    current_hash, nonce = mine(index, timestamp, data, previous_hash, difficulty)
    return Block(
        index=index,
        timestamp=timestamp,
        data=data,
        previous_hash=previous_hash,
        current_hash=current_hash,
        nonce=nonce,
        kind=kind,
    )
