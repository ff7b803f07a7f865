"""Durable append-only persistence for blocks and anchoring receipts.

Blocks live in segment files of length-prefixed, checksummed records:

    [u32 len][u32 crc32 of body][body = canonical Block JSON bytes]

both u32 little-endian. Each record's CRC32 is seeded with the previous
record's stored CRC, so the checksums chain: an in-place rewrite of record k
invalidates every record after k unless the whole suffix is rewritten too.
Writes are fsynced before put() returns; readers only ever see fsynced
records. On open the segment is scanned front to back; a torn tail (short
header or short body from a crash mid-append) is truncated away, while a
checksum mismatch on a complete record is surfaced as corruption.

The lookup indexes (payload key, current_hash, global index -> offset) are
in-memory caches rebuilt on every open, never authoritative. Reads always go
back to the file so that on-disk tampering is observable by a long-lived
process.

The lower-level ledger (genesis/data/terminal blocks) and the super chain
keep separate segments because each maintains its own dense 0-based index
space. Receipts are JSON lines, fsynced per append; an unterminated last
line is dropped on load.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Iterator

from .core import Block, BlockDecodeError, BlockKind, sha256_hex

_HEADER = struct.Struct("<II")

BLOCKS_SEGMENT = "blocks.seg"
SUPER_SEGMENT = "super.seg"
RECEIPTS_FILE = "receipts.jsonl"


class StoreError(Exception):
    pass


class IndexGap(StoreError):
    """put() was handed a block whose index is not exactly last + 1."""


class NotFound(StoreError):
    pass


class CorruptSegment(StoreError):
    """A complete record failed its checksum or decoded to the wrong shape."""


class SegmentFile:
    """One append-only segment of checksummed records. Single writer, many readers."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
        self._offsets: list[tuple[int, int]] = []  # (offset, body_length)
        self._size = 0
        self._last_crc = 0
        self._recover()

    def _recover(self) -> None:
        size = os.fstat(self._fd).st_size
        pos = 0
        crc = 0
        while pos < size:
            header = os.pread(self._fd, _HEADER.size, pos)
            if len(header) < _HEADER.size:
                break  # torn header
            length, stored_crc = _HEADER.unpack(header)
            body = os.pread(self._fd, length, pos + _HEADER.size)
            if len(body) < length:
                break  # torn body
            if zlib.crc32(body, crc) != stored_crc:
                raise CorruptSegment(
                    f"{self.path}: checksum mismatch in record {len(self._offsets)}"
                )
            self._offsets.append((pos, length))
            crc = stored_crc
            pos += _HEADER.size + length
        if pos < size:
            os.ftruncate(self._fd, pos)
            os.fsync(self._fd)
        self._size = pos
        self._last_crc = crc

    def __len__(self) -> int:
        return len(self._offsets)

    def append(self, body: bytes) -> int:
        crc = zlib.crc32(body, self._last_crc)
        record = _HEADER.pack(len(body), crc) + body
        os.pwrite(self._fd, record, self._size)
        os.fsync(self._fd)
        self._offsets.append((self._size, len(body)))
        self._size += len(record)
        self._last_crc = crc
        return len(self._offsets) - 1

    def read(self, position: int) -> bytes:
        if not 0 <= position < len(self._offsets):
            raise NotFound(f"{self.path}: no record {position}")
        offset, length = self._offsets[position]
        header = os.pread(self._fd, _HEADER.size, offset)
        stored_length, stored_crc = _HEADER.unpack(header)
        body = os.pread(self._fd, stored_length, offset + _HEADER.size)
        if stored_length != length or len(body) < stored_length:
            raise CorruptSegment(f"{self.path}: record {position} reframed on disk")
        # chain seed comes from the previous record as it currently is on disk
        if position == 0:
            seed = 0
        else:
            prev_offset, _ = self._offsets[position - 1]
            seed = _HEADER.unpack(os.pread(self._fd, _HEADER.size, prev_offset))[1]
        if zlib.crc32(body, seed) != stored_crc:
            raise CorruptSegment(f"{self.path}: checksum mismatch in record {position}")
        return body

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1


class BlockStore:
    """Block persistence with payload/hash lookup indexes rebuilt on open."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._blocks = SegmentFile(self.root / BLOCKS_SEGMENT)
        self._super = SegmentFile(self.root / SUPER_SEGMENT)
        self._payload_index: dict[str, list[int]] = {}
        self._hash_index: dict[str, int] = {}
        self._super_by_tb_hash: dict[str, int] = {}
        self._rebuild_indexes()

    def _rebuild_indexes(self) -> None:
        for position in range(len(self._blocks)):
            block = self._decode(self._blocks.read(position), position)
            self._index_block(block)
        for position in range(len(self._super)):
            block = self._decode_super(self._super.read(position), position)
            self._index_super(block)

    @staticmethod
    def _decode(body: bytes, position: int) -> Block:
        try:
            block = Block.from_json(body)
        except BlockDecodeError as exc:
            raise CorruptSegment(f"record {position}: {exc}") from exc
        if block.index != position:
            raise CorruptSegment(f"record {position} carries index {block.index}")
        return block

    @classmethod
    def _decode_super(cls, body: bytes, position: int) -> Block:
        block = cls._decode(body, position)
        if block.kind is not BlockKind.SUPER:
            raise CorruptSegment(f"super record {position} has kind {block.kind.value}")
        return block

    def _index_block(self, block: Block) -> None:
        self._payload_index.setdefault(sha256_hex(block.data), []).append(block.index)
        self._hash_index[block.current_hash] = block.index

    def _index_super(self, block: Block) -> None:
        try:
            embedded = Block.from_json(block.data)
        except BlockDecodeError:
            return  # unverifiable wrapping is reported by verification, not here
        self._super_by_tb_hash[embedded.current_hash] = block.index

    # -- lower-level segment ------------------------------------------------

    @property
    def count(self) -> int:
        return len(self._blocks)

    def put(self, block: Block) -> int:
        if block.index != len(self._blocks):
            raise IndexGap(f"expected index {len(self._blocks)}, got {block.index}")
        self._blocks.append(block.to_json().encode("utf-8"))
        self._index_block(block)
        return block.index

    def get(self, global_index: int) -> Block:
        return self._decode(self._blocks.read(global_index), global_index)

    def scan(self, start: int = 0, stop: int | None = None) -> Iterator[Block]:
        stop = len(self._blocks) if stop is None else stop
        if not (0 <= start <= stop <= len(self._blocks)):
            raise NotFound(f"scan range [{start}, {stop}) outside [0, {len(self._blocks)})")
        for position in range(start, stop):
            yield self.get(position)

    def find_by_payload(self, payload_key: str) -> list[int]:
        """Indexes of all blocks whose data field hashes to payload_key, ascending."""
        return list(self._payload_index.get(payload_key, ()))

    def find_by_hash(self, current_hash: str) -> int | None:
        return self._hash_index.get(current_hash)

    # -- super-chain segment ------------------------------------------------

    @property
    def super_count(self) -> int:
        return len(self._super)

    def put_super(self, block: Block) -> int:
        if block.kind is not BlockKind.SUPER:
            raise StoreError(f"put_super got kind {block.kind.value}")
        if block.index != len(self._super):
            raise IndexGap(f"expected super index {len(self._super)}, got {block.index}")
        self._super.append(block.to_json().encode("utf-8"))
        self._index_super(block)
        return block.index

    def get_super(self, position: int) -> Block:
        return self._decode_super(self._super.read(position), position)

    def scan_super(self) -> Iterator[Block]:
        for position in range(len(self._super)):
            yield self.get_super(position)

    def find_super_by_tb_hash(self, tb_current_hash: str) -> int | None:
        return self._super_by_tb_hash.get(tb_current_hash)

    def close(self) -> None:
        self._blocks.close()
        self._super.close()


class ReceiptLog:
    """Anchor receipts as fsynced JSON lines; doubles as the export format."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._records: list[dict] = []
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT, 0o644)
        self._size = self._recover()

    def _recover(self) -> int:
        raw = os.pread(self._fd, os.fstat(self._fd).st_size, 0)
        keep = raw.rfind(b"\n") + 1  # drop an unterminated tail line
        if keep < len(raw):
            os.ftruncate(self._fd, keep)
            os.fsync(self._fd)
        for line in raw[:keep].splitlines():
            if line:
                self._records.append(json.loads(line))
        return keep

    def append(self, record: dict) -> None:
        line = json.dumps(record, separators=(",", ":"), ensure_ascii=False) + "\n"
        data = line.encode("utf-8")
        os.pwrite(self._fd, data, self._size)
        os.fsync(self._fd)
        self._size += len(data)
        self._records.append(record)

    def all(self) -> list[dict]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1
