"""HTTP API: log submission and verification with API-key authentication.

All writes funnel through a bounded ingestion queue drained by one writer
thread; a submit handler parks on a future until its block is mined, so
responses always carry real block coordinates. When the queue is full the
service answers 429 instead of dropping work silently. Verification endpoints
read committed state only and never mutate the ledger.

Every response is either {"status": "success", ...} or
{"status": "failed", "error": {"code", "description"}}. One JSON access-log
line is emitted per request on the `logchain.access` logger.
"""

from __future__ import annotations

import asyncio
import json
import logging
import queue
import re
import threading
import time
from concurrent.futures import Future
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .anchor import AnchorBackend, AnchorReceipt, AnchorRequest, make_backend
from .config import ApiKey, Config, hash_api_key
from .core import Block, BlockDecodeError, BlockKind, sha256_hex, verify_pow
from .ledger import (
    InconsistentChain,
    Ledger,
    LedgerError,
    TerminalPayload,
    beta_index,
)
from .store import RECEIPTS_FILE, BlockStore, ReceiptLog, StoreError

META_FILE = "meta.json"
_DIGEST_RE = re.compile(r"^[0-9a-f]{64}$")

access_log = logging.getLogger("logchain.access")


class QueueFull(Exception):
    pass


class IntegrityError(Exception):
    """Stored data no longer supports the index that found it."""


def write_store_meta(store_path: str | Path, difficulty: str, capacity: int) -> None:
    meta = {"difficulty": difficulty, "capacity": capacity}
    path = Path(store_path) / META_FILE
    if path.exists():
        existing = json.loads(path.read_text())
        if existing != meta:
            raise ValueError(
                f"store at {store_path} was created with {existing}, refusing {meta}"
            )
        return
    path.write_text(json.dumps(meta, indent=2) + "\n")


def read_store_meta(store_path: str | Path) -> tuple[str, int]:
    path = Path(store_path) / META_FILE
    meta = json.loads(path.read_text())
    return meta["difficulty"], int(meta["capacity"])


class Engine:
    """Store + ledger + anchoring backend behind a single writer thread."""

    def __init__(self, config: Config):
        self.config = config
        store_dir = Path(config.store_path)
        store_dir.mkdir(parents=True, exist_ok=True)
        write_store_meta(store_dir, config.difficulty, config.capacity)
        self.store = BlockStore(store_dir)
        self.receipts = ReceiptLog(store_dir / RECEIPTS_FILE)
        self._timings: list[dict] = []
        self._timing_lock = threading.Lock()
        self.backend: AnchorBackend = make_backend(
            config.backend.kind,
            self.receipts,
            seed=config.backend.seed,
            tiers=config.backend.tiers,
            allowlist=config.backend.allowlist,
            time_scale=config.backend.time_scale,
            on_receipt=self._record_receipt,
        )
        self.ledger = Ledger(
            self.store,
            config.difficulty,
            config.capacity,
            on_super=self._anchor_super,
            timing_sink=self._record_timing,
        )
        self._queue: queue.Queue = queue.Queue(maxsize=config.queue_depth)
        self._writer = threading.Thread(target=self._write_loop, name="ledger-writer", daemon=True)
        self._writer.start()

    # -- writer ---------------------------------------------------------------

    def submit_payload(self, data: str) -> "Future[Block]":
        future: Future[Block] = Future()
        try:
            self._queue.put_nowait((data, future))
        except queue.Full:
            raise QueueFull(f"ingestion queue is at capacity ({self.config.queue_depth})")
        return future

    def _write_loop(self) -> None:
        while True:
            job = self._queue.get()
            if job is None:
                self._queue.task_done()
                return
            data, future = job
            try:
                future.set_result(self.ledger.append_log(data))
            except Exception as exc:
                future.set_exception(exc)
            finally:
                self._queue.task_done()

    def _anchor_super(self, super_block: Block) -> None:
        self.backend.submit(
            AnchorRequest(
                super_block=super_block,
                sender=self.config.backend.sender,
                gas_price=self.config.backend.gas_price,
            )
        )

    # -- timing records ---------------------------------------------------------

    def _record_timing(self, kind: str, seconds: float) -> None:
        with self._timing_lock:
            self._timings.append({"kind": kind, "seconds": seconds})

    def _record_receipt(self, receipt: AnchorReceipt) -> None:
        # a super block's timing is its anchoring latency, not its mining time
        self._record_timing(BlockKind.SUPER.value, receipt.latency)

    def timings(self) -> list[dict]:
        with self._timing_lock:
            return list(self._timings)

    def clear_timings(self) -> None:
        with self._timing_lock:
            self._timings.clear()

    # -- reads ------------------------------------------------------------------

    def find_payload_matches(self, payload_key: str) -> list[int]:
        matches = []
        for index in self.store.find_by_payload(payload_key):
            block = self.store.get(index)
            if sha256_hex(block.data) != payload_key:
                raise IntegrityError(f"block {index} no longer hashes to its lookup key")
            matches.append(index)
        return matches

    def verify_tb_detail(self, submitted: Block) -> dict | None:
        """None when no terminal block with the submitted hash exists."""
        index = self.store.find_by_hash(submitted.current_hash)
        if index is None:
            return None
        try:
            stored = self.store.get(index)
        except (StoreError, BlockDecodeError):
            return None
        if stored.kind is not BlockKind.TERMINAL or stored.current_hash != submitted.current_hash:
            return None
        valid = stored.to_json() == submitted.to_json() and verify_pow(stored, self.config.difficulty)
        aggr_match = self._aggr_match(stored, submitted)
        anchored = False
        super_index = self.store.find_super_by_tb_hash(stored.current_hash)
        if super_index is not None:
            try:
                anchored = self.backend.verify_anchor(self.store.get_super(super_index))
            except (StoreError, BlockDecodeError):
                anchored = False
        return {"valid": valid, "aggr_match": aggr_match, "anchored": anchored}

    def _aggr_match(self, stored: Block, submitted: Block) -> bool:
        """Full circled-chain check against the submitted seal: member proofs of
        work, internal hash binding, range fields, aggregate hash, terminal proof."""
        capacity = self.config.capacity
        ordinal, remainder = divmod(stored.index - capacity - 1, capacity + 2)
        if remainder or ordinal < 0:
            return False
        try:
            payload = TerminalPayload.from_json(submitted.data)
            chain = self.ledger.circled_chain(ordinal)
            aggr = self.ledger.recompute_aggr(chain)
            blocks = chain.blocks
            for previous, current in zip(blocks, blocks[1:]):
                if current.previous_hash != previous.current_hash:
                    return False
            return (
                aggr == payload.aggr_hash
                and payload.block_index_from == beta_index(ordinal, [capacity] * (ordinal + 1))
                and payload.block_index_to == stored.index - 1
                and verify_pow(blocks[-1], self.config.difficulty)
            )
        except (LedgerError, StoreError, BlockDecodeError, InconsistentChain):
            return False

    def stats(self) -> dict:
        return {
            "blocks": self.store.count,
            "super_blocks": self.store.super_count,
            "sealed_chains": self.ledger.sealed_count,
            "open_data_blocks": self.ledger.open_data_count,
            "receipts": self.backend.receipt_count,
            "pending_anchors": self.backend.pending_count,
            "ingestion_backlog": self._queue.qsize(),
        }

    def drain(self) -> None:
        """Wait for the ingestion queue and the anchoring queue to empty."""
        self._queue.join()
        self.backend.drain()

    def close(self) -> None:
        self._queue.put(None)
        self._writer.join(timeout=30)
        self.backend.close()
        self.store.close()
        self.receipts.close()


# ---------------------------------------------------------------------------
# HTTP layer

def _fail(status_code: int, code: str, description: str) -> JSONResponse:
    return JSONResponse(
        {"status": "failed", "error": {"code": code, "description": description}},
        status_code=status_code,
    )


class _RequestRejected(Exception):
    def __init__(self, response: JSONResponse):
        self.response = response


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="logchain", version="0.1.0", docs_url=None, redoc_url=None)
    api_keys = engine.config.load_api_keys()

    def authenticate(request: Request) -> ApiKey:
        presented = request.headers.get("x-api-key")
        if presented is None:
            raise _RequestRejected(_fail(401, "unauthenticated", "missing X-API-Key header"))
        key = api_keys.get(hash_api_key(presented))
        if key is None:
            raise _RequestRejected(_fail(401, "unauthenticated", "unknown API key"))
        return key

    async def read_json(request: Request) -> dict:
        body = await request.body()
        if len(body) > engine.config.max_body_bytes + 4096:  # payload limit plus envelope slack
            raise _RequestRejected(_fail(413, "oversize", "request body too large"))
        try:
            obj = json.loads(body)
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise _RequestRejected(_fail(422, "invalid_request", "body must be a JSON object"))
        if not isinstance(obj, dict):
            raise _RequestRejected(_fail(422, "invalid_request", "body must be a JSON object"))
        return obj

    def required_payload(obj: dict) -> str:
        data = obj.get("data")
        if not isinstance(data, str) or not data:
            raise _RequestRejected(_fail(422, "empty_payload", "field 'data' must be a non-empty string"))
        if len(data.encode("utf-8")) > engine.config.max_body_bytes:
            raise _RequestRejected(_fail(413, "oversize", "field 'data' exceeds 1 MiB"))
        return data

    def required_digest(obj: dict) -> str:
        digest = obj.get("digest")
        if not isinstance(digest, str) or not _DIGEST_RE.match(digest):
            raise _RequestRejected(
                _fail(422, "malformed_digest", "field 'digest' must be 64 lowercase hex characters")
            )
        return digest

    @app.exception_handler(_RequestRejected)
    async def rejected_handler(request: Request, exc: _RequestRejected):
        return exc.response

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        started = time.perf_counter()
        response = await call_next(request)
        access_log.info(
            json.dumps(
                {
                    "method": request.method,
                    "path": request.url.path,
                    "status": response.status_code,
                    "duration_ms": round((time.perf_counter() - started) * 1000, 3),
                },
                separators=(",", ":"),
            )
        )
        return response

    async def mine_and_respond(data: str) -> JSONResponse:
        try:
            future = engine.submit_payload(data)
        except QueueFull as exc:
            return _fail(429, "queue_full", str(exc))
        try:
            block = await asyncio.wrap_future(future)
        except (StoreError, LedgerError) as exc:
            return _fail(500, "internal_error", str(exc))
        return JSONResponse(
            {
                "status": "success",
                "timestamp": block.to_dict()["timestamp"],
                "block_index": block.index,
                "current_hash": block.current_hash,
            }
        )

    def match_response(payload_key: str) -> JSONResponse:
        try:
            matches = engine.find_payload_matches(payload_key)
        except (IntegrityError, StoreError, BlockDecodeError) as exc:
            return _fail(500, "integrity_error", str(exc))
        result: dict = {"status": "success", "matches": matches}
        if not matches:
            result["message"] = "no match has been found"
        return JSONResponse(result)

    @app.post("/submit_raw")
    async def submit_raw(request: Request):
        authenticate(request)
        data = required_payload(await read_json(request))
        return await mine_and_respond(data)

    @app.post("/submit_digest")
    async def submit_digest(request: Request):
        authenticate(request)
        digest = required_digest(await read_json(request))
        return await mine_and_respond(digest)

    @app.post("/verify_raw")
    async def verify_raw(request: Request):
        authenticate(request)
        data = required_payload(await read_json(request))
        return match_response(sha256_hex(data))

    @app.post("/verify_digest")
    async def verify_digest(request: Request):
        authenticate(request)
        digest = required_digest(await read_json(request))
        return match_response(sha256_hex(digest))

    @app.post("/verify_tb")
    async def verify_tb(request: Request):
        key = authenticate(request)
        obj = await read_json(request)
        try:
            submitted = Block.from_dict(obj.get("terminal_block"))
        except BlockDecodeError as exc:
            return _fail(422, "invalid_request", f"terminal_block: {exc}")
        if submitted.kind is not BlockKind.TERMINAL:
            return _fail(422, "invalid_request", "terminal_block.kind must be TERMINAL")
        detail = engine.verify_tb_detail(submitted)
        if detail is None:
            return _fail(404, "tb_not_found", "no terminal block with that hash")
        if key.plan != "PREMIUM":
            detail["anchored"] = None  # anchor receipts are a premium feature
        return JSONResponse({"status": "success", **detail})

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.get("/stats")
    async def stats(request: Request):
        authenticate(request)
        return JSONResponse({"status": "success", **engine.stats()})

    @app.get("/timings")
    async def get_timings(request: Request):
        authenticate(request)
        return JSONResponse({"status": "success", "records": engine.timings()})

    @app.delete("/timings")
    async def delete_timings(request: Request):
        authenticate(request)
        engine.clear_timings()
        return JSONResponse({"status": "success"})

    return app


def serve(engine: Engine, host: str = "127.0.0.1", port: int | None = None) -> None:
    """Run the service in the foreground (the `logchain serve` entry point)."""
    import uvicorn

    uvicorn.run(
        create_app(engine),
        host=host,
        port=engine.config.port if port is None else port,
        log_level="warning",
    )
