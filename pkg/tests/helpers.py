"""Shared test machinery: a live HTTP service harness and byte-level tamper tools."""

from __future__ import annotations

import json
import struct
import threading
import time
import zlib
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import httpx
import uvicorn

from logchain.config import BackendConfig, Config, hash_api_key
from logchain.service import Engine, create_app

BASIC_KEY = "test-basic-key"
PREMIUM_KEY = "test-premium-key"

_HEADER = struct.Struct("<II")


def write_keys_file(path: Path) -> Path:
    path.write_text(
        json.dumps(
            [
                {"id": "basic", "key_hash": hash_api_key(BASIC_KEY), "plan": "BASIC"},
                {"id": "premium", "key_hash": hash_api_key(PREMIUM_KEY), "plan": "PREMIUM"},
            ]
        )
    )
    return path


def make_config(tmp_path: Path, **overrides) -> Config:
    tmp_path.mkdir(parents=True, exist_ok=True)
    backend = overrides.pop("backend", None) or BackendConfig(kind="private", seed=11)
    defaults = dict(
        store_path=str(tmp_path / "store"),
        difficulty="00",
        capacity=3,
        api_keys_file=str(write_keys_file(tmp_path / "keys.json")),
        backend=backend,
    )
    defaults.update(overrides)
    return Config(**defaults)


@dataclass
class LiveService:
    base_url: str
    engine: Engine
    config: Config

    def client(self, key: str = PREMIUM_KEY, timeout: float = 60.0) -> httpx.Client:
        return httpx.Client(
            base_url=self.base_url,
            headers={"X-API-Key": key},
            timeout=httpx.Timeout(timeout),
        )


@contextmanager
def live_service(tmp_path: Path, **overrides):
    """Run a real uvicorn server on an ephemeral port around an Engine."""
    config = overrides.pop("config", None) or make_config(tmp_path, **overrides)
    engine = Engine(config)
    app = create_app(engine)
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    try:
        deadline = time.monotonic() + 15
        while not server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("uvicorn did not start in time")
            time.sleep(0.01)
        port = server.servers[0].sockets[0].getsockname()[1]
        yield LiveService(base_url=f"http://127.0.0.1:{port}", engine=engine, config=config)
    finally:
        server.should_exit = True
        thread.join(timeout=15)
        engine.close()


# ---------------------------------------------------------------------------
# segment tampering
#
# These helpers act as the adversary: they rewrite stored records in place,
# recomputing the chained CRCs so the framing layer stays self-consistent and
# detection has to come from the hash chain, not the checksums.

def read_segment_bodies(path: Path) -> list[bytes]:
    raw = path.read_bytes()
    bodies = []
    pos = 0
    while pos < len(raw):
        length, _ = _HEADER.unpack_from(raw, pos)
        bodies.append(raw[pos + _HEADER.size : pos + _HEADER.size + length])
        pos += _HEADER.size + length
    return bodies


def write_segment_bodies(path: Path, bodies: list[bytes]) -> None:
    crc = 0
    out = bytearray()
    for body in bodies:
        crc = zlib.crc32(body, crc)
        out += _HEADER.pack(len(body), crc) + body
    path.write_bytes(bytes(out))


# byte spans of each field's value inside the canonical block JSON; string
# fields exclude their surrounding quotes
_FIELD_ORDER = ("index", "timestamp", "data", "previous_hash", "current_hash", "nonce", "kind")
_STRING_FIELDS = {"timestamp", "data", "previous_hash", "current_hash", "kind"}


def field_value_span(body: bytes, field: str) -> tuple[int, int]:
    position = _FIELD_ORDER.index(field)
    token = f'"{field}":'.encode()
    start = body.index(token) + len(token)
    if position + 1 < len(_FIELD_ORDER):
        next_token = f',"{_FIELD_ORDER[position + 1]}":'.encode()
        end = body.index(next_token, start)
    else:
        end = len(body) - 1  # trailing '}'
    if field in _STRING_FIELDS:
        start += 1
        end -= 1
    if end <= start:
        raise ValueError(f"empty value span for {field}")
    return start, end


def mutate_field_byte(body: bytes, field: str, rng) -> bytes:
    start, end = field_value_span(body, field)
    offset = rng.randrange(start, end)
    original = body[offset]
    replacement = rng.randrange(256)
    while replacement == original:
        replacement = rng.randrange(256)
    mutated = bytearray(body)
    mutated[offset] = replacement
    return bytes(mutated)
