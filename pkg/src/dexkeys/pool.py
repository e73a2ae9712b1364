"""Prepared-point pools with single-use consumption.

Entries are keyed by ``(key_id, R)`` where ``R`` is the encoded nonce point;
the value is opaque secret material (a DH scalar, plus Paillier randomness
on the ECDSA client side).  Removal is persisted before the secret is handed
out, so a crash can lose an entry but never resurrect one.

The file backend is an append-only JSON-lines log::

    {"op": "add", "key_id": ..., "entries": [{"R": hex, "secret": b64}, ...]}
    {"op": "consume", "key_id": ..., "R": hex}

A batch is one line, so a torn write drops the whole batch.  Secrets are
sealed with AES-GCM under a local key; the log is compacted on load.
"""

from __future__ import annotations

import base64
import json
import os
import threading
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable

from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import PoolExhausted, ReplayError, UsageError

DEFAULT_BATCH_SIZE = 100
DEFAULT_LOW_WATER = 20


class SecretBox:
    """AES-256-GCM sealing of small secrets, bound to associated data."""

    def __init__(self, key: bytes) -> None:
        if len(key) != 32:
            raise ValueError("storage key must be 32 bytes")
        self._aead = AESGCM(key)

    def seal(self, data: bytes, aad: bytes) -> str:
        nonce = os.urandom(12)
        return base64.b64encode(nonce + self._aead.encrypt(nonce, data, aad)).decode()

    def open(self, blob: str, aad: bytes) -> bytes:
        raw = base64.b64decode(blob)
        return self._aead.decrypt(raw[:12], raw[12:], aad)


def _aad(key_id: str, R: bytes) -> bytes:
    return key_id.encode() + b"\x00" + R


class PointPool:
    def __init__(self, path: str | os.PathLike | None = None, storage_key: bytes | None = None, *,
                 batch_size: int = DEFAULT_BATCH_SIZE, low_water: int = DEFAULT_LOW_WATER,
                 on_low_water: Callable[[str, int], None] | None = None) -> None:
        if path is not None and storage_key is None:
            raise ValueError("a file-backed pool needs a storage key")
        self.batch_size = batch_size
        self.low_water = low_water
        self.on_low_water = on_low_water
        self._lock = threading.Lock()
        self._live: dict[str, OrderedDict[bytes, bytes]] = {}
        self._consumed: dict[str, set[bytes]] = {}
        self._path = Path(path) if path is not None else None
        self._box = SecretBox(storage_key) if storage_key is not None else None
        self._fh = None
        if self._path is not None:
            self._load()

    # -------------------------------------------------------- persistence

    def _load(self) -> None:
        if self._path.exists():
            with open(self._path, "rb") as fh:
                for line in fh:
                    try:
                        rec = json.loads(line)
                    except ValueError:
                        break  # torn tail write
                    self._replay(rec)
        self._compact()
        self._fh = open(self._path, "ab")

    def _replay(self, rec: dict) -> None:
        key_id = rec["key_id"]
        live = self._live.setdefault(key_id, OrderedDict())
        consumed = self._consumed.setdefault(key_id, set())
        if rec["op"] == "add":
            for item in rec["entries"]:
                R = bytes.fromhex(item["R"])
                if R not in consumed:
                    live[R] = self._box.open(item["secret"], _aad(key_id, R))
        elif rec["op"] == "consume":
            R = bytes.fromhex(rec["R"])
            live.pop(R, None)
            consumed.add(R)

    def _compact(self) -> None:
        tmp = self._path.with_name(self._path.name + ".tmp")
        with open(tmp, "wb") as fh:
            for key_id in sorted(set(self._live) | set(self._consumed)):
                for R in sorted(self._consumed.get(key_id, ())):
                    fh.write(self._line({"op": "consume", "key_id": key_id, "R": R.hex()}))
                live = self._live.get(key_id)
                if live:
                    fh.write(self._add_line(key_id, live.items()))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self._path)

    @staticmethod
    def _line(rec: dict) -> bytes:
        return json.dumps(rec, separators=(",", ":")).encode() + b"\n"

    def _add_line(self, key_id: str, items: Iterable[tuple[bytes, bytes]]) -> bytes:
        entries = [{"R": R.hex(), "secret": self._box.seal(secret, _aad(key_id, R))} for R, secret in items]
        return self._line({"op": "add", "key_id": key_id, "entries": entries})

    def _append(self, data: bytes) -> None:
        if self._fh is None:
            return
        self._fh.write(data)
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    # ------------------------------------------------------------ queries

    def size(self, key_id: str | None = None) -> int:
        with self._lock:
            if key_id is None:
                return sum(len(v) for v in self._live.values())
            return len(self._live.get(key_id, ()))

    def __contains__(self, item: tuple[str, bytes]) -> bool:
        key_id, R = item
        with self._lock:
            return R in self._live.get(key_id, ())

    def is_consumed(self, key_id: str, R: bytes) -> bool:
        with self._lock:
            return R in self._consumed.get(key_id, ())

    def needs_refill(self, key_id: str) -> bool:
        return self.size(key_id) < self.low_water

    def points(self, key_id: str) -> list[bytes]:
        with self._lock:
            return list(self._live.get(key_id, ()))

    # ---------------------------------------------------------- mutation

    def add_batch(self, key_id: str, items: list[tuple[bytes, bytes]]) -> None:
        """Add all entries or none."""
        if not items:
            raise ValueError("empty batch")
        with self._lock:
            live = self._live.setdefault(key_id, OrderedDict())
            consumed = self._consumed.setdefault(key_id, set())
            seen = set()
            for R, _ in items:
                if R in live or R in consumed or R in seen:
                    raise UsageError(f"duplicate or previously consumed point {R.hex()[:16]}")
                seen.add(R)
            if self._fh is not None:
                self._append(self._add_line(key_id, items))
            for R, secret in items:
                live[R] = secret

    def take(self, key_id: str) -> tuple[bytes, bytes]:
        """Remove and return the oldest entry for ``key_id``."""
        with self._lock:
            live = self._live.get(key_id)
            if not live:
                raise PoolExhausted(f"no prepared points for {key_id}")
            R, secret = live.popitem(last=False)
            self._retire(key_id, R)
            remaining = len(live)
        self._signal(key_id, remaining)
        return R, secret

    def consume(self, key_id: str, R: bytes) -> bytes:
        """Remove and return the entry for ``R``; a second call for the same point fails."""
        with self._lock:
            live = self._live.get(key_id)
            if not live or R not in live:
                raise ReplayError("unknown or already consumed nonce point")
            secret = live.pop(R)
            self._retire(key_id, R)
            remaining = len(live)
        self._signal(key_id, remaining)
        return secret

    def _retire(self, key_id: str, R: bytes) -> None:
        self._consumed.setdefault(key_id, set()).add(R)
        self._append(self._line({"op": "consume", "key_id": key_id, "R": R.hex()}))

    def _signal(self, key_id: str, remaining: int) -> None:
        if remaining < self.low_water and self.on_low_water is not None:
            self.on_low_water(key_id, remaining)


class ClientPool(PointPool):
    """Client side: entries hold the DH scalar and, for ECDSA, Paillier randomness."""


class ServerPool(PointPool):
    """Server side: entries hold the exchange's DH scalar, scoped per API key."""
