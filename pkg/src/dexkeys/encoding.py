"""Wire helpers: hex integers, canonical JSON, length-prefixed integer lists."""

from __future__ import annotations

import json
import struct
from typing import Any, Iterable


def int_to_hex(value: int) -> str:
    """Lowercase big-endian hex without leading zeros (``0`` encodes as ``"0"``)."""
    if value < 0:
        raise ValueError("negative integers are not encodable")
    return format(value, "x")


def hex_to_int(text: str) -> int:
    if not isinstance(text, str) or not text:
        raise ValueError("expected a non-empty hex string")
    if text != text.lower() or (len(text) > 1 and text[0] == "0"):
        raise ValueError(f"non-canonical hex integer: {text[:16]!r}")
    return int(text, 16)


def int_to_bytes(value: int, length: int | None = None) -> bytes:
    if length is None:
        length = max(1, (value.bit_length() + 7) // 8)
    return value.to_bytes(length, "big")


def byte_len(value: int) -> int:
    return (value.bit_length() + 7) // 8


def pack_ints(values: Iterable[int]) -> bytes:
    """u32 count, then for each integer a u32 byte length and big-endian bytes."""
    values = list(values)
    out = [struct.pack(">I", len(values))]
    for v in values:
        raw = int_to_bytes(v)
        out.append(struct.pack(">I", len(raw)))
        out.append(raw)
    return b"".join(out)


def unpack_ints(data: bytes) -> list[int]:
    if len(data) < 4:
        raise ValueError("truncated integer sequence")
    (count,) = struct.unpack_from(">I", data, 0)
    pos = 4
    values = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise ValueError("truncated integer sequence")
        (size,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if size == 0 or pos + size > len(data):
            raise ValueError("bad integer length")
        chunk = data[pos:pos + size]
        if size > 1 and chunk[0] == 0:
            raise ValueError("non-canonical integer encoding")
        values.append(int.from_bytes(chunk, "big"))
        pos += size
    if pos != len(data):
        raise ValueError("trailing bytes after integer sequence")
    return values


def canonical_json(obj: Any) -> bytes:
    """Sorted keys, no insignificant whitespace, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()
