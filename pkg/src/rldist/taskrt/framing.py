"""Self-describing binary framing for stored objects and checkpoint files.

Layout: 8-byte little-endian payload length, 4-byte type tag, payload.
The tag selects the payload encoding; everything in the runtime that
persists bytes (object store, batch dumps, weight checkpoints) goes
through this framing so serialization counts are well-defined.
"""

from __future__ import annotations

import io
import pickle
import struct

import numpy as np

from .errors import CorruptPayload

HEADER = struct.Struct("<QI")

TAG_PICKLE = 1
TAG_BYTES = 2
TAG_NDARRAY = 3
TAG_COLUMNS = 4  # named ndarray columns, used for batch dumps
TAG_MLP = 5  # layer dims + row-major float64 data


def _encode_array(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _decode_array(payload: bytes) -> np.ndarray:
    return np.lib.format.read_array(io.BytesIO(payload), allow_pickle=False)


def encode(value) -> bytes:
    """Frame a value into self-describing bytes."""
    if isinstance(value, (bytes, bytearray, memoryview)):
        tag, payload = TAG_BYTES, bytes(value)
    elif isinstance(value, np.ndarray) and value.dtype != object:
        tag, payload = TAG_NDARRAY, _encode_array(value)
    else:
        tag, payload = TAG_PICKLE, pickle.dumps(value, protocol=pickle.HIGHEST_PROTOCOL)
    return HEADER.pack(len(payload), tag) + payload


def encode_columns(columns: dict[str, np.ndarray]) -> bytes:
    """Frame a mapping of named columns, one framed record per column."""
    body = bytearray()
    for name in columns:
        rec = pickle.dumps(name) + _encode_array(columns[name])
        body += HEADER.pack(len(rec), TAG_NDARRAY) + rec
    return HEADER.pack(len(body), TAG_COLUMNS) + bytes(body)


def decode(data: bytes):
    """Decode a framed value; raises CorruptPayload on malformed input."""
    payload, tag = _split(data)
    if tag == TAG_BYTES:
        return payload
    if tag == TAG_NDARRAY:
        try:
            return _decode_array(payload)
        except Exception as exc:  # np.format raises ValueError on bad magic
            raise CorruptPayload(f"bad ndarray payload: {exc}") from exc
    if tag == TAG_PICKLE:
        try:
            return pickle.loads(payload)
        except Exception as exc:
            raise CorruptPayload(f"bad pickle payload: {exc}") from exc
    if tag == TAG_COLUMNS:
        return decode_columns(data)
    raise CorruptPayload(f"unknown type tag {tag}")


def decode_columns(data: bytes) -> dict[str, np.ndarray]:
    payload, tag = _split(data)
    if tag != TAG_COLUMNS:
        raise CorruptPayload(f"expected columns frame, got tag {tag}")
    out: dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(payload):
        if pos + HEADER.size > len(payload):
            raise CorruptPayload("truncated column record")
        length, tag = HEADER.unpack_from(payload, pos)
        pos += HEADER.size
        rec = payload[pos : pos + length]
        if len(rec) != length:
            raise CorruptPayload("truncated column record")
        pos += length
        buf = io.BytesIO(rec)
        name = pickle.load(buf)
        out[name] = np.lib.format.read_array(buf, allow_pickle=False)
    return out


def _split(data: bytes) -> tuple[bytes, int]:
    if len(data) < HEADER.size:
        raise CorruptPayload("frame shorter than header")
    length, tag = HEADER.unpack_from(data, 0)
    payload = data[HEADER.size : HEADER.size + length]
    if len(payload) != length:
        raise CorruptPayload(f"frame header says {length} bytes, got {len(payload)}")
    return payload, tag
