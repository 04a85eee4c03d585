"""Batch compression: LZ4 block format applied per column.

The lz4 wheel is not available in this environment, so the block format is
implemented here: greedy hash-table matching with the standard end-of-block
rules (last five bytes literal, matches end 12 bytes before the block end,
minimum match length 4, 16-bit offsets).
"""

from __future__ import annotations

from dataclasses import dataclass
import pickle

import numpy as np

from ..sample_batch import SampleBatch
from ..taskrt.errors import CorruptPayload

_MIN_MATCH = 4
_LAST_LITERALS = 5
_MF_LIMIT = 12
_MAX_OFFSET = 0xFFFF

CODEC_LZ4 = "lz4-block"


def _emit_length(out: bytearray, value: int) -> None:
    while value >= 255:
        out.append(255)
        value -= 255
    out.append(value)


def _emit_sequence(out: bytearray, data: bytes, anchor: int, lit_len: int,
                   offset: int, match_len: int) -> None:
    ml = match_len - _MIN_MATCH
    token = (min(lit_len, 15) << 4) | min(ml, 15)
    out.append(token)
    if lit_len >= 15:
        _emit_length(out, lit_len - 15)
    out += data[anchor:anchor + lit_len]
    out += offset.to_bytes(2, "little")
    if ml >= 15:
        _emit_length(out, ml - 15)


def _emit_last(out: bytearray, data: bytes, anchor: int, lit_len: int) -> None:
    out.append(min(lit_len, 15) << 4)
    if lit_len >= 15:
        _emit_length(out, lit_len - 15)
    out += data[anchor:anchor + lit_len]


def compress_block(data: bytes) -> bytes:
    n = len(data)
    if n == 0:
        return b""
    out = bytearray()
    if n < _MF_LIMIT + 1:
        _emit_last(out, data, 0, n)
        return bytes(out)
    table: dict[bytes, int] = {}
    anchor = 0
    i = 0
    match_limit = n - _MF_LIMIT
    tail = n - _LAST_LITERALS
    while i < match_limit:
        key = data[i:i + _MIN_MATCH]
        cand = table.get(key, -1)
        table[key] = i
        if cand < 0 or i - cand > _MAX_OFFSET:
            i += 1
            continue
        # extend the match in chunks, then byte-wise
        mlen = _MIN_MATCH
        while i + mlen < tail:
            step = min(64, tail - (i + mlen))
            if data[cand + mlen:cand + mlen + step] == data[i + mlen:i + mlen + step]:
                mlen += step
                continue
            while i + mlen < tail and data[cand + mlen] == data[i + mlen]:
                mlen += 1
            break
        _emit_sequence(out, data, anchor, i - anchor, i - cand, mlen)
        i += mlen
        anchor = i
    _emit_last(out, data, anchor, n - anchor)
    return bytes(out)


def decompress_block(data: bytes) -> bytes:
    if len(data) == 0:
        return b""
    out = bytearray()
    i, n = 0, len(data)
    try:
        while True:
            token = data[i]
            i += 1
            lit = token >> 4
            if lit == 15:
                while True:
                    extra = data[i]
                    i += 1
                    lit += extra
                    if extra != 255:
                        break
            if i + lit > n:
                raise CorruptPayload("literal run past end of block")
            out += data[i:i + lit]
            i += lit
            if i >= n:
                break  # final sequence carries no match
            offset = data[i] | (data[i + 1] << 8)
            i += 2
            if offset == 0 or offset > len(out):
                raise CorruptPayload(f"bad match offset {offset}")
            mlen = token & 0xF
            if mlen == 15:
                while True:
                    extra = data[i]
                    i += 1
                    mlen += extra
                    if extra != 255:
                        break
            mlen += _MIN_MATCH
            start = len(out) - offset
            if offset >= mlen:
                out += out[start:start + mlen]
            else:
                pattern = bytes(out[start:])
                reps = mlen // offset + 1
                out += (pattern * reps)[:mlen]
    except IndexError:
        raise CorruptPayload("truncated block") from None
    return bytes(out)


@dataclass(frozen=True)
class CompressedBatch:
    codec: str
    original_nbytes: int
    payload: bytes

    @property
    def nbytes(self) -> int:
        return len(self.payload)

    @property
    def ratio(self) -> float:
        return self.original_nbytes / max(1, len(self.payload))


def compress_batch(batch: SampleBatch) -> CompressedBatch:
    records = []
    total = 0
    for name in sorted(batch.keys()):
        col = np.ascontiguousarray(batch[name])
        raw = col.tobytes()
        total += len(raw)
        records.append((name, col.dtype.str, col.shape, compress_block(raw)))
    return CompressedBatch(CODEC_LZ4, total, pickle.dumps(records, protocol=5))


def decompress_batch(comp: CompressedBatch) -> SampleBatch:
    if comp.codec != CODEC_LZ4:
        raise CorruptPayload(f"unknown codec {comp.codec!r}")
    try:
        records = pickle.loads(comp.payload)
    except Exception as exc:
        raise CorruptPayload(f"bad compressed payload: {exc}") from exc
    columns = {}
    for name, dtype, shape, blob in records:
        raw = decompress_block(blob)
        columns[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return SampleBatch(columns)


def maybe_compress(batch: SampleBatch, threshold_bytes: int):
    """Compress when the observation column is heavyweight; small vector
    batches are cheaper to move raw."""
    obs_key = SampleBatch.OBS
    if obs_key in batch and batch[obs_key].nbytes > threshold_bytes:
        return compress_batch(batch)
    return batch


def ensure_batch(value) -> SampleBatch:
    if isinstance(value, CompressedBatch):
        return decompress_batch(value)
    return value
