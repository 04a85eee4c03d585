"""Shared-memory object store primitives.

Payloads are framed once at put() and written into a POSIX shared-memory
segment; any process fetches by attaching to the segment, so payload bytes
never travel through control-plane pipes. The registry (object_id ->
segment) lives in the driver and is the single place serializations are
counted.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from multiprocessing import shared_memory

from . import framing
from .errors import UnknownObject


@dataclass(frozen=True)
class ObjectMeta:
    object_id: str
    shm_name: str
    nbytes: int


def write_segment(value) -> tuple[str, int]:
    """Encode value and place it in a fresh shared-memory segment.

    Returns (segment name, payload length). The caller registers the
    metadata; the driver unlinks all segments at shutdown.
    """
    data = framing.encode(value)
    seg = shared_memory.SharedMemory(create=True, size=len(data))
    seg.buf[: len(data)] = data
    seg.close()
    return seg.name, len(data)


def read_segment(meta: ObjectMeta):
    seg = shared_memory.SharedMemory(name=meta.shm_name)
    try:
        data = bytes(seg.buf[: meta.nbytes])
    finally:
        seg.close()
    return framing.decode(data)


class ObjectRegistry:
    """Driver-resident object table; safe for driver and router threads."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._objects: dict[str, ObjectMeta] = {}
        self.serialization_count = 0

    def register(self, meta: ObjectMeta) -> None:
        with self._lock:
            self._objects[meta.object_id] = meta
            self.serialization_count += 1

    def lookup(self, object_id: str) -> ObjectMeta:
        with self._lock:
            meta = self._objects.get(object_id)
        if meta is None:
            raise UnknownObject(f"no object {object_id!r} in store")
        return meta

    def unlink_all(self) -> None:
        with self._lock:
            metas = list(self._objects.values())
            self._objects.clear()
        for meta in metas:
            try:
                seg = shared_memory.SharedMemory(name=meta.shm_name)
                seg.close()
                seg.unlink()
            except FileNotFoundError:
                pass
