"""Actor worker process: serial mailbox loop plus nested-operation context.

Each actor is one forked process with two pipes: commands in (tasks,
replies, stop) and messages out (results, nested requests). The loop is
single-threaded, so an actor processes its mailbox strictly in order; a
nested call (spawn/invoke/get/wait inside a method) blocks the current
task while buffering any task commands that arrive in the meantime.
"""

from __future__ import annotations

import pickle
import time
import traceback
from collections import deque

from . import store
from .context import set_current_context
from .errors import TaskRuntimeError
from .handles import ActorFactory, ActorRef, FailureSchedule, Future, ObjectRef, ResourceClaim


class _InjectedFailure(Exception):
    pass


class WorkerContext:
    """Runtime operations available inside actor methods."""

    def __init__(self, actor_id: str, cmd_conn, out_conn):
        self.actor_id = actor_id
        self._cmd = cmd_conn
        self._out = out_conn
        self._pending = deque()
        self._req_seq = 0
        self._obj_seq = 0
        self._meta_cache: dict[str, store.ObjectMeta] = {}
        self._stop = False

    # -- message plumbing ---------------------------------------------------

    def _send(self, msg) -> None:
        self._out.send_bytes(pickle.dumps(msg, protocol=pickle.HIGHEST_PROTOCOL))

    def _recv(self):
        return pickle.loads(self._cmd.recv_bytes())

    def _request(self, op: str, params):
        self._req_seq += 1
        rid = self._req_seq
        self._send(("request", rid, op, params))
        while True:
            msg = self._recv()
            kind = msg[0]
            if kind == "reply" and msg[1] == rid:
                ok, value = msg[2], msg[3]
                if ok:
                    return value
                raise value
            if kind == "task":
                self._pending.append(msg)
            elif kind == "stop":
                self._stop = True

    # -- context API --------------------------------------------------------

    def spawn_actor(self, factory, claim: ResourceClaim | None = None) -> ActorRef:
        factory = _as_factory(factory)
        claim = claim or ResourceClaim()
        claim.validate()
        return self._request("spawn", (factory, claim, self.actor_id))

    def invoke(self, actor: ActorRef, method: str, args=(), kwargs=None) -> Future:
        return self._request("invoke", (actor.actor_id, method, tuple(args), kwargs or {}))

    def get(self, future: Future, timeout: float | None = None):
        ok, value = self._request("get", (future.task_id, timeout))
        if ok:
            return value
        raise value

    def wait(self, futures, k: int | None = None, timeout: float | None = None):
        futures = list(futures)
        if k is None:
            k = len(futures)
        if not 0 <= k <= len(futures):
            raise ValueError(f"k={k} out of range for {len(futures)} futures")
        ready_ids, pending_ids = self._request(
            "wait", ([f.task_id for f in futures], k, timeout)
        )
        by_id = {f.task_id: f for f in futures}
        return [by_id[i] for i in ready_ids], [by_id[i] for i in pending_ids]

    def put(self, value) -> ObjectRef:
        self._obj_seq += 1
        object_id = f"{self.actor_id}.{self._obj_seq}"
        shm_name, nbytes = store.write_segment(value)
        meta = store.ObjectMeta(object_id, shm_name, nbytes)
        self._request("put_meta", meta)
        self._meta_cache[object_id] = meta
        return ObjectRef(object_id, nbytes)

    def fetch(self, ref: ObjectRef):
        meta = self._meta_cache.get(ref.object_id)
        if meta is None:
            meta = self._request("fetch_meta", ref.object_id)
            self._meta_cache[ref.object_id] = meta
        return store.read_segment(meta)

    def terminate_actor(self, actor: ActorRef) -> None:
        self._request("terminate", actor.actor_id)

    def actor_state(self, actor: ActorRef) -> str:
        return self._request("actor_state", actor.actor_id)

    # -- main loop ----------------------------------------------------------

    def _next_message(self):
        if self._pending:
            return self._pending.popleft()
        return self._recv()

    def _resolve_args(self, value):
        if isinstance(value, ObjectRef):
            return self.fetch(value)
        if isinstance(value, tuple):
            return tuple(self._resolve_args(v) for v in value)
        if isinstance(value, list):
            return [self._resolve_args(v) for v in value]
        if isinstance(value, dict):
            return {k: self._resolve_args(v) for k, v in value.items()}
        return value

    def run(self, factory: ActorFactory, straggler_mult: float,
            failure: FailureSchedule | None, start_ordinal: int) -> None:
        try:
            actor = factory.build()
        except Exception as exc:
            self._send(("init_error", repr(exc), traceback.format_exc()))
            return
        self._send(("ready",))
        ordinal = start_ordinal
        while not self._stop:
            try:
                msg = self._next_message()
            except (EOFError, OSError):
                break
            kind = msg[0]
            if kind == "stop":
                break
            if kind != "task":
                continue
            task_id, method, args, kwargs = msg[1], msg[2], msg[3], msg[4]
            ordinal += 1
            if failure is not None and ordinal == failure.fail_on_task:
                self._send(("injected_failure", task_id))
                return
            t0 = time.monotonic()
            try:
                fn = getattr(actor, method)
                value = fn(*self._resolve_args(args), **self._resolve_args(kwargs))
                ok = True
            except Exception as exc:
                ok = False
                value = (repr(exc), traceback.format_exc())
            t1 = time.monotonic()
            if straggler_mult > 1.0:
                time.sleep((straggler_mult - 1.0) * (t1 - t0))
                t1 = time.monotonic()
            try:
                self._send(("result", task_id, ok, value, t0, t1))
            except Exception as exc:
                self._send(("result", task_id, False,
                            (f"unpicklable result: {exc!r}", ""), t0, t1))


def _as_factory(factory) -> ActorFactory:
    if isinstance(factory, ActorFactory):
        return factory
    if isinstance(factory, tuple):
        cls, *rest = factory
        args = rest[0] if rest else ()
        kwargs = rest[1] if len(rest) > 1 else {}
        return ActorFactory(cls, tuple(args), dict(kwargs))
    if isinstance(factory, type):
        return ActorFactory(factory)
    raise TypeError(f"cannot build actor from {factory!r}")


def worker_main(actor_id: str, factory: ActorFactory, cmd_conn, out_conn,
                straggler_mult: float, failure: FailureSchedule | None,
                start_ordinal: int) -> None:
    """Entry point of the forked actor process."""
    ctx = WorkerContext(actor_id, cmd_conn, out_conn)
    set_current_context(ctx)
    try:
        ctx.run(factory, straggler_mult, failure, start_ordinal)
    except (KeyboardInterrupt, TaskRuntimeError):
        pass
