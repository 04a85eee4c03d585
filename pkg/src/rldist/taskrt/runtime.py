"""Hierarchical actor/task runtime.

The driver process owns all control-plane state: actor and task tables, the
slot scheduler, the object registry, and a router thread that multiplexes
worker pipes. Actors are forked worker processes with serial mailboxes.
Payloads move through the shared-memory object store; only handles and
small values travel the pipes, and every control-plane byte is counted so
tests can assert the data plane bypasses the driver.
"""

from __future__ import annotations

import multiprocessing as mp
import multiprocessing.connection as mpc
import os
import pickle
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from . import store
from .context import set_current_context
from .errors import (
    ActorUnavailable,
    InvalidClaim,
    MethodError,
    RuntimeShutdown,
    TaskRuntimeError,
    UnknownObject,
)
from .handles import ActorFactory, ActorRef, FailureSchedule, Future, ObjectRef, ResourceClaim
from .worker import _as_factory, worker_main

DRIVER_ID = "driver"
_REAP_GRACE_S = 2.0


@dataclass
class RuntimeConfig:
    slot_capacity: int | None = None  # None: RLDIST_SLOTS env, else 16
    seed: int = 0
    straggler_injection: dict[str, float] = field(default_factory=dict)
    failure_injection: dict[str, FailureSchedule] = field(default_factory=dict)

    def resolve_slots(self) -> int:
        env = os.environ.get("RLDIST_SLOTS")
        if env is not None:
            return int(env)
        if self.slot_capacity is not None:
            return int(self.slot_capacity)
        return 16


@dataclass
class RuntimeStats:
    control_bytes_sent: int = 0
    control_bytes_received: int = 0
    tasks_dispatched: int = 0
    tasks_completed: int = 0
    actors_spawned: int = 0
    actors_failed: int = 0

    def snapshot(self) -> "RuntimeStats":
        return RuntimeStats(**self.__dict__)


class _TaskRecord:
    __slots__ = ("task_id", "actor_id", "method", "done", "ok", "value",
                 "completion_seq", "t_start", "t_end")

    def __init__(self, task_id: int, actor_id: str, method: str):
        self.task_id = task_id
        self.actor_id = actor_id
        self.method = method
        self.done = False
        self.ok = False
        self.value = None
        self.completion_seq = -1
        self.t_start = 0.0
        self.t_end = 0.0


class _Sender(threading.Thread):
    """Per-actor outbound pipe writer so the router never blocks on a full
    pipe buffer (which could deadlock against a worker sending a large
    result)."""

    def __init__(self, conn, on_sent):
        super().__init__(daemon=True)
        self._conn = conn
        self._queue: deque = deque()
        self._cv = threading.Condition()
        self._on_sent = on_sent
        self._stopped = False

    def enqueue(self, msg) -> None:
        data = pickle.dumps(msg, protocol=pickle.HIGHEST_PROTOCOL)
        with self._cv:
            self._queue.append(data)
            self._cv.notify()

    def stop(self) -> None:
        with self._cv:
            self._stopped = True
            self._cv.notify()

    def run(self) -> None:
        while True:
            with self._cv:
                while not self._queue and not self._stopped:
                    self._cv.wait()
                if self._queue:
                    data = self._queue.popleft()
                elif self._stopped:
                    return
                else:
                    continue
            try:
                self._conn.send_bytes(data)
                self._on_sent(len(data))
            except (BrokenPipeError, OSError):
                return


class _ActorRecord:
    __slots__ = ("ref", "factory", "state", "parent_id", "children", "proc",
                 "out_conn", "sender", "buffered", "inflight", "straggler",
                 "failure", "failure_fired", "holds_slots")

    def __init__(self, ref: ActorRef, factory: ActorFactory, parent_id: str,
                 straggler: float, failure: FailureSchedule | None):
        self.ref = ref
        self.factory = factory
        self.state = "queued"  # queued|starting|live|failed|terminated
        self.parent_id = parent_id
        self.children: set[str] = set()
        self.proc = None
        self.out_conn = None
        self.sender: _Sender | None = None
        self.buffered: list[tuple] = []  # task messages awaiting placement
        self.inflight: set[int] = set()
        self.straggler = straggler
        self.failure = failure
        self.failure_fired = False
        self.holds_slots = False


class Runtime:
    """Driver-side runtime handle; also the driver's execution context."""

    def __init__(self, config: RuntimeConfig | None = None):
        self.config = config or RuntimeConfig()
        self.slot_capacity = self.config.resolve_slots()
        if self.slot_capacity < 1:
            raise InvalidClaim("slot_capacity must be >= 1")
        self._slots_free = self.slot_capacity
        self._lock = threading.RLock()
        self._cv = threading.Condition(self._lock)
        self._stats_lock = threading.Lock()
        self.stats = RuntimeStats()
        self.registry = store.ObjectRegistry()
        self.task_log: list[tuple[str, str]] = []

        self._actors: dict[str, _ActorRecord] = {}
        self._tasks: dict[int, _TaskRecord] = {}
        self._spawn_queue: deque[str] = deque()
        self._actor_seq = 0
        self._task_seq = 0
        self._obj_seq = 0
        self._completion_seq = 0
        self._worker_waits: list[dict] = []
        self._worker_gets: dict[int, list[tuple[str, int]]] = {}
        self._reap: list[tuple] = []
        self._closed = False

        # warm up the shared-memory resource tracker before any fork
        seg = mp.shared_memory.SharedMemory(create=True, size=16)
        seg.close()
        seg.unlink()

        self._wakeup_r, self._wakeup_w = os.pipe()
        os.set_blocking(self._wakeup_w, False)
        self._router = threading.Thread(target=self._route, daemon=True,
                                        name="rldist-router")
        self._router.start()
        set_current_context(self)

    # ------------------------------------------------------------------ API

    def spawn_actor(self, factory, claim: ResourceClaim | None = None) -> ActorRef:
        factory = _as_factory(factory)
        claim = claim or ResourceClaim()
        claim.validate()
        with self._lock:
            self._ensure_open()
            return self._spawn_locked(factory, claim, DRIVER_ID)

    def invoke(self, actor: ActorRef, method: str, args=(), kwargs=None) -> Future:
        with self._lock:
            self._ensure_open()
            return self._invoke_locked(actor.actor_id, method, tuple(args), kwargs or {})

    def get(self, future: Future, timeout: float | None = None):
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cv:
            rec = self._tasks[future.task_id]
            while not rec.done:
                if self._closed:
                    raise RuntimeShutdown("runtime shut down while waiting")
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TimeoutError(f"get timed out after {timeout}s")
                self._cv.wait(remaining)
            if rec.ok:
                return rec.value
            raise rec.value

    def wait(self, futures, k: int | None = None, timeout: float | None = None):
        futures = list(futures)
        if k is None:
            k = len(futures)
        if not 0 <= k <= len(futures):
            raise ValueError(f"k={k} out of range for {len(futures)} futures")
        if k == 0:
            return [], list(futures)
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cv:
            while True:
                done = [f for f in futures if self._tasks[f.task_id].done]
                if len(done) >= k or (deadline is not None
                                      and time.monotonic() >= deadline):
                    done.sort(key=lambda f: self._tasks[f.task_id].completion_seq)
                    ready = done[:max(k, len(done))] if len(done) < k else done[:k]
                    # everything completed beyond k stays "pending" to the caller
                    ready_ids = {f.task_id for f in ready}
                    pending = [f for f in futures if f.task_id not in ready_ids]
                    return ready, pending
                remaining = None if deadline is None else deadline - time.monotonic()
                self._cv.wait(remaining)

    def put(self, value) -> ObjectRef:
        self._ensure_open()
        self._obj_seq += 1
        object_id = f"{DRIVER_ID}.{self._obj_seq}"
        shm_name, nbytes = store.write_segment(value)
        self.registry.register(store.ObjectMeta(object_id, shm_name, nbytes))
        return ObjectRef(object_id, nbytes)

    def fetch(self, ref: ObjectRef):
        return store.read_segment(self.registry.lookup(ref.object_id))

    def terminate_actor(self, actor: ActorRef) -> None:
        with self._lock:
            self._terminate_locked(actor.actor_id)
            self._schedule_locked()
            self._cv.notify_all()

    def actor_state(self, actor: ActorRef) -> str:
        with self._lock:
            rec = self._actors.get(actor.actor_id)
            return rec.state if rec else "unknown"

    def wait_actor_state(self, actor: ActorRef, states=("live",),
                         timeout: float = 30.0) -> str:
        deadline = time.monotonic() + timeout
        with self._cv:
            while True:
                rec = self._actors.get(actor.actor_id)
                state = rec.state if rec else "unknown"
                if state in states:
                    return state
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TimeoutError(
                        f"{actor.actor_id} still {state!r} after {timeout}s")
                self._cv.wait(remaining)

    @property
    def free_slots(self) -> int:
        with self._lock:
            return self._slots_free

    def actor_tree(self) -> dict[str, str]:
        """Snapshot of actor_id -> parent_id for every actor ever spawned."""
        with self._lock:
            return {aid: rec.parent_id for aid, rec in self._actors.items()}

    def hierarchy_depth(self) -> int:
        """Depth of the actor tree counting the driver as level 1."""
        tree = self.actor_tree()
        depth = 1
        for aid in tree:
            d, cur = 2, tree[aid]
            while cur != DRIVER_ID:
                cur = tree[cur]
                d += 1
            depth = max(depth, d)
        return depth

    def task_timing(self, future: Future) -> tuple[float, float]:
        with self._lock:
            rec = self._tasks[future.task_id]
            if not rec.done:
                raise ValueError("task not complete")
            return rec.t_start, rec.t_end

    def serialization_count(self) -> int:
        return self.registry.serialization_count

    def shutdown(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            roots = [aid for aid, rec in self._actors.items()
                     if rec.parent_id == DRIVER_ID]
            for aid in roots:
                self._terminate_locked(aid)
            for rec in self._tasks.values():
                if not rec.done:
                    self._finish_locked(rec, False, RuntimeShutdown("runtime shut down"))
            self._cv.notify_all()
        self._poke()
        self._router.join(timeout=5.0)
        self._force_reap()
        self.registry.unlink_all()
        os.close(self._wakeup_w)
        os.close(self._wakeup_r)

    def __enter__(self) -> "Runtime":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    # ----------------------------------------------------------- internals

    def _ensure_open(self) -> None:
        if self._closed:
            raise RuntimeShutdown("runtime has been shut down")

    def _poke(self) -> None:
        try:
            os.write(self._wakeup_w, b"x")
        except (BlockingIOError, OSError):
            pass

    def _count_sent(self, n: int) -> None:
        with self._stats_lock:
            self.stats.control_bytes_sent += n

    def _count_received(self, n: int) -> None:
        with self._stats_lock:
            self.stats.control_bytes_received += n

    def _spawn_locked(self, factory: ActorFactory, claim: ResourceClaim,
                      parent_id: str) -> ActorRef:
        self._actor_seq += 1
        actor_id = f"a{self._actor_seq:04d}"
        ref = ActorRef(actor_id, claim, parent_id)
        rec = _ActorRecord(
            ref, factory, parent_id,
            straggler=self.config.straggler_injection.get(actor_id, 1.0),
            failure=self.config.failure_injection.get(actor_id),
        )
        self._actors[actor_id] = rec
        if parent_id != DRIVER_ID:
            self._actors[parent_id].children.add(actor_id)
        self.stats.actors_spawned += 1
        self._spawn_queue.append(actor_id)
        self._schedule_locked()
        return ref

    def _schedule_locked(self) -> None:
        """Greedy first-fit over the FIFO spawn queue."""
        placed = []
        for actor_id in self._spawn_queue:
            rec = self._actors[actor_id]
            if rec.state != "queued":
                placed.append(actor_id)
                continue
            if rec.ref.claim.cpu_slots <= self._slots_free:
                self._place_locked(rec)
                placed.append(actor_id)
        for actor_id in placed:
            self._spawn_queue.remove(actor_id)

    def _place_locked(self, rec: _ActorRecord) -> None:
        cmd_r, cmd_w = mp.Pipe(duplex=False)
        out_r, out_w = mp.Pipe(duplex=False)
        failure = rec.failure if not rec.failure_fired else None
        proc = mp.get_context("fork").Process(
            target=worker_main,
            args=(rec.ref.actor_id, rec.factory, cmd_r, out_w,
                  rec.straggler, failure, 0),
            daemon=True,
            name=f"rldist-{rec.ref.actor_id}",
        )
        proc.start()
        cmd_r.close()
        out_w.close()
        rec.proc = proc
        rec.out_conn = out_r
        rec.sender = _Sender(cmd_w, self._count_sent)
        rec.sender.start()
        rec.state = "starting"
        rec.holds_slots = True
        self._slots_free -= rec.ref.claim.cpu_slots
        for msg in rec.buffered:
            rec.sender.enqueue(msg)
        rec.buffered.clear()
        self._poke()

    def _invoke_locked(self, actor_id: str, method: str, args: tuple,
                       kwargs: dict) -> Future:
        rec = self._actors.get(actor_id)
        if rec is None:
            raise ActorUnavailable(f"unknown actor {actor_id}")
        if rec.state == "terminated":
            raise ActorUnavailable(f"{actor_id} is terminated")
        if rec.state == "failed":
            if rec.failure is not None and rec.failure.recoverable:
                self._restart_locked(rec)
            else:
                raise ActorUnavailable(f"{actor_id} failed and is not recoverable")
        self._task_seq += 1
        task = _TaskRecord(self._task_seq, actor_id, method)
        self._tasks[task.task_id] = task
        rec.inflight.add(task.task_id)
        self.task_log.append((actor_id, method))
        self.stats.tasks_dispatched += 1
        msg = ("task", task.task_id, method, args, kwargs)
        if rec.state in ("starting", "live"):
            rec.sender.enqueue(msg)
        else:  # queued awaiting slots
            rec.buffered.append(msg)
        return Future(task.task_id)

    def _restart_locked(self, rec: _ActorRecord) -> None:
        rec.state = "queued"
        self._spawn_queue.append(rec.ref.actor_id)
        if rec.holds_slots:
            # recoverable actors keep their claim across restarts
            self._place_locked(rec)
            self._spawn_queue.remove(rec.ref.actor_id)
        else:
            self._schedule_locked()

    def _terminate_locked(self, actor_id: str) -> None:
        rec = self._actors.get(actor_id)
        if rec is None or rec.state == "terminated":
            return
        for child in list(rec.children):
            self._terminate_locked(child)
        self._teardown_locked(rec, "terminated",
                              ActorUnavailable(f"{actor_id} terminated"))

    def _teardown_locked(self, rec: _ActorRecord, state: str,
                         error: TaskRuntimeError, release_slots: bool = True) -> None:
        for task_id in list(rec.inflight):
            task = self._tasks[task_id]
            if not task.done:
                self._finish_locked(task, False, error)
        rec.inflight.clear()
        rec.buffered.clear()
        if rec.sender is not None:
            rec.sender.enqueue(("stop",))
            rec.sender.stop()
            rec.sender = None
        if rec.proc is not None:
            self._reap.append((rec.proc, rec.out_conn,
                               time.monotonic() + _REAP_GRACE_S))
            rec.proc = None
            rec.out_conn = None
        if rec.holds_slots and release_slots:
            self._slots_free += rec.ref.claim.cpu_slots
            rec.holds_slots = False
        if rec.state == "queued" and rec.ref.actor_id in self._spawn_queue:
            self._spawn_queue.remove(rec.ref.actor_id)
        rec.state = state
        self._poke()

    def _finish_locked(self, task: _TaskRecord, ok: bool, value,
                       t_start: float = 0.0, t_end: float = 0.0) -> None:
        if task.done:
            return
        task.done = True
        task.ok = ok
        task.value = value
        task.t_start = t_start
        task.t_end = t_end
        self._completion_seq += 1
        task.completion_seq = self._completion_seq
        self.stats.tasks_completed += 1
        rec = self._actors.get(task.actor_id)
        if rec is not None:
            rec.inflight.discard(task.task_id)
        for actor_id, rid in self._worker_gets.pop(task.task_id, []):
            self._reply_locked(actor_id, rid, True,
                               (task.ok, task.value))
        self._service_worker_waits_locked()
        self._cv.notify_all()

    # ---------------------------------------------------------- router side

    def _route(self) -> None:
        wakeup = self._wakeup_r
        while True:
            with self._lock:
                if self._closed and not any(
                        rec.state in ("starting", "live")
                        for rec in self._actors.values()):
                    self._reap_locked()
                    return
                conns = {rec.out_conn: rec for rec in self._actors.values()
                         if rec.state in ("starting", "live")
                         and rec.out_conn is not None}
                timeout = self._next_wait_deadline_locked()
            try:
                ready = mpc.wait(list(conns) + [wakeup], timeout=timeout)
            except OSError:
                ready = []
            if wakeup in ready:
                try:
                    os.read(wakeup, 4096)
                except OSError:
                    pass
                ready.remove(wakeup)
            for conn in ready:
                self._drain_conn(conn, conns.get(conn))
            with self._lock:
                self._expire_worker_waits_locked()
                self._reap_locked()
                if self._closed:
                    self._cv.notify_all()

    def _drain_conn(self, conn, rec: _ActorRecord | None) -> None:
        if rec is None:
            return
        while True:
            with self._lock:
                stale = rec.out_conn is not conn
            if stale:
                return
            try:
                if not conn.poll(0):
                    return
                data = conn.recv_bytes()
            except (EOFError, OSError):
                with self._lock:
                    if rec.out_conn is conn and rec.state in ("starting", "live"):
                        self.stats.actors_failed += 1
                        recoverable = (rec.failure is not None
                                       and rec.failure.recoverable
                                       and rec.failure_fired)
                        self._teardown_locked(
                            rec, "failed",
                            ActorUnavailable(f"{rec.ref.actor_id} died"),
                            release_slots=not recoverable)
                        self._schedule_locked()
                        self._cv.notify_all()
                return
            self._count_received(len(data))
            self._handle_message(rec, pickle.loads(data))

    def _handle_message(self, rec: _ActorRecord, msg) -> None:
        kind = msg[0]
        if kind == "result":
            _, task_id, ok, value, t0, t1 = msg
            with self._lock:
                task = self._tasks.get(task_id)
                if task is None or task.done:
                    return
                if ok:
                    self._finish_locked(task, True, value, t0, t1)
                else:
                    err_repr, tb = value
                    err = MethodError(
                        f"{rec.ref.actor_id}.{task.method} raised {err_repr}", tb)
                    self._finish_locked(task, False, err, t0, t1)
        elif kind == "ready":
            with self._lock:
                if rec.state == "starting":
                    rec.state = "live"
                self._cv.notify_all()
        elif kind == "init_error":
            with self._lock:
                if rec.state not in ("starting", "live"):
                    return
                self.stats.actors_failed += 1
                self._teardown_locked(
                    rec, "failed",
                    ActorUnavailable(
                        f"{rec.ref.actor_id} constructor failed: {msg[1]}"))
                self._schedule_locked()
                self._cv.notify_all()
        elif kind == "injected_failure":
            with self._lock:
                if rec.state not in ("starting", "live"):
                    return
                rec.failure_fired = True
                self.stats.actors_failed += 1
                recoverable = rec.failure is not None and rec.failure.recoverable
                self._teardown_locked(
                    rec, "failed",
                    ActorUnavailable(f"{rec.ref.actor_id} failed (injected)"),
                    release_slots=not recoverable)
                self._schedule_locked()
                self._cv.notify_all()
        elif kind == "request":
            _, rid, op, params = msg
            self._handle_request(rec, rid, op, params)

    def _handle_request(self, rec: _ActorRecord, rid: int, op: str, params) -> None:
        actor_id = rec.ref.actor_id
        try:
            if op == "spawn":
                factory, claim, parent_id = params
                with self._lock:
                    self._ensure_open()
                    ref = self._spawn_locked(factory, claim, parent_id)
                self._reply(rec, rid, True, ref)
            elif op == "invoke":
                target_id, method, args, kwargs = params
                with self._lock:
                    self._ensure_open()
                    fut = self._invoke_locked(target_id, method, args, kwargs)
                self._reply(rec, rid, True, fut)
            elif op == "get":
                task_id, _timeout = params
                with self._lock:
                    task = self._tasks.get(task_id)
                    if task is None:
                        raise UnknownObject(f"no task {task_id}")
                    if task.done:
                        self._reply_locked(actor_id, rid, True, (task.ok, task.value))
                    else:
                        self._worker_gets.setdefault(task_id, []).append(
                            (actor_id, rid))
            elif op == "wait":
                task_ids, k, timeout = params
                with self._lock:
                    entry = {
                        "actor_id": actor_id, "rid": rid, "task_ids": task_ids,
                        "k": k,
                        "deadline": None if timeout is None
                        else time.monotonic() + timeout,
                    }
                    if not self._try_satisfy_wait_locked(entry):
                        self._worker_waits.append(entry)
            elif op == "put_meta":
                self.registry.register(params)
                self._reply(rec, rid, True, None)
            elif op == "fetch_meta":
                meta = self.registry.lookup(params)
                self._reply(rec, rid, True, meta)
            elif op == "terminate":
                with self._lock:
                    self._terminate_locked(params)
                    self._schedule_locked()
                    self._cv.notify_all()
                self._reply(rec, rid, True, None)
            elif op == "actor_state":
                with self._lock:
                    target = self._actors.get(params)
                    state = target.state if target else "unknown"
                self._reply(rec, rid, True, state)
            else:
                raise TaskRuntimeError(f"unknown request op {op!r}")
        except TaskRuntimeError as exc:
            self._reply(rec, rid, False, exc)

    def _reply(self, rec: _ActorRecord, rid: int, ok: bool, value) -> None:
        if rec.sender is not None:
            rec.sender.enqueue(("reply", rid, ok, value))

    def _reply_locked(self, actor_id: str, rid: int, ok: bool, value) -> None:
        rec = self._actors.get(actor_id)
        if rec is not None and rec.sender is not None:
            rec.sender.enqueue(("reply", rid, ok, value))

    def _try_satisfy_wait_locked(self, entry) -> bool:
        done = [tid for tid in entry["task_ids"]
                if tid in self._tasks and self._tasks[tid].done]
        expired = (entry["deadline"] is not None
                   and time.monotonic() >= entry["deadline"])
        if len(done) >= entry["k"] or expired:
            done.sort(key=lambda tid: self._tasks[tid].completion_seq)
            ready = done if len(done) < entry["k"] else done[:entry["k"]]
            pending = [tid for tid in entry["task_ids"] if tid not in set(ready)]
            self._reply_locked(entry["actor_id"], entry["rid"], True,
                               (ready, pending))
            return True
        return False

    def _service_worker_waits_locked(self) -> None:
        self._worker_waits = [e for e in self._worker_waits
                              if not self._try_satisfy_wait_locked(e)]

    def _expire_worker_waits_locked(self) -> None:
        self._service_worker_waits_locked()

    def _next_wait_deadline_locked(self) -> float | None:
        deadlines = [e["deadline"] for e in self._worker_waits
                     if e["deadline"] is not None]
        if not deadlines:
            return None
        return max(0.0, min(deadlines) - time.monotonic())

    def _reap_locked(self) -> None:
        remaining = []
        for proc, conn, kill_at in self._reap:
            proc.join(timeout=0)
            if proc.exitcode is None:
                if time.monotonic() >= kill_at:
                    proc.kill()
                    proc.join(timeout=1.0)
                else:
                    remaining.append((proc, conn, kill_at))
                    continue
            if conn is not None:
                try:
                    conn.close()
                except OSError:
                    pass
        self._reap = remaining

    def _force_reap(self) -> None:
        with self._lock:
            for rec in self._actors.values():
                if rec.proc is not None:
                    self._reap.append((rec.proc, rec.out_conn, 0.0))
                    rec.proc = None
                    rec.out_conn = None
            for proc, conn, _ in self._reap:
                proc.join(timeout=0.5)
                if proc.exitcode is None:
                    proc.kill()
                    proc.join(timeout=1.0)
                if conn is not None:
                    try:
                        conn.close()
                    except OSError:
                        pass
            self._reap = []
