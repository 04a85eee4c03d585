"""Hierarchical actor/task runtime: stateful actors, futures, k-of-n wait,
shared-memory object store, resource-aware scheduling, fault and straggler
injection."""

from .context import current_context, set_current_context
from .errors import (
    ActorUnavailable,
    CorruptPayload,
    InvalidClaim,
    MethodError,
    RuntimeShutdown,
    TaskRuntimeError,
    UnknownObject,
)
from .handles import (ActorFactory, ActorRef, BoxedRef, FailureSchedule,
                      Future, ObjectRef, ResourceClaim)
from .runtime import DRIVER_ID, Runtime, RuntimeConfig, RuntimeStats

__all__ = [
    "ActorFactory",
    "ActorRef",
    "ActorUnavailable",
    "BoxedRef",
    "CorruptPayload",
    "DRIVER_ID",
    "FailureSchedule",
    "Future",
    "InvalidClaim",
    "MethodError",
    "ObjectRef",
    "ResourceClaim",
    "Runtime",
    "RuntimeConfig",
    "RuntimeShutdown",
    "RuntimeStats",
    "TaskRuntimeError",
    "UnknownObject",
    "current_context",
    "set_current_context",
]
