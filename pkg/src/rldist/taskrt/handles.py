"""Handle types passed between the driver and actors.

Handles are small immutable records; all mutable state lives in the
runtime's tables. They pickle cheaply, so passing one through the control
plane costs handle-size bytes rather than payload-size bytes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidClaim


@dataclass(frozen=True)
class ResourceClaim:
    """Logical execution slots an actor occupies for its lifetime."""

    cpu_slots: int = 1
    memory_hint: int = 0  # advisory bytes, not enforced

    def validate(self) -> None:
        if self.cpu_slots < 1:
            raise InvalidClaim(f"cpu_slots must be >= 1, got {self.cpu_slots}")


@dataclass(frozen=True)
class ActorRef:
    actor_id: str
    claim: ResourceClaim
    parent_id: str

    def __repr__(self) -> str:
        return f"ActorRef({self.actor_id})"


@dataclass(frozen=True)
class Future:
    task_id: int

    def __repr__(self) -> str:
        return f"Future({self.task_id})"


@dataclass(frozen=True)
class ObjectRef:
    object_id: str
    size_bytes: int

    def __repr__(self) -> str:
        return f"ObjectRef({self.object_id}, {self.size_bytes}B)"


@dataclass(frozen=True)
class BoxedRef:
    """Shields an ObjectRef from argument auto-resolution so intermediaries
    can forward the handle without materializing the payload."""

    ref: ObjectRef


@dataclass(frozen=True)
class FailureSchedule:
    """Injected fault: fail once when the actor's cumulative task ordinal
    reaches ``fail_on_task``; recoverable actors restart from their
    constructor on the next invoke."""

    fail_on_task: int
    recoverable: bool = True


@dataclass
class ActorFactory:
    """Picklable construction recipe for an actor instance."""

    cls: type
    args: tuple = ()
    kwargs: dict = field(default_factory=dict)

    def build(self):
        return self.cls(*self.args, **self.kwargs)
