"""Errors raised by the task runtime."""


class TaskRuntimeError(Exception):
    """Base class for runtime errors."""


class InvalidClaim(TaskRuntimeError):
    """Resource claim is malformed (e.g. zero cpu slots)."""


class RuntimeShutdown(TaskRuntimeError):
    """Operation attempted on a runtime that has been shut down."""


class ActorUnavailable(TaskRuntimeError):
    """Target actor is terminated or failed."""


class MethodError(TaskRuntimeError):
    """An actor method raised; carries the actor-side error text.

    The original traceback is preserved in ``remote_traceback`` so failures
    stay debuggable across the process boundary.
    """

    def __init__(self, message, remote_traceback=""):
        super().__init__(message)
        self.remote_traceback = remote_traceback


class UnknownObject(TaskRuntimeError):
    """ObjectRef does not name a stored object."""


class CorruptPayload(TaskRuntimeError):
    """Framed payload failed to decode."""
