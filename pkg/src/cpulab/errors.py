"""Exception types shared across the package."""


class CpuLabError(Exception):
    """Base class for all errors raised by this package."""


class InputError(CpuLabError, ValueError):
    """Invalid user-supplied input (bad config, malformed file, degenerate sweep)."""


class OutOfRangeError(CpuLabError, ValueError):
    """A window or interval does not line up with the data it is applied to."""


class InsufficientDataError(CpuLabError, ValueError):
    """Too few samples/points to carry out the requested computation."""


class DegenerateInputError(CpuLabError, ValueError):
    """Input is structurally valid but degenerate (e.g. all x values equal)."""


class MismatchError(CpuLabError, ValueError):
    """Two datasets that must share keys or lengths do not."""


class StateError(CpuLabError, RuntimeError):
    """Operation invoked in the wrong lifecycle state (double stop, unfitted model)."""


class NotFoundError(CpuLabError, LookupError):
    """A referenced process or resource does not exist."""


class CapabilityError(CpuLabError, RuntimeError):
    """The platform does not expose a counter or facility this feature needs."""


class BackendError(CpuLabError, RuntimeError):
    """An inference backend failed to launch or respond.

    ``stderr`` carries the captured diagnostic output when available.
    """

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message)
        self.stderr = stderr
