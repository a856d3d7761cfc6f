"""Exception types shared across the workbench."""


class WorkbenchError(Exception):
    """Base class for all workbench errors."""


class FrameError(WorkbenchError):
    """Invalid frame construction or a violated frame invariant."""


class PartitionError(WorkbenchError):
    """Malformed partition (overlap, missing points, unknown names)."""


class ParseError(WorkbenchError):
    """Formula syntax error; carries the offending position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvalError(WorkbenchError):
    """Evaluation failure: missing variable or language mismatch."""


class BudgetError(WorkbenchError):
    """A configured search budget would be exceeded."""


class CapError(WorkbenchError):
    """A configured size cap would be exceeded."""


class PreconditionError(WorkbenchError):
    """An operation's stated precondition does not hold."""


class InternalInvariantError(WorkbenchError):
    """A property that should hold by construction failed; signals a bug."""
