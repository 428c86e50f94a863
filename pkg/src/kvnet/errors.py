"""Shared exception types, kept separate so the CLI can map them to exit codes."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class FormatError(ValueError):
    """A binary file (KSP1/MSK1/CKPT) is malformed or has a bad magic."""
