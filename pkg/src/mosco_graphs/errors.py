"""Shared exception types.

Everything raised on bad input derives from ValueError so callers can
catch broadly; the subclasses exist where tests or the CLI need to tell
failure modes apart.
"""


class DimensionMismatch(ValueError):
    """Vector length does not match the ambient site count."""


class PartitionError(ValueError):
    """Bad cell data: out-of-range indices, overlapping cells, or no mass left."""


class SymmetryError(ValueError):
    """An operator that must be symmetric for the weighted inner product is not."""


class SolverError(RuntimeError):
    """A guarded linear solve produced a residual above tolerance."""


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""
