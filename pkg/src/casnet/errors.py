"""Exception hierarchy with machine-readable error categories.

Every error the CLI can surface carries a stable ``code`` string so scripts
can dispatch on the category without parsing prose.
"""


class CasnetError(Exception):
    """Base class; ``code`` is the machine-readable category."""

    code = "error"


class ShapeError(CasnetError):
    code = "shape-error"


class ConfigError(CasnetError):
    code = "config-error"


class DataFormatError(CasnetError):
    code = "data-format-error"


class CheckpointError(CasnetError):
    code = "checkpoint-error"


class CheckpointMagicError(CheckpointError):
    code = "checkpoint-magic"


class CheckpointVersionError(CheckpointError):
    code = "checkpoint-version"


class CheckpointTruncatedError(CheckpointError):
    code = "checkpoint-truncated"


class CheckpointShapeError(CheckpointError):
    code = "checkpoint-shape-mismatch"
