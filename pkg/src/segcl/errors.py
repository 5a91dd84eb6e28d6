"""Exception types shared across the package."""


class SegclError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(SegclError):
    """An operation received tensors with incompatible shapes."""

    def __init__(self, op, detail):
        self.op = op
        self.detail = detail
        super().__init__(f"{op}: {detail}")


class NonFiniteError(SegclError):
    """A NaN or Inf showed up where only finite values are allowed."""

    def __init__(self, where, detail=""):
        self.where = where
        msg = f"non-finite values in {where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class GraphError(SegclError):
    """Backward pass invoked on an unusable graph or loss."""


class ParameterMismatchError(SegclError):
    """Two parameter collections do not share the same param_id set."""

    def __init__(self, missing=(), extra=(), context=""):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        parts = []
        if context:
            parts.append(context)
        if self.missing:
            parts.append(f"missing: {', '.join(self.missing)}")
        if self.extra:
            parts.append(f"extra: {', '.join(self.extra)}")
        super().__init__("param_id mismatch" + (" (" + "; ".join(parts) + ")" if parts else ""))


class CheckpointError(SegclError):
    """Checkpoint or dataset file is corrupt, truncated, or wrong version."""


class ConfigError(SegclError):
    """Invalid configuration value; `field` names the offending entry."""

    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class TrainingError(SegclError):
    """Training aborted (divergence, missing strategy state, ...)."""


class FileFormatError(SegclError):
    """A text artifact (matrix CSV, manifest) failed to parse."""
