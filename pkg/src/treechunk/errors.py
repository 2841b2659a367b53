"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all treechunk errors."""


class EmptyInputError(ToolkitError, ValueError):
    """Raised when a document or window contains no usable text."""


class UnknownTokenizerError(ToolkitError, ValueError):
    """Raised when a tokenizer name is not registered."""


class TreeError(ToolkitError, ValueError):
    """Raised when chunk points or tree structure violate an invariant."""


class SchemaError(ToolkitError, ValueError):
    """Raised when a persisted document fails schema validation."""


class BackendError(ToolkitError, RuntimeError):
    """Raised when a generation or embedding backend fails.

    ``partial_points`` carries whatever global chunk points had been
    accumulated before the failure, for diagnostics.
    """

    def __init__(self, message: str, partial_points=None):
        super().__init__(message)
        self.partial_points = partial_points


class ProgressError(ToolkitError, RuntimeError):
    """Raised when iterative inference fails to advance its window."""


class ConfigError(ToolkitError, ValueError):
    """Raised for invalid or unresolvable run configuration."""


class DocumentNotFoundError(ToolkitError, ValueError):
    """Raised when a requested document id has no persisted artifacts."""
