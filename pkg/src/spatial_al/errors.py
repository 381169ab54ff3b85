"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an operation receives data violating its preconditions."""


class ConfigError(ValueError):
    """Raised for inconsistent selection or run configurations."""


class PoolExhaustedError(RuntimeError):
    def __init__(self, requested, available):
        self.requested = requested
        self.available = available
        super().__init__(
            f"pool exhausted: batch needs {requested} regions but only "
            f"{available} are unlabeled (shortfall {requested - available})"
        )


class InstanceTooLargeError(ValueError):
    pass


class FormatError(ValueError):
    """Binary/JSON codec failure.

    ``code`` is a stable machine-readable identifier (``bad_magic``,
    ``bad_version``, ``truncated``, ``not_normalized``, ...), ``offset`` the
    byte offset where decoding failed when known.
    """

    def __init__(self, code, message, offset=None, expected=None, found=None):
        self.code = code
        self.offset = offset
        self.expected = expected
        self.found = found
        detail = message
        if offset is not None:
            detail += f" (offset {offset}"
            if expected is not None:
                detail += f", expected {expected!r}, found {found!r}"
            detail += ")"
        super().__init__(detail)

    def to_dict(self):
        return {
            "error": self.code,
            "message": str(self),
            "offset": self.offset,
        }


class EmptyBatchWarning(UserWarning):
    pass


class DegeneratePcaWarning(UserWarning):
    pass


class DegenerateModelWarning(UserWarning):
    pass
