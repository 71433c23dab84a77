class ScamSweeperError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(ScamSweeperError, ValueError):
    """Invalid or mismatched configuration (including checkpoint/config mismatch)."""


class InvariantError(ScamSweeperError, ValueError):
    """Input data violates a structural invariant."""


class IngestError(InvariantError):
    """A transaction or label file could not be parsed.

    ``line`` is the 1-based physical line number of the offending row when
    known.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        if line is None:
            where = path or ""
        else:
            where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
