"""claimsml: Error Types

Library code raises these; only ``main.py`` turns them into exit codes.
"""


class ClaimsMLError(Exception):
    """Root of every error raised on purpose by this package."""

    exit_code = 1


class FormatError(ClaimsMLError, ValueError):
    """A medical code does not match its coding system's format."""

    def __init__(self, system: str, raw: str, pattern: str):
        self.system = system
        self.raw = raw
        self.pattern = pattern
        super().__init__(f"{system} code {raw!r} does not match pattern {pattern}")


class SchemaError(ClaimsMLError, ValueError):
    """A data file line violates its declared schema."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(ClaimsMLError, ValueError):
    """Invalid configuration value or unknown configuration key."""

    exit_code = 2

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ArtifactError(ClaimsMLError):
    """A required artifact is missing, truncated or unreadable."""

    exit_code = 3

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class VersionError(ArtifactError):
    """Magic bytes or format version of an artifact do not match."""

    exit_code = 4


class ArtifactMismatchError(ArtifactError):
    """A model artifact was built against a different vocabulary, table or risk map."""

    exit_code = 4


class TrainingError(ClaimsMLError):
    """Training input is degenerate (empty, single-class, ...)."""


class SplitError(ClaimsMLError, ValueError):
    """A train/test split request cannot be satisfied."""


class NotAttributableError(ClaimsMLError):
    """A history contains codes the generator config could not have emitted."""


class UnknownTokenError(ClaimsMLError, KeyError):
    """A token surface is not in the vocabulary."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class NoCandidateError(ClaimsMLError):
    """Nearest-code search found no other token of the query's kind."""


class ExplanationError(ClaimsMLError):
    """LIME cannot explain an input (for example, it has no code tokens)."""


class ConvergenceWarning(UserWarning):
    """An iterative fit stopped at its iteration cap before meeting its tolerance."""
