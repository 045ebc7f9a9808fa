"""Exception types shared across the package."""


class ConvserError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(ConvserError):
    """An argument, shape, or configuration value is invalid."""


class FormatError(ConvserError):
    """A file is structurally malformed (bad header, truncated chunk)."""


class UnsupportedCodecError(FormatError):
    """The file is well-formed but uses an encoding we do not handle."""


class ManifestError(ConvserError):
    """Dataset manifest validation failed; carries every violation found."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "manifest validation failed:\n" + "\n".join(self.violations)
        )
