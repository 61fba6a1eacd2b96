"""Exception types shared across the toolkit."""


class FormatError(ValueError):
    """A serialized artifact (clip, manifest, checkpoint, config) does not match its documented layout."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""
