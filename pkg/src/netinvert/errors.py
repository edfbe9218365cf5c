"""Exception types shared across the toolkit.

Plain ``ValueError`` is used for ordinary argument validation (bad shapes,
out-of-range labels); the classes here mark failures that callers route on,
e.g. the CLI exit-code mapping.
"""


class NetinvertError(Exception):
    """Base class for toolkit-specific failures."""


class FormatError(NetinvertError, ValueError):
    """A binary input file does not match its declared format."""


class ConsistencyError(NetinvertError, ValueError):
    """Two inputs that must agree (e.g. image/label counts) do not."""


class IntegrityError(NetinvertError):
    """A checkpoint archive is corrupt, truncated, or incomplete."""


class CheckpointKindError(NetinvertError):
    """A checkpoint of the wrong kind was supplied (classifier vs generator)."""


class ConfigError(NetinvertError, ValueError):
    """A configuration value is invalid or inconsistent."""


class DivergenceError(NetinvertError, RuntimeError):
    """Training produced a non-finite loss."""


class FrozenParameterError(NetinvertError, RuntimeError):
    """A parameter that was contractually frozen changed during training."""
