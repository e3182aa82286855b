"""Exception types shared across the package.

CLI exit codes map onto these: usage/config problems exit 1, data/format
problems exit 2, numerical failures exit 3.
"""


class ShapeError(ValueError):
    """Tensor or image dimensions violate an operation's contract."""


class ConfigError(ValueError):
    """Invalid configuration value (bad rate, bad spec field, bad flag)."""


class UsageError(ValueError):
    """Operation called in a way its contract forbids (empty batch, non-scalar backward, ...)."""


class FormatError(ValueError):
    """Malformed file: PGM header, weight file, manifest line."""


class LoadError(ValueError):
    """Strict weight loading failed; message lists the offending names."""


class RecipeError(ValueError):
    """Augmentation recipe violates its invariants (crop outside bounds)."""


class NumericalError(RuntimeError):
    """Training diverged (NaN loss); message names the offending batch."""
