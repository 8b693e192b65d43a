"""Exception types shared across the pipeline."""


class DataError(ValueError):
    """Input data violates the documented schema or a dataset invariant."""


class FormatError(DataError):
    """A file is not in the expected on-disk format."""


class SchemaMismatchError(ValueError):
    """Features supplied at prediction time do not match the trained schema."""


class ConfigError(ValueError):
    """A run configuration is malformed or contains unknown keys."""
