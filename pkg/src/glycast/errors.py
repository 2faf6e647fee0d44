"""Exception types shared across the package."""


class GlycastError(ValueError):
    """Base class for all domain errors raised by glycast."""


class SchemaError(GlycastError):
    """Input file or dataset does not match the expected schema."""


class ParseError(GlycastError):
    """A cell could not be parsed into its declared type."""


class GridError(GlycastError):
    """Time series violates the 15-minute grid contract."""


class RangeError(GlycastError):
    """A value lies outside its physiologic or declared range."""


class FoodLookupError(GlycastError):
    """A food description matched no glycemic-table pattern."""


class ImputationError(GlycastError):
    """A feature has no donor values to impute from."""


class EncodingError(GlycastError):
    """A feature cannot be standardized or discretized."""


class InferenceError(GlycastError):
    """Evidence is contradictory or out of the model's domain."""


class CapacityError(GlycastError):
    """A size guard or count precondition was exceeded."""


class NumericalError(GlycastError):
    """A numeric routine produced a non-finite intermediate."""


class ConfigError(GlycastError):
    """A run configuration is invalid or incomplete."""
