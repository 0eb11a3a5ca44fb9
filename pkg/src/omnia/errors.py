"""Exception hierarchy shared by all omnia modules."""


class OmniaError(Exception):
    """Base class for every error raised by this package."""


class ParseError(OmniaError):
    """Malformed input file (bad JSON, missing keys, wrong types)."""


class IntegrityError(OmniaError):
    """Referential integrity violation (dangling ids, duplicate names)."""


class GeometryError(OmniaError):
    """Invalid box geometry (non-positive width/height, non-finite coords)."""


class ConfigError(OmniaError):
    """Invalid configuration value."""


class TaxonomyMismatchError(OmniaError):
    """Two datasets/detection sets built against different taxonomies."""
