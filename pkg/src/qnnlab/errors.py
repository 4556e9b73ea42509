"""Exception types raised across qnnlab."""


class QnnlabError(Exception):
    """Base class for all qnnlab errors."""


class CapacityError(QnnlabError, ValueError):
    pass


class BoundsError(QnnlabError, IndexError):
    pass


class ShapeError(QnnlabError, ValueError):
    pass


class NumericalIntegrityError(QnnlabError, ArithmeticError):
    pass


class PhysicalityError(QnnlabError, ValueError):
    pass


class SchemaError(QnnlabError, ValueError):
    pass


class ConnectivityError(QnnlabError, ValueError):
    pass


class DomainError(QnnlabError, ValueError):
    pass


class NormalizationError(DomainError):
    pass


class EncodingError(QnnlabError, ValueError):
    pass


class ParseError(QnnlabError, ValueError):
    pass


class ConsistencyError(ParseError):
    pass


class UnsupportedModeError(QnnlabError, RuntimeError):
    pass


class IntegrityError(QnnlabError, RuntimeError):
    """Checksum or manifest validation failure."""
