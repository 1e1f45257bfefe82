"""Exception hierarchy shared by all modules."""


class QMonitorError(Exception):
    """Base class for every error raised by this package."""


class InvalidOperator(QMonitorError, ValueError):
    """An operator violates the invariants of its declared type."""


class DimensionMismatch(QMonitorError, ValueError):
    """Operands live on Hilbert spaces of different dimension."""


class ImpossibleOutcome(QMonitorError, ValueError):
    """Conditioning on an outcome whose probability is (numerically) zero."""


class BiasedEffectSet(QMonitorError, ValueError):
    """The effect set does not resolve the identity, so a result is not guaranteed."""


class NumericalGuardError(QMonitorError, ArithmeticError):
    """A numerical guard tripped: step too large, trace drift, non-finite values."""


class ConfigError(QMonitorError, ValueError):
    """A scenario configuration is malformed."""
