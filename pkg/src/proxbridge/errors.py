class ConfigurationError(ValueError):
    """Invalid combination of estimator settings or incompatible inputs."""


class BridgeExistenceError(ValueError):
    """Proxy matrices are rank deficient, so a bridge function is not guaranteed to exist."""


class ConditioningError(ArithmeticError):
    """A matrix that should be positive (semi)definite is numerically indefinite."""
