"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Unknown, malformed, or out-of-range configuration entry."""


class DegenerateGeometryError(ValueError):
    """Vehicle placed exactly on an RSU antenna; the path-loss model diverges."""


class AllocationError(RuntimeError):
    """A hosted vehicle received a zero computing share, which the action
    decoder is supposed to make impossible."""


class EpisodeOverError(RuntimeError):
    """step() called after the final slot of an episode."""


class DivergenceError(ArithmeticError):
    """Non-finite value produced during training or sampling."""


class UnknownEntityError(KeyError):
    """Reference to a user, vehicle, or RSU index that does not exist."""
