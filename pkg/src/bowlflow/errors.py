"""Exception hierarchy shared by all bowlflow modules."""


class BowlflowError(Exception):
    """Base class for all errors raised by this package."""


class ProfileError(BowlflowError):
    """Soliton / correction profile construction or evaluation failed."""


class FrameError(BowlflowError):
    """Coordinate transform between frames is undefined for the input."""


class BarrierError(BowlflowError):
    """Barrier constant derivation or certification failed."""


class InitialDataError(BowlflowError):
    """Initial hypersurface construction or admissibility check failed."""


class EvolutionError(BowlflowError):
    """Time integration of the rescaled flow failed or violated an invariant."""


class FitError(BowlflowError):
    """A diagnostic fit has too little or unusable data."""


class ConfigError(BowlflowError):
    """Run configuration is invalid."""
