"""Exception types shared across the package."""


class GibbsQuantError(Exception):
    """Base class for package-specific failures."""


class SingularityError(GibbsQuantError):
    """Evaluation point coincides with a data point where the loss is not differentiable."""


class SingularMatrixError(GibbsQuantError):
    """A matrix that must be inverted is numerically singular."""


class DegenerateDrawsError(GibbsQuantError):
    """Posterior draws are too degenerate to support a credible ellipse."""


class InsufficientDataError(GibbsQuantError):
    """Not enough observations for the requested fit."""


class ConfigError(GibbsQuantError):
    """Invalid configuration file, option value, or option combination."""


class DataFileError(GibbsQuantError):
    """Unreadable or malformed data file."""
