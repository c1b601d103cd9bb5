"""Exception types shared across the package."""


class QuadraceError(Exception):
    """Base class for all package-specific errors."""


class NearGimbalLock(QuadraceError):
    """Pitch angle too close to +-pi/2 for the Euler-rate matrix."""


class NonFiniteState(QuadraceError):
    """Numerical integration produced NaN/Inf state entries."""


class AlreadyDone(QuadraceError):
    """An episode was stepped after it terminated."""


class InvalidScheme(QuadraceError):
    """A randomization scheme cannot produce a valid parameter set."""


class RankDeficient(QuadraceError):
    """Regression data does not excite all unknowns."""


class InsufficientExcitation(QuadraceError):
    """Motor-command log does not cover enough of the command range."""


class CorruptCheckpoint(QuadraceError):
    """Checkpoint files disagree with the expected shapes/fields."""


class NonFiniteLoss(QuadraceError):
    """PPO loss became NaN/Inf; parameters were left unchanged."""
