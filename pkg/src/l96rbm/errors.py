"""Exception hierarchy shared by the library and the CLI."""


class L96RBMError(Exception):
    """Base class for all library errors."""


class ConfigError(L96RBMError, ValueError):
    """Invalid parameters or configuration file."""


class StateError(L96RBMError, ValueError):
    """A state object violates one of its invariants."""


class ShapeError(StateError):
    """Array dimensions do not match the model grid."""


class AlignmentError(L96RBMError, ValueError):
    """Two statistics series share no common record times."""


class DivergenceError(L96RBMError, ArithmeticError):
    """Integration produced non-finite values or a negative variance.

    Attributes
    ----------
    time : float
        Model time at which the blow-up was detected.
    member : int or None
        Ensemble member index when the failure is member-specific.
    """

    def __init__(self, message, time, member=None):
        super().__init__(message)
        self.time = float(time)
        self.member = member
