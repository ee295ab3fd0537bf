"""Exception hierarchy shared across the package."""


class MosumError(Exception):
    """Base class for numerical failures raised by mosumseg."""


class DomainError(MosumError, ValueError):
    """An argument lies outside the domain of a formula (e.g. non-positive intensity)."""


class SingularFit(MosumError):
    """The estimating equations have no unique solution on the given window."""


class NonConvergence(MosumError):
    """An iterative fitter stopped before meeting its tolerance.

    Attributes
    ----------
    theta : numpy.ndarray
        Best iterate found.
    residual : float
        Norm of the score sum at ``theta``.
    """

    def __init__(self, message, theta=None, residual=float("nan")):
        super().__init__(message)
        self.theta = theta
        self.residual = residual


class SingularScaling(MosumError):
    """A covariance scaling matrix is not positive definite.

    ``index`` is the position of the first offending matrix in a batch, if known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ScanFailure(MosumError):
    """Too many window fits failed for a MOSUM-Wald scan to be meaningful."""
