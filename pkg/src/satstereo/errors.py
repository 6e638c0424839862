"""Exception hierarchy and warning categories."""


class SatStereoError(Exception):
    """Base class for all errors raised by this package."""


class RpcDomainWarning(UserWarning):
    """Emitted when a query point falls outside the RPC validity domain."""


class SingularProjectionError(SatStereoError):
    """RPC denominator vanished at the query point."""


class NonConvergenceError(SatStereoError):
    """Iterative solve failed to converge; carries the last residual."""

    def __init__(self, message, last_residual=None):
        super().__init__(message)
        self.last_residual = last_residual


class DegenerateGeometryError(SatStereoError):
    """Ray geometry too weak to solve (parallel/identical rays)."""


class RectificationError(SatStereoError):
    """Stereo rectification could not be constructed."""


class EmptyOverlapError(RectificationError):
    """Requested region does not intersect both image footprints."""


class InsufficientDataError(SatStereoError):
    """Not enough observations to run the estimator."""


class TexturelessPatchError(SatStereoError):
    """Image patch has too little contrast for least-squares matching."""


class MatchFileError(SatStereoError):
    """Malformed match file; carries the offending line number."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class UndefinedMetricError(SatStereoError):
    """Metric has no defined value for the given inputs."""


class CoregistrationError(SatStereoError):
    """Surface co-registration failed; carries the last iterate."""

    def __init__(self, message, last_shift=None):
        super().__init__(message)
        self.last_shift = last_shift
