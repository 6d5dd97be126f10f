"""Exception hierarchy shared across the docking stack."""


class VsDockError(Exception):
    """Base class for all library errors."""


class NonPositiveDepth(VsDockError, ValueError):
    pass


class DepthUnderflow(VsDockError, ArithmeticError):
    pass


class DimensionMismatch(VsDockError, ValueError):
    pass


class NonPlanarMount(VsDockError, ValueError):
    pass


class RankDeficient(VsDockError, ArithmeticError):
    pass


class TrackingLost(VsDockError):
    pass


class NoConsistentAssignment(VsDockError):
    pass


class DegenerateConfiguration(VsDockError, ValueError):
    pass


class BehindCamera(VsDockError, ValueError):
    pass


class MarkerBehindCamera(BehindCamera):
    pass


class Infeasible(VsDockError):
    pass


class TrialAborted(VsDockError):
    def __init__(self, message, trial_id=None):
        super().__init__(message if trial_id is None else f"[{trial_id}] {message}")
        self.trial_id = trial_id


class EmptyLog(VsDockError, ValueError):
    pass


class MissingFeatures(VsDockError, ValueError):
    pass


class InsufficientData(VsDockError, ValueError):
    pass
