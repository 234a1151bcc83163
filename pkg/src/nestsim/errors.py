"""Exception types raised across the package."""


class NestsimError(Exception):
    pass


class ParameterDomainError(NestsimError, ValueError):
    """Model parameters outside their admissible domain."""


class GridError(NestsimError, ValueError):
    """Risk horizon or maturity does not land on the simulation grid."""


class SupportMismatchError(NestsimError, ValueError):
    """Target measure puts mass where the reference measure has none.

    ``pair`` holds the offending (target, reference) identifiers when known.
    """

    def __init__(self, msg, pair=None):
        super().__init__(msg)
        self.pair = pair


class EmptyReferenceBinError(NestsimError, ValueError):
    pass


class SingularFitError(NestsimError, ValueError):
    def __init__(self, msg, condition_number=float("inf")):
        super().__init__(msg)
        self.condition_number = condition_number


class TooManyBlocksError(NestsimError, ValueError):
    pass


class DegenerateTailError(NestsimError, ValueError):
    pass


class QuadratureError(NestsimError, RuntimeError):
    pass


class ConfigError(NestsimError, ValueError):
    pass
