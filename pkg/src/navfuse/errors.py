"""Exception types raised across the package."""


class NavfuseError(Exception):
    """Base class for all domain errors."""


class DegeneratePolyline(NavfuseError):
    pass


class EmptyRoute(NavfuseError):
    pass


class UndefinedGradient(NavfuseError):
    pass


class InsufficientTrack(NavfuseError):
    pass


class NoValidSteps(NavfuseError):
    pass


class TooFewRouteTokens(NavfuseError):
    pass


class NonFiniteActivation(NavfuseError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite activation in layer '{layer}'")
        self.layer = layer


class DivergedTraining(NavfuseError):
    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


class InfeasibleLayout(NavfuseError):
    pass


class BadRatios(NavfuseError):
    pass


class InvalidConfig(NavfuseError):
    pass


class CheckpointError(NavfuseError):
    pass
