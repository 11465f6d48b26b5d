"""Exception hierarchy.

Every failure the library raises on purpose derives from ``LinsysidError``
so the CLI can map it to exit code 1 without swallowing programming errors.
"""


class LinsysidError(Exception):
    pass


class NonSymmetric(LinsysidError, ValueError):
    pass


class NoConvergence(LinsysidError, RuntimeError):
    pass


class NotPositiveDefinite(LinsysidError, ValueError):
    pass


class NoFeasibleK(LinsysidError, ValueError):
    """No block length satisfies the burn-in condition (horizon too short)."""


class OverflowedTrajectory(LinsysidError, ValueError):
    pass


class SingularDesign(LinsysidError, ValueError):
    pass


class InfeasibleHorizon(LinsysidError, ValueError):
    pass


class MissingInputModel(LinsysidError, ValueError):
    pass


class EpsTooLarge(LinsysidError, ValueError):
    pass


class NuOutOfRange(LinsysidError, ValueError):
    pass


class PackingStalled(LinsysidError, RuntimeError):
    pass


class SeparationViolated(LinsysidError, RuntimeError):
    """A packing failed its certificate. Signals a numerics bug, not bad input."""


class Epsilon0TooLarge(LinsysidError, ValueError):
    pass


class NotOrthogonal(LinsysidError, ValueError):
    pass


class DegenerateGrid(LinsysidError, ValueError):
    pass


class ConfigError(LinsysidError, ValueError):
    pass
