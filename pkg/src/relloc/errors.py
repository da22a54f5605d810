"""Exception hierarchy shared by all relloc modules."""


class RellocError(Exception):
    """Base class for every error raised by the library."""


# geometry
class DegenerateAngle(RellocError):
    """Two bearings are parallel or anti-parallel so the angle sign is undefined."""


class CoplanarConfiguration(RellocError):
    pass


class CollinearProjection(RellocError):
    pass


class MissingReading(RellocError):
    pass


class TriangleInequalityViolation(RellocError):
    pass


class HeightExceedsDistance(RellocError):
    pass


class DegenerateGeometry(RellocError):
    pass


# topology
class NoPathBetweenRobots(RellocError):
    pass


class InsufficientTopology(RellocError):
    pass


# linear localizer
class AssumptionViolated(RellocError):
    pass


class SingularNormalEquations(RellocError):
    pass


# optimisation
class NoProgress(RellocError):
    """Trust region collapsed below the minimum radius."""


SolverNoProgress = NoProgress


class RetractUndefined(RellocError):
    pass


# wtls
class ZeroLastComponent(RellocError):
    pass


class RepeatedSmallestSingularValue(RellocError):
    pass


# nde
class Diverged(RellocError):
    pass


class DegenerateScene(RellocError):
    pass


# map / marginalisation
class SingularMarginalBlock(RellocError):
    pass


# robust
class Inoperable(RellocError):
    pass


# simulator
class ExcitationFailure(RellocError):
    pass


class FilterDiverged(RellocError):
    pass


class ConfigError(RellocError):
    pass
