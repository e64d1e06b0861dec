"""Exception hierarchy shared by all polyvem modules."""


class PolyVemError(Exception):
    """Base class for all errors raised by polyvem."""


class MeshError(PolyVemError):
    pass


class NonManifoldEdge(MeshError):
    pass


class OpenCell(MeshError):
    pass


class Degenerate(MeshError):
    pass


class NotStarShaped(MeshError):
    pass


class OutsideDomain(PolyVemError):
    pass


class BadParams(PolyVemError, ValueError):
    pass


class UnsupportedDegree(PolyVemError, ValueError):
    pass


class SingularLocalSystem(PolyVemError):
    pass


class SingularWeightedMass(PolyVemError):
    pass


class IncompatibleQ(PolyVemError, ValueError):
    pass


class SingularSystem(PolyVemError):
    pass


class NotNested(PolyVemError):
    pass


class NotSPD(PolyVemError):
    pass


class ZeroNoise(PolyVemError):
    pass


class PointOutside(OutsideDomain):
    pass
