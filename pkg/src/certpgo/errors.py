class CertPGOError(Exception):
    """Base class for all package errors."""


class NodeNotFound(CertPGOError, KeyError):
    pass


class InvalidGraph(CertPGOError, ValueError):
    pass


class DimensionMismatch(CertPGOError, ValueError):
    pass


class ParseError(CertPGOError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class IncompleteSolution(CertPGOError, ValueError):
    pass


class InvalidTrajectory(CertPGOError, ValueError):
    pass


class SpecError(CertPGOError, ValueError):
    pass


class RankLimitReached(CertPGOError, RuntimeError):
    pass


class StationarityViolation(CertPGOError, ValueError):
    pass


class DegenerateSolution(CertPGOError, ValueError):
    pass


class InsufficientMatches(CertPGOError, ValueError):
    pass


class KeyMismatch(CertPGOError, KeyError):
    pass
