"""Exception hierarchy shared across the package."""


class PcDefectError(Exception):
    """Base class for all package errors."""


class InvalidCloud(PcDefectError, ValueError):
    pass


class BadCount(PcDefectError, ValueError):
    pass


class DegenerateNeighborhood(PcDefectError):
    pass


class ParseError(PcDefectError):
    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.line = line
        self.offset = offset


class MissingProperty(PcDefectError):
    pass


class Unreachable(PcDefectError):
    pass


class NoFeasibleAnchor(PcDefectError):
    pass


class ZeroNormal(PcDefectError):
    pass


class DegeneratePair(PcDefectError, ValueError):
    pass


class EmptyTrainingSet(PcDefectError, ValueError):
    pass


class DimMismatch(PcDefectError, ValueError):
    pass


class VersionMismatch(PcDefectError):
    pass


class ChecksumError(PcDefectError):
    pass


class DegenerateLabels(PcDefectError, ValueError):
    pass
