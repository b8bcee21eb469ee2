"""Exception types raised across the pipeline."""


class TumsegError(Exception):
    pass


class UnknownLabel(TumsegError, ValueError):
    def __init__(self, value, voxel):
        self.value = value
        self.voxel = tuple(int(v) for v in voxel)
        super().__init__(f"unknown label {value!r} at voxel {self.voxel}")


class NoBrainVoxels(TumsegError, ValueError):
    pass


class GridTooSmall(TumsegError, ValueError):
    pass


class GridTooDeep(TumsegError, ValueError):
    pass


class SpecMismatch(TumsegError, ValueError):
    pass


class NonStandardGrid(TumsegError, ValueError):
    pass


class IncompleteStack(TumsegError, ValueError):
    pass


class ShapeMismatch(TumsegError, ValueError):
    pass


class StaleCache(TumsegError, ValueError):
    pass


class EmptyDataset(TumsegError, ValueError):
    pass


class TooFewSubjects(TumsegError, ValueError):
    pass


class EmptyModelSet(TumsegError, ValueError):
    pass


class EmptyList(TumsegError, ValueError):
    pass


class LengthMismatch(TumsegError, ValueError):
    pass


class TooFewSamples(TumsegError, ValueError):
    pass


class BadMagic(TumsegError, ValueError):
    pass


class UnsupportedDatatype(TumsegError, ValueError):
    pass


class TruncatedFile(TumsegError, ValueError):
    pass


class IoFailure(TumsegError, OSError):
    pass


class SpecInvalid(TumsegError, ValueError):
    pass


class ConfigError(TumsegError, ValueError):
    pass
